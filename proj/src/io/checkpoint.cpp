// Copyright 2026 The rtformer-cpu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rtf/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "rtf/serialize.hpp"

namespace rtf {
namespace {

std::string dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

struct Entry {
  std::string name;
  ad::TensorD* value;
};

std::vector<Entry> entries(nn::Registry& reg) {
  std::vector<Entry> out;
  for (auto* p : reg.parameters()) out.push_back({p->name, &p->value});
  for (auto* b : reg.buffers()) out.push_back({b->name, &b->value});
  return out;
}

}  // namespace

std::string manifest_path(const std::string& checkpoint) { return checkpoint + ".manifest"; }

void save_checkpoint(nn::Registry& reg, const std::string& path) {
  std::ofstream data(path, std::ios::binary);
  std::ofstream man(manifest_path(path));
  if (!data || !man) throw FormatError("cannot write checkpoint " + path);
  for (const auto& e : entries(reg)) {
    write_tensor(data, *e.value);
    man << e.name << " " << dims(e.value->shape()) << "\n";
  }
  if (!data || !man) throw FormatError("failed writing checkpoint " + path);
}

void load_checkpoint(nn::Registry& reg, const std::string& path) {
  std::ifstream data(path, std::ios::binary);
  std::ifstream man(manifest_path(path));
  if (!data) throw FormatError("cannot open checkpoint " + path);
  if (!man) throw FormatError("cannot open manifest " + manifest_path(path));
  const auto want = entries(reg);
  std::vector<ad::TensorD> loaded;
  std::string line;
  std::size_t i = 0;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape;
    ls >> name >> shape;
    if (i >= want.size() || name != want[i].name)
      throw FormatError("checkpoint entry " + std::to_string(i) + " is '" + name +
                        "', model expects '" + (i < want.size() ? want[i].name : "<end>") + "'");
    auto t = read_tensor<double>(data);
    if (dims(t.shape()) != shape || t.shape() != want[i].value->shape())
      throw FormatError("checkpoint tensor " + name + " has shape " + dims(t.shape()) +
                        ", model expects " + dims(want[i].value->shape()));
    loaded.push_back(std::move(t));
    ++i;
  }
  if (i != want.size())
    throw FormatError("checkpoint has " + std::to_string(i) + " tensors, model expects " +
                      std::to_string(want.size()));
  data.peek();
  if (!data.eof()) throw FormatError("trailing bytes in checkpoint " + path);
  for (std::size_t k = 0; k < want.size(); ++k) *want[k].value = std::move(loaded[k]);
}

}  // namespace rtf
