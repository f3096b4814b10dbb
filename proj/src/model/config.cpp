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

#include <charconv>
#include <fstream>
#include <sstream>

#include "rtf/model.hpp"

namespace rtf::model {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

/// "a/b" is high/low; a single value fills both.
Dual parse_dual(const std::string& key, const std::string& v) {
  const auto parts = split(v, '/');
  if (parts.size() == 1) {
    const auto x = parse_int(key, parts[0]);
    return {x, x};
  }
  if (parts.size() != 2) throw ConfigError(key + ": expected 'high/low', got '" + v + "'");
  return {parse_int(key, parts[0]), parse_int(key, parts[1])};
}

std::array<Dual, 5> parse_stages(const std::string& key, const std::string& v, bool single12) {
  const auto parts = split(v, ',');
  if (parts.size() != 5)
    throw ConfigError(key + ": expected 5 comma-separated stage entries, got '" + v + "'");
  std::array<Dual, 5> out{};
  for (std::size_t i = 0; i < 5; ++i) {
    out[i] = parse_dual(key, parts[i]);
    if (i < 2 && single12) {
      if (parts[i].find('/') != std::string::npos)
        throw ConfigError(key + ": stage " + std::to_string(i + 1) + " has a single branch");
      out[i].low = 0;
    }
  }
  return out;
}

std::string format_stages(const std::array<Dual, 5>& s) {
  std::string out;
  for (std::size_t i = 0; i < 5; ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i].high);
    if (i >= 2 && s[i].low != s[i].high) out += "/" + std::to_string(s[i].low);
  }
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

ModelConfig slim() {
  ModelConfig c;
  c.name = "slim";
  c.channels = {{{32, 0}, {64, 0}, {64, 128}, {64, 256}, {64, 256}}};
  c.blocks = {{{2, 0}, {2, 0}, {1, 2}, {1, 1}, {1, 1}}};
  c.cross_side = 8;
  return c;
}

ModelConfig base() {
  ModelConfig c;
  c.name = "base";
  c.channels = {{{64, 0}, {128, 0}, {128, 256}, {128, 512}, {128, 512}}};
  c.blocks = {{{2, 0}, {2, 0}, {1, 2}, {1, 1}, {1, 1}}};
  c.cross_side = 12;
  return c;
}

ModelConfig tiny() {
  ModelConfig c = slim();
  c.name = "tiny";
  for (auto& d : c.channels) {
    d.high /= 8;
    d.low /= 8;
  }
  c.dappm_width = 16;
  c.num_classes = 4;
  return c;
}

blocks::BlockConfig ModelConfig::block_config() const {
  blocks::BlockConfig b;
  b.d_h = channels[3].high;
  b.d_l = channels[3].low;
  b.low_attn = low_attn;
  b.high_attn = high_attn;
  b.groups_low = groups.low;
  b.groups_high = groups.high;
  b.heads_low = heads.low;
  b.heads_high = heads.high;
  b.mhea_ratio = mhea_ratio;
  b.sigma_low = sigma.low;
  b.sigma_high = sigma.high;
  b.cross_side = cross_side;
  b.ffn = ffn;
  return b;
}

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string st = "stage " + std::to_string(i + 1);
    require(channels[i].high >= 1, st + ": channel width must be >= 1");
    require(blocks[i].high >= 1, st + ": needs at least one block");
    if (i < 2) {
      require(channels[i].low == 0 && blocks[i].low == 0, st + " has a single branch");
    } else {
      require(channels[i].low >= 1 && blocks[i].low >= 1, st + " needs a low branch");
    }
  }
  require(channels[2].high == channels[3].high && channels[3].high == channels[4].high,
          "high-branch width must be the same in stages 3-5");
  require(channels[3].low == channels[4].low, "stages 4 and 5 must share the low width");
  for (std::size_t i : {3u, 4u})
    require(blocks[i].high == blocks[i].low,
            "stage " + std::to_string(i + 1) + " RTFormer blocks are shared by both branches");
  require(cross_side >= 1, "cross_feature_side must be >= 1");
  require(num_classes >= 1, "num_classes must be >= 1");
  require(in_channels >= 1, "in_channels must be >= 1");
  require(dappm_width >= 1, "dappm_width must be >= 1");
  block_config().validate();
}

void set_option(ModelConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "name") c.name = v;
  else if (key == "channels") c.channels = parse_stages(key, v, true);
  else if (key == "blocks") c.blocks = parse_stages(key, v, true);
  else if (key == "cross_feature_side") c.cross_side = parse_int(key, v);
  else if (key == "num_classes") c.num_classes = parse_int(key, v);
  else if (key == "in_channels") c.in_channels = parse_int(key, v);
  else if (key == "dappm_width") c.dappm_width = parse_int(key, v);
  else if (key == "ffn") c.ffn = blocks::parse_ffn(v);
  else if (key == "attention") {
    // Table-style shorthand: one kind for both branches, or "low+high".
    const auto plus = v.find('+');
    if (plus == std::string::npos) {
      c.low_attn = c.high_attn = blocks::parse_attn(v);
    } else {
      c.low_attn = blocks::parse_attn(trim(v.substr(0, plus)));
      c.high_attn = blocks::parse_attn(trim(v.substr(plus + 1)));
    }
  }
  else if (key == "attention_low") c.low_attn = blocks::parse_attn(v);
  else if (key == "attention_high") c.high_attn = blocks::parse_attn(v);
  else if (key == "groups_low") c.groups.low = parse_int(key, v);
  else if (key == "groups_high") c.groups.high = parse_int(key, v);
  else if (key == "heads_low") c.heads.low = parse_int(key, v);
  else if (key == "heads_high") c.heads.high = parse_int(key, v);
  else if (key == "sigma_low") c.sigma.low = parse_int(key, v);
  else if (key == "sigma_high") c.sigma.high = parse_int(key, v);
  else if (key == "mhea_ratio") c.mhea_ratio = parse_double(key, v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, v));
  else throw ConfigError("unknown config key '" + key + "'");
}

ModelConfig parse_config(std::istream& in, const std::string& source) {
  ModelConfig c = slim();
  c.name = "custom";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      const std::string key = trim(line.substr(0, eq));
      if (key == "preset") {
        const std::string keep = c.name;
        c = load_config(trim(line.substr(eq + 1)));
        if (keep != "custom") c.name = keep;
        continue;
      }
      set_option(c, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

ModelConfig load_config(const std::string& name) {
  if (name == "slim") return slim();
  if (name == "base") return base();
  if (name == "tiny") return tiny();
  std::ifstream in(name);
  if (!in) throw ConfigError("no preset or readable config file named '" + name + "'");
  return parse_config(in, name);
}

std::string format_config(const ModelConfig& c) {
  std::ostringstream o;
  o << "name = " << c.name << "\n"
    << "channels = " << format_stages(c.channels) << "\n"
    << "blocks = " << format_stages(c.blocks) << "\n"
    << "cross_feature_side = " << c.cross_side << "\n"
    << "num_classes = " << c.num_classes << "\n"
    << "in_channels = " << c.in_channels << "\n"
    << "dappm_width = " << c.dappm_width << "\n"
    << "ffn = " << blocks::to_string(c.ffn) << "\n"
    << "attention_low = " << blocks::to_string(c.low_attn) << "\n"
    << "attention_high = " << blocks::to_string(c.high_attn) << "\n"
    << "groups_low = " << c.groups.low << "\n"
    << "groups_high = " << c.groups.high << "\n"
    << "heads_low = " << c.heads.low << "\n"
    << "heads_high = " << c.heads.high << "\n"
    << "sigma_low = " << c.sigma.low << "\n"
    << "sigma_high = " << c.sigma.high << "\n";
  o.precision(17);
  o << "mhea_ratio = " << c.mhea_ratio << "\n"
    << "seed = " << c.seed << "\n";
  return o.str();
}

}  // namespace rtf::model
