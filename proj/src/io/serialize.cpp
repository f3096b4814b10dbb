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

#include "rtf/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace rtf {
namespace {

constexpr char kMagic[4] = {'R', 'T', 'F', 'T'};

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw FormatError("truncated tensor stream");
  return to_le(v);
}

template <typename T>
Tensor<T> read_body(std::istream& in, const Shape& shape) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!in) throw FormatError("truncated tensor data");
  } else {
    for (auto& v : data) v = get<T>(in);
  }
  return Tensor<T>(shape, std::move(data));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  if (t.empty()) throw ShapeError("cannot serialize an empty tensor");
  out.write(kMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.raw()),
              static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.data()) put<T>(out, v);
  }
  if (!out) throw FormatError("failed writing tensor");
}

AnyTensor read_any_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
  const auto tag = get<std::uint8_t>(in);
  const auto rank = get<std::uint8_t>(in);
  if (rank < 1 || rank > 4) throw FormatError("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    const auto v = get<std::uint64_t>(in);
    if (v < 1 || v > (1ULL << 40)) throw FormatError("bad tensor dimension");
    d = static_cast<std::int64_t>(v);
  }
  if (tag == static_cast<std::uint8_t>(DType::f32)) return read_body<float>(in, shape);
  if (tag == static_cast<std::uint8_t>(DType::f64)) return read_body<double>(in, shape);
  throw FormatError("unknown dtype tag " + std::to_string(tag));
}

template <typename T>
Tensor<T> read_tensor(std::istream& in) {
  return std::visit([](auto&& t) { return cast<T>(t); }, read_any_tensor(in));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_tensor(out, t);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_tensor<T>(in);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::string&, const Tensor<float>&);
template void save_tensor(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::string&);
template Tensor<double> load_tensor(const std::string&);

}  // namespace rtf
