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

// Flat tensor format: "RTFT", u8 dtype tag, u8 rank, rank x u64 dims, then
// the scalars. Everything is little-endian regardless of host order.

#pragma once

#include <iosfwd>
#include <string>
#include <variant>

#include "rtf/tensor.hpp"

namespace rtf {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

/// Reads one tensor of whatever dtype the stream holds.
AnyTensor read_any_tensor(std::istream& in);

/// Reads one tensor, converting to T if the stored dtype differs.
template <typename T>
Tensor<T> read_tensor(std::istream& in);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

}  // namespace rtf
