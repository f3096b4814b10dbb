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

// Checkpoints: one file of concatenated tensors (parameters, then buffers,
// in registry order) and a text manifest `<file>.manifest` with one
// `name dims` line per tensor.

#pragma once

#include <string>

#include "rtf/nn.hpp"
#include "rtf/serialize.hpp"

namespace rtf {

std::string manifest_path(const std::string& checkpoint);

void save_checkpoint(nn::Registry& reg, const std::string& path);
/// Restores every parameter and buffer. The manifest must list exactly the
/// registry's tensors with matching shapes.
void load_checkpoint(nn::Registry& reg, const std::string& path);

}  // namespace rtf
