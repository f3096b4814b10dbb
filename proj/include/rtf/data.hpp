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

// Synthetic segmentation data: flat-colored rectangles and circles on a
// gray background with Gaussian pixel noise. Every sample is a pure function
// of (seed, index).

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rtf/tensor.hpp"

namespace rtf::data {

inline constexpr std::int32_t kIgnoreIndex = 255;
inline constexpr double kNoiseSigma = 0.05;

struct SyntheticSample {
  Tensor<double> image;              // [3, H, W], values in [0, 1]
  std::vector<std::int32_t> label;   // H * W, row-major
  std::int64_t height = 0, width = 0;
};

/// Fixed color of a class; class 0 is the background.
std::array<double, 3> class_color(std::int32_t cls, std::int32_t num_classes);

SyntheticSample generate_sample(std::uint64_t seed, std::int64_t index, std::int32_t num_classes,
                                std::int64_t height, std::int64_t width);
std::vector<SyntheticSample> generate_dataset(std::uint64_t seed, std::int64_t count,
                                              std::int32_t num_classes, std::int64_t height,
                                              std::int64_t width, std::int64_t first_index = 0);

/// Stacks samples into an NCHW image batch and a flat label vector.
Tensor<double> stack_images(const std::vector<SyntheticSample>& samples);
std::vector<std::int32_t> stack_labels(const std::vector<SyntheticSample>& samples);

/// Binary P6 image and P5 label map (labels scaled to spread the gray range).
void write_ppm(const std::string& path, const SyntheticSample& s);
void write_pgm(const std::string& path, const SyntheticSample& s, std::int32_t num_classes);

}  // namespace rtf::data
