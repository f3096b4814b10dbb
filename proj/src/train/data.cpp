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

#include "rtf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rtf/rng.hpp"

namespace rtf::data {

std::array<double, 3> class_color(std::int32_t cls, std::int32_t num_classes) {
  if (cls == 0) return {0.5, 0.5, 0.5};
  // Evenly spaced saturated hues.
  const double h = 6.0 * static_cast<double>(cls - 1) / static_cast<double>(num_classes - 1);
  const double f = h - std::floor(h);
  const double hi = 0.95, lo = 0.05;
  const double up = lo + (hi - lo) * f, down = hi - (hi - lo) * f;
  switch (static_cast<int>(h) % 6) {
    case 0: return {hi, up, lo};
    case 1: return {down, hi, lo};
    case 2: return {lo, hi, up};
    case 3: return {lo, down, hi};
    case 4: return {up, lo, hi};
    default: return {hi, lo, down};
  }
}

SyntheticSample generate_sample(std::uint64_t seed, std::int64_t index, std::int32_t classes,
                                std::int64_t H, std::int64_t W) {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (H < 1 || W < 1) throw ConfigError("synthetic image size must be positive");
  Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(index)));
  SyntheticSample s;
  s.height = H;
  s.width = W;
  s.label.assign(static_cast<std::size_t>(H * W), 0);
  const double side = static_cast<double>(std::min(H, W));
  const auto shapes = 1 + static_cast<int>(rng.below(4));
  for (int k = 0; k < shapes; ++k) {
    const auto cls = static_cast<std::int32_t>(1 + rng.below(static_cast<std::uint64_t>(classes - 1)));
    const bool circle = rng.below(2) == 1;
    const double cy = rng.uniform(0, static_cast<double>(H));
    const double cx = rng.uniform(0, static_cast<double>(W));
    if (circle) {
      const double r = rng.uniform(side / 8, side / 4);
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          if (dy * dy + dx * dx <= r * r) s.label[y * W + x] = cls;
        }
    } else {
      const double hh = rng.uniform(side / 8, side / 4), hw = rng.uniform(side / 8, side / 4);
      // Clipped to the image.
      const auto y0 = std::max<std::int64_t>(0, std::llround(cy - hh));
      const auto y1 = std::min<std::int64_t>(H, std::llround(cy + hh));
      const auto x0 = std::max<std::int64_t>(0, std::llround(cx - hw));
      const auto x1 = std::min<std::int64_t>(W, std::llround(cx + hw));
      for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) s.label[y * W + x] = cls;
    }
  }
  s.image = Tensor<double>(Shape{3, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const auto col = class_color(s.label[y * W + x], classes);
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = col[c] + kNoiseSigma * rng.normal();
        s.image[(c * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  return s;
}

std::vector<SyntheticSample> generate_dataset(std::uint64_t seed, std::int64_t count,
                                              std::int32_t classes, std::int64_t H,
                                              std::int64_t W, std::int64_t first) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(std::max<std::int64_t>(count, 0)));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(generate_sample(seed, first + i, classes, H, W));
  return out;
}

Tensor<double> stack_images(const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  const auto H = samples[0].height, W = samples[0].width;
  Tensor<double> out(Shape{static_cast<std::int64_t>(samples.size()), 3, H, W});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].height != H || samples[i].width != W)
      throw ShapeError("batch samples differ in size");
    std::copy(samples[i].image.data().begin(), samples[i].image.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(i * 3 * H * W));
  }
  return out;
}

std::vector<std::int32_t> stack_labels(const std::vector<SyntheticSample>& samples) {
  std::vector<std::int32_t> out;
  for (const auto& s : samples) out.insert(out.end(), s.label.begin(), s.label.end());
  return out;
}

void write_ppm(const std::string& path, const SyntheticSample& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << s.width << " " << s.height << "\n255\n";
  const auto H = s.height, W = s.width;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        out.put(static_cast<char>(std::lround(255.0 * s.image[(c * H + y) * W + x])));
}

void write_pgm(const std::string& path, const SyntheticSample& s, std::int32_t classes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << s.width << " " << s.height << "\n255\n";
  const int step = classes > 1 ? 255 / (classes - 1) : 0;
  for (std::int32_t v : s.label) out.put(static_cast<char>(v == kIgnoreIndex ? 255 : v * step));
}

}  // namespace rtf::data
