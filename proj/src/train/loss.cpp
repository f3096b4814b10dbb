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

#include <cmath>
#include <limits>

#include "rtf/train.hpp"

namespace rtf::train {

Var cross_entropy(Var logits, std::span<const std::int32_t> labels, std::int32_t ignore) {
  const auto& x = logits.value();
  if (x.rank() != 4) throw ShapeError("cross_entropy expects [n, C, H, W] logits");
  const std::int64_t n = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != n * HW)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(x.shape()));
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::int64_t valid = 0;
  for (std::int32_t l : lab) {
    if (l == ignore) continue;
    if (l < 0 || l >= C)
      throw ShapeError("label " + std::to_string(l) + " outside [0, " + std::to_string(C) + ")");
    ++valid;
  }
  if (valid == 0) throw NumericError("cross_entropy: every pixel is ignored");

  double total = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      const std::int32_t l = lab[b * HW + p];
      if (l == ignore) continue;
      const double* base = x.raw() + b * C * HW + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, base[c * HW]);
      double s = 0;
      for (std::int64_t c = 0; c < C; ++c) s += std::exp(base[c * HW] - mx);
      total += mx + std::log(s) - base[l * HW];
    }
  const double count = static_cast<double>(valid);
  return logits.tape->push(
      ad::TensorD(Shape{1}, total / count), {logits},
      [logits, lab = std::move(lab), ignore, n, C, HW, count](Tape& t, const ad::TensorD&,
                                                             const ad::TensorD& g) {
        const auto& x = t.value(logits);
        ad::TensorD dx(x.shape());
        const double scale = g[0] / count;
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t p = 0; p < HW; ++p) {
            const std::int32_t l = lab[b * HW + p];
            if (l == ignore) continue;
            const std::int64_t off = b * C * HW + p;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, x[off + c * HW]);
            double s = 0;
            for (std::int64_t c = 0; c < C; ++c) s += std::exp(x[off + c * HW] - mx);
            for (std::int64_t c = 0; c < C; ++c)
              dx[off + c * HW] = scale * (std::exp(x[off + c * HW] - mx) / s - (c == l ? 1 : 0));
          }
        t.accumulate(logits, std::move(dx));
      },
      "cross_entropy");
}

std::vector<std::int32_t> argmax_channels(const ad::TensorD& x) {
  if (x.rank() != 4) throw ShapeError("argmax_channels expects [n, C, H, W]");
  const std::int64_t n = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<std::int32_t> out(static_cast<std::size_t>(n * HW));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      std::int32_t best = 0;
      for (std::int64_t c = 1; c < C; ++c)
        if (x[(b * C + c) * HW + p] > x[(b * C + best) * HW + p]) best = static_cast<std::int32_t>(c);
      out[b * HW + p] = best;
    }
  return out;
}

Confusion::Confusion(std::int32_t num_classes)
    : classes(num_classes), counts(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs >= 1 class");
}

void Confusion::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> label,
                    std::int32_t ignore) {
  if (pred.size() != label.size()) throw ShapeError("prediction and label sizes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (label[i] == ignore) continue;
    if (label[i] < 0 || label[i] >= classes || pred[i] < 0 || pred[i] >= classes)
      throw ShapeError("class id out of range in miou");
    ++counts[static_cast<std::size_t>(label[i] * classes + pred[i])];
  }
}

IoU miou(const Confusion& c) {
  IoU r;
  const std::int32_t K = c.classes;
  double sum = 0;
  int present = 0;
  for (std::int32_t k = 0; k < K; ++k) {
    std::int64_t tp = c.counts[k * K + k], fp = 0, fn = 0;
    for (std::int32_t j = 0; j < K; ++j) {
      if (j == k) continue;
      fn += c.counts[k * K + j];
      fp += c.counts[j * K + k];
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class.push_back(iou);
    sum += iou;
    ++present;
  }
  r.mean = present ? sum / present : 0.0;
  return r;
}

IoU miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> label,
         std::int32_t num_classes, std::int32_t ignore) {
  Confusion c(num_classes);
  c.add(pred, label, ignore);
  return miou(c);
}

}  // namespace rtf::train
