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

// Loss, metric, optimizer, schedule and the training loop.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rtf/data.hpp"
#include "rtf/model.hpp"

namespace rtf::train {

using ad::Tape;
using ad::Var;

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// logits: [n, C, H, W]; labels: n*H*W in NHW order.
Var cross_entropy(Var logits, std::span<const std::int32_t> labels,
                  std::int32_t ignore_index = data::kIgnoreIndex);

/// Per-pixel argmax over channels, NHW order.
std::vector<std::int32_t> argmax_channels(const ad::TensorD& logits);

struct Confusion {
  explicit Confusion(std::int32_t num_classes);
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> label,
           std::int32_t ignore_index = data::kIgnoreIndex);
  std::int32_t classes;
  std::vector<std::int64_t> counts;  // [label][pred]
};

struct IoU {
  /// NaN for classes absent from both prediction and label.
  std::vector<double> per_class;
  double mean = 0;
};
IoU miou(const Confusion& c);
IoU miou(std::span<const std::int32_t> pred, std::span<const std::int32_t> label,
         std::int32_t num_classes, std::int32_t ignore_index = data::kIgnoreIndex);

struct AdamWOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0125;
};

class AdamW {
 public:
  explicit AdamW(const AdamWOptions& o = {}) : opt_(o) {}
  /// One update of every parameter from its .grad.
  void step(std::span<ad::Parameter* const> params, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamWOptions opt_;
  std::int64_t t_ = 0;
  std::vector<ad::TensorD> m_, v_;
};

/// base * (1 - iter/max_iters)^power.
double poly_lr(std::int64_t iter, std::int64_t max_iters, double base_lr, double power = 0.9);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm);

struct TrainConfig {
  double base_lr = 0.001;
  double weight_decay = 0.0125;
  double power = 0.9;
  double clip_norm = 10.0;
  std::int64_t max_iters = 2000;
  std::int64_t batch = 16;
  std::uint64_t seed = 0;
  std::int64_t image_size = 64;
  std::int64_t eval_interval = 100;
  std::int64_t eval_count = 64;
  std::string metrics_path;     // empty: no CSV
  std::string checkpoint_path;  // empty: no checkpoint
  void validate() const;
};

struct MetricRow {
  std::int64_t iter = 0;
  double lr = 0, loss = 0;
  double miou = -1;  // < 0 when not evaluated at this iteration
};

struct TrainResult {
  std::vector<MetricRow> rows;
  double final_miou = 0;
};

/// Seed of the held-out split, derived from the training seed.
std::uint64_t heldout_seed(std::uint64_t seed);

/// Eval-mode mIoU of a model on `count` held-out samples.
double evaluate(const model::Model& m, std::uint64_t seed, std::int64_t count,
                std::int64_t image_size);

/// Trains in place. The model's class count sets the data's class count.
TrainResult train(model::Model& m, const TrainConfig& cfg, std::ostream* log = nullptr);

std::string metrics_header();
std::string format_metric(const MetricRow& r);

}  // namespace rtf::train
