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

#include "rtf/model.hpp"

namespace rtf::model {

using blocks::BasicBlock;
using blocks::Exchange;
using blocks::RTFormerBlock;

bool pool_fits(const PoolSpec& p, std::int64_t h, std::int64_t w) {
  return h + 2 * p.padding >= p.kernel && w + 2 * p.padding >= p.kernel;
}

void check_input_size(std::int64_t h, std::int64_t w) {
  if (h < kInputMultiple || w < kInputMultiple || h % kInputMultiple || w % kInputMultiple)
    throw ConfigError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be a positive multiple of " + std::to_string(kInputMultiple));
}

// ---- DAPPM -----------------------------------------------------------------

Dappm::Dappm(Registry& reg, const std::string& name, std::int64_t cin, std::int64_t width,
             std::int64_t cout) {
  auto unit = [&](const std::string& n, std::int64_t in, std::int64_t out, std::int64_t k) {
    return Unit{nn::BatchNorm2d(reg, n + ".bn", in), nn::Conv2d(reg, n + ".conv", in, out, k)};
  };
  for (int i = 0; i < 5; ++i)
    scales_.push_back(unit(name + ".scale" + std::to_string(i), cin, width, 1));
  for (int i = 1; i < 5; ++i)
    process_.push_back(unit(name + ".process" + std::to_string(i), width, width, 3));
  compress_ = unit(name + ".compression", 5 * width, cout, 1);
  shortcut_ = unit(name + ".shortcut", cin, cout, 1);
}

Var Dappm::operator()(Ctx& ctx, Var x) const {
  const std::int64_t h = x.dim(2), w = x.dim(3);
  std::vector<Var> parts{scales_[0](ctx, x)};
  for (std::size_t i = 1; i < 5; ++i) {
    Var pooled;
    if (i < 4 && pool_fits(kDappmPools[i - 1], h, w)) {
      const PoolSpec& p = kDappmPools[i - 1];
      pooled = ad::avg_pool2d(x, p.kernel, p.stride, p.padding);
    } else {
      pooled = ad::adaptive_avg_pool2d(x, 1, 1);
    }
    Var up = ad::bilinear_resize(scales_[i](ctx, pooled), h, w);
    parts.push_back(process_[i - 1](ctx, ad::add(up, parts.back())));
  }
  Var cat = ad::concat_channels(std::span<const Var>(parts));
  return ad::add(compress_(ctx, cat), shortcut_(ctx, x));
}

// ---- head ------------------------------------------------------------------

SegHead::SegHead(Registry& reg, const std::string& name, std::int64_t d, std::int64_t classes)
    : conv1_(reg, name + ".conv1", d, d, 3),
      conv2_(reg, name + ".conv2", d, classes, 1, 1, 0, 1, true),
      bn_(reg, name + ".bn", d) {}

Var SegHead::operator()(Ctx& ctx, Var x) const {
  return conv2_(ctx, ad::relu(bn_(ctx, conv1_(ctx, x))));
}

// ---- model -----------------------------------------------------------------

Model::Model(const ModelConfig& cfg) : cfg_(cfg), reg_(std::make_unique<Registry>(cfg.seed)) {
  cfg_.validate();
  Registry& reg = *reg_;
  const auto& ch = cfg_.channels;
  const auto& nb = cfg_.blocks;
  stem_ = std::make_unique<blocks::Stem>(reg, "stem", cfg_.in_channels, ch[0].high);
  for (std::int64_t i = 0; i < nb[0].high; ++i)
    stage1_.emplace_back(reg, "stage1." + std::to_string(i), ch[0].high, ch[0].high, 1);
  for (std::int64_t i = 0; i < nb[1].high; ++i)
    stage2_.emplace_back(reg, "stage2." + std::to_string(i), i ? ch[1].high : ch[0].high,
                         ch[1].high, i ? 1 : 2);
  for (std::int64_t i = 0; i < nb[2].high; ++i)
    stage3_high_.emplace_back(reg, "stage3.high." + std::to_string(i),
                              i ? ch[2].high : ch[1].high, ch[2].high, 1);
  for (std::int64_t i = 0; i < nb[2].low; ++i)
    stage3_low_.emplace_back(reg, "stage3.low." + std::to_string(i), i ? ch[2].low : ch[1].high,
                             ch[2].low, i ? 1 : 2);
  exchange3_ = std::make_unique<Exchange>(reg, "stage3.exchange", ch[2].high, ch[2].low, 2);
  down4_ = nn::Conv2d(reg, "stage4.down.conv", ch[2].low, ch[3].low, 1, 2);
  down4_bn_ = nn::BatchNorm2d(reg, "stage4.down.bn", ch[3].low);
  const blocks::BlockConfig bc = cfg_.block_config();
  for (std::int64_t i = 0; i < nb[3].high; ++i)
    stage4_.emplace_back(reg, "stage4." + std::to_string(i), bc);
  exchange4_ = std::make_unique<Exchange>(reg, "stage4.exchange", ch[3].high, ch[3].low, 4);
  for (std::int64_t i = 0; i < nb[4].high; ++i)
    stage5_.emplace_back(reg, "stage5." + std::to_string(i), bc);
  exchange5_ =
      std::make_unique<Exchange>(reg, "stage5.exchange", ch[4].high, ch[4].low, 4, false);
  dappm_ = std::make_unique<Dappm>(reg, "dappm", ch[4].low, cfg_.dappm_width, ch[4].high);
  head_ = std::make_unique<SegHead>(reg, "head", ch[4].high, cfg_.num_classes);
}

Var Model::operator()(Ctx& ctx, Var image, Trace* trace) const {
  if (image.shape().size() != 4 || image.dim(1) != cfg_.in_channels)
    throw ShapeError("model expects [n, " + std::to_string(cfg_.in_channels) +
                     ", H, W], got " + to_string(image.shape()));
  const std::int64_t H = image.dim(2), W = image.dim(3);
  check_input_size(H, W);

  OpCounters last = op_counters();
  auto mark = [&](const char* module, std::initializer_list<std::pair<const char*, Var>> f) {
    if (!trace) return;
    for (const auto& [n, v] : f) trace->features.emplace_back(n, v);
    const OpCounters now = op_counters();
    trace->counters.emplace_back(
        module, OpCounters{now.matmul_calls - last.matmul_calls, now.gemm_macs - last.gemm_macs,
                           now.norm_macs - last.norm_macs});
    last = now;
  };

  Var x = (*stem_)(ctx, image);
  mark("stem", {{"stem", x}});
  for (const auto& b : stage1_) x = b(ctx, x);
  mark("stage1", {{"stage1", x}});
  for (const auto& b : stage2_) x = b(ctx, x);
  mark("stage2", {{"stage2", x}});

  Var h = x, l = x;
  for (const auto& b : stage3_high_) h = b(ctx, h);
  for (const auto& b : stage3_low_) l = b(ctx, l);
  std::tie(h, l) = (*exchange3_)(ctx, h, l);
  mark("stage3", {{"stage3.high", h}, {"stage3.low", l}});

  l = down4_bn_(ctx, down4_(ctx, l));
  for (const auto& b : stage4_) std::tie(h, l) = b(ctx, h, l);
  std::tie(h, l) = (*exchange4_)(ctx, h, l);
  mark("stage4", {{"stage4.high", h}, {"stage4.low", l}});

  for (const auto& b : stage5_) std::tie(h, l) = b(ctx, h, l);
  std::tie(h, l) = (*exchange5_)(ctx, h, l);
  mark("stage5", {{"stage5.high", h}, {"stage5.low", l}});

  Var d = (*dappm_)(ctx, l);
  mark("dappm", {{"dappm", d}});

  Var fused = ad::add(h, ad::bilinear_resize(d, h.dim(2), h.dim(3)));
  Var logits = ad::bilinear_resize((*head_)(ctx, fused), H, W);
  mark("head", {{"fused", fused}, {"logits", logits}});
  return logits;
}

ad::TensorD Model::infer(const ad::TensorD& image) const {
  ad::Tape tape(false);
  Ctx ctx{tape, false};
  return (*this)(ctx, tape.constant(image)).value();
}

}  // namespace rtf::model
