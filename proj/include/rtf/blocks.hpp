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

// Composite layers: stem, residual block, FFNs, branch exchange, attention
// layers over feature maps and the stepped dual-resolution block.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rtf/nn.hpp"

namespace rtf::blocks {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Ctx;
using nn::Registry;
using nn::Var;

enum class AttnKind { gfa, ca, ea, mhea, sa };
enum class FfnKind { conv, mlp_dw };

std::string_view to_string(AttnKind k);
std::string_view to_string(FfnKind k);
AttnKind parse_attn(std::string_view s);
FfnKind parse_ffn(std::string_view s);

struct BlockConfig {
  std::int64_t d_h = 64;
  std::int64_t d_l = 256;
  AttnKind low_attn = AttnKind::gfa;
  AttnKind high_attn = AttnKind::ca;
  std::int64_t groups_low = 8;
  std::int64_t groups_high = 2;
  std::int64_t heads_low = 8;
  std::int64_t heads_high = 2;
  /// External bank size for EA/MHEA: M = d * ratio.
  double mhea_ratio = 0.25;
  std::int64_t sigma_low = 1;
  std::int64_t sigma_high = 4;
  std::int64_t cross_side = 8;
  FfnKind ffn = FfnKind::conv;

  void validate() const;
};

/// Bank rows for EA/MHEA at width d.
std::int64_t external_bank_rows(std::int64_t d, double ratio);

class Stem {
 public:
  Stem(Registry& reg, const std::string& name, std::int64_t in_channels, std::int64_t width);
  Var operator()(Ctx& ctx, Var x) const;

 private:
  Conv2d conv1_, conv2_;
  BatchNorm2d bn1_, bn2_;
};

class BasicBlock {
 public:
  BasicBlock(Registry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
             std::int64_t stride);
  Var operator()(Ctx& ctx, Var x) const;
  bool has_projection() const { return project_; }
  const Conv2d& conv1() const { return conv1_; }
  const Conv2d& conv2() const { return conv2_; }

 private:
  Conv2d conv1_, conv2_, short_conv_;
  BatchNorm2d bn1_, bn2_, short_bn_;
  bool project_ = false;
};

/// conv3x3-BN-ReLU-conv3x3-BN, or the 1x1 / depthwise 3x3 / 1x1 baseline.
class Ffn {
 public:
  Ffn(Registry& reg, const std::string& name, std::int64_t d, FfnKind kind);
  Var operator()(Ctx& ctx, Var x) const;
  FfnKind kind() const { return kind_; }

 private:
  FfnKind kind_;
  std::int64_t d_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> bns_;
};

/// Cross-resolution fusion. high <- low: 1x1 conv + BN at low resolution,
/// bilinear upsample, add. low <- high: strided 3x3 conv chain (one conv per
/// factor of 2) + BN, add. Both outputs pass a ReLU. With down = false only
/// the high branch is updated.
class Exchange {
 public:
  Exchange(Registry& reg, const std::string& name, std::int64_t d_h, std::int64_t d_l,
           std::int64_t ratio, bool down = true);
  std::pair<Var, Var> operator()(Ctx& ctx, Var x_h, Var x_l) const;
  std::int64_t ratio() const { return ratio_; }
  bool down() const { return down_; }

 private:
  std::int64_t ratio_;
  bool down_;
  Conv2d up_conv_;
  BatchNorm2d up_bn_;
  std::vector<Conv2d> down_convs_;
  std::vector<BatchNorm2d> down_bns_;
};

/// One attention variant applied per image to the row-major tokens of a map.
class AttentionLayer {
 public:
  struct Spec {
    AttnKind kind = AttnKind::gfa;
    std::int64_t groups = 1;
    std::int64_t heads = 1;
    double ratio = 0.25;
    std::int64_t sigma = 1;
    std::int64_t cross_side = 8;
    std::int64_t source_channels = 0;  // CA: width of the low-resolution source
  };

  AttentionLayer(Registry& reg, const std::string& name, std::int64_t d, const Spec& spec);
  /// `source` is the low-resolution map feeding CA (unused by other kinds).
  Var operator()(Ctx& ctx, Var x, Var source = Var{}) const;
  const Spec& spec() const { return spec_; }

 private:
  Var tokens(Ctx& ctx, Var x, Var source, std::int64_t h, std::int64_t w) const;

  std::int64_t d_;
  Spec spec_;
  ad::Parameter* k_ = nullptr;
  ad::Parameter* v_ = nullptr;
  std::vector<ad::Parameter*> proj_;  // SA: q, k, v, o
  Conv2d theta_;
};

/// Stepped dual-resolution block: the low branch runs first and its output
/// provides the cross-feature for the high branch.
///   u = x + BN0(Attn(BN(x))),  y = u + FFN(BN(u))
/// where BN0 starts with zero scale.
class RTFormerBlock {
 public:
  RTFormerBlock(Registry& reg, const std::string& name, const BlockConfig& cfg);
  /// Returns (y_h, y_l).
  std::pair<Var, Var> operator()(Ctx& ctx, Var x_h, Var x_l) const;
  const BlockConfig& config() const { return cfg_; }

 private:
  struct Branch {
    BatchNorm2d attn_norm, attn_out, ffn_norm;
    AttentionLayer attn;
    Ffn ffn;
  };
  Var run(Ctx& ctx, const Branch& b, Var x, Var source) const;

  BlockConfig cfg_;
  std::vector<Branch> branches_;  // [0] low, [1] high
};

AttentionLayer::Spec low_spec(const BlockConfig& cfg);
AttentionLayer::Spec high_spec(const BlockConfig& cfg);

}  // namespace rtf::blocks
