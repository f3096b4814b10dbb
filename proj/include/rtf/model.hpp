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

// Full network: stem, two residual stages, a dual-resolution residual stage,
// two stages of RTFormer blocks, DAPPM on the low branch and the
// segmentation head. Plus the flat key = value configuration format.

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rtf/blocks.hpp"
#include "rtf/ops.hpp"

namespace rtf::model {

using blocks::AttnKind;
using blocks::FfnKind;
using nn::Ctx;
using nn::Registry;
using nn::Var;

/// One stage entry; single-branch stages leave `low` at 0.
struct Dual {
  std::int64_t high = 0;
  std::int64_t low = 0;
  bool operator==(const Dual&) const = default;
};

struct ModelConfig {
  std::string name = "custom";
  std::array<Dual, 5> channels{};
  std::array<Dual, 5> blocks{};
  std::int64_t cross_side = 8;
  std::int64_t num_classes = 19;
  std::int64_t in_channels = 3;
  std::int64_t dappm_width = 128;
  FfnKind ffn = FfnKind::conv;
  AttnKind low_attn = AttnKind::gfa;
  AttnKind high_attn = AttnKind::ca;
  Dual groups{2, 8};
  Dual heads{2, 8};
  Dual sigma{4, 1};
  double mhea_ratio = 0.25;
  std::uint64_t seed = 0;

  std::int64_t d_h() const { return channels[2].high; }
  std::int64_t d_l() const { return channels[3].low; }
  blocks::BlockConfig block_config() const;
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

ModelConfig slim();
ModelConfig base();
/// Slim with every width divided by 8, for tests and toy training.
ModelConfig tiny();
/// "slim", "base", "tiny", or a path to a config file.
ModelConfig load_config(const std::string& name_or_path);
ModelConfig parse_config(std::istream& in, const std::string& source = "<config>");
/// Applies one key = value assignment.
void set_option(ModelConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const ModelConfig& cfg);

/// Input side lengths must be multiples of this.
inline constexpr std::int64_t kInputMultiple = 64;
void check_input_size(std::int64_t h, std::int64_t w);

struct PoolSpec {
  std::int64_t kernel, stride, padding;
};
inline constexpr std::array<PoolSpec, 3> kDappmPools{{{5, 2, 2}, {9, 4, 4}, {17, 8, 8}}};
/// Whether a pyramid pool fits an h x w map; otherwise it falls back to a
/// global average.
bool pool_fits(const PoolSpec& p, std::int64_t h, std::int64_t w);

/// Pyramid pooling with hierarchical fusion. Pre-activation units
/// (BN, ReLU, conv) throughout.
class Dappm {
 public:
  Dappm(Registry& reg, const std::string& name, std::int64_t cin, std::int64_t width,
        std::int64_t cout);
  Var operator()(Ctx& ctx, Var x) const;

 private:
  struct Unit {
    nn::BatchNorm2d bn;
    nn::Conv2d conv;
    Var operator()(Ctx& ctx, Var x) const { return conv(ctx, ad::relu(bn(ctx, x))); }
  };
  std::vector<Unit> scales_;   // 0: identity, 1-3: pools, 4: global
  std::vector<Unit> process_;  // 3x3 fusion for scales 1-4
  Unit compress_, shortcut_;
};

class SegHead {
 public:
  SegHead(Registry& reg, const std::string& name, std::int64_t d, std::int64_t classes);
  /// Logits at the feature resolution.
  Var operator()(Ctx& ctx, Var x) const;

 private:
  nn::Conv2d conv1_, conv2_;
  nn::BatchNorm2d bn_;
};

/// Output of every stage, for stride probes and per-stage accounting.
struct Trace {
  std::vector<std::pair<std::string, Var>> features;
  /// Counter deltas attributed to each module, in execution order.
  std::vector<std::pair<std::string, OpCounters>> counters;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  Registry& registry() { return *reg_; }
  const Registry& registry() const { return *reg_; }

  /// [n, in_channels, H, W] -> [n, num_classes, H, W]
  Var operator()(Ctx& ctx, Var image, Trace* trace = nullptr) const;
  /// Eval-mode forward of a plain tensor.
  ad::TensorD infer(const ad::TensorD& image) const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<Registry> reg_;
  std::unique_ptr<blocks::Stem> stem_;
  std::vector<blocks::BasicBlock> stage1_, stage2_, stage3_high_, stage3_low_;
  std::unique_ptr<blocks::Exchange> exchange3_, exchange4_, exchange5_;
  nn::Conv2d down4_;
  nn::BatchNorm2d down4_bn_;
  std::vector<blocks::RTFormerBlock> stage4_, stage5_;
  std::unique_ptr<Dappm> dappm_;
  std::unique_ptr<SegHead> head_;
};

}  // namespace rtf::model
