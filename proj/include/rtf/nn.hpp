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

// Parameter registry and the two primitive layers everything else is built
// from. Layers keep pointers into a Registry, which owns all storage.

#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "rtf/autograd.hpp"
#include "rtf/rng.hpp"

namespace rtf::nn {

using ad::Parameter;
using ad::Tape;
using ad::TensorD;
using ad::Var;

/// Non-learnable state saved with checkpoints (BN running statistics).
struct Buffer {
  std::string name;
  TensorD value;
};

class Registry {
 public:
  explicit Registry(std::uint64_t seed) : rng_(seed) {}
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  Parameter& param(const std::string& name, TensorD init);
  Buffer& buffer(const std::string& name, TensorD init);
  Rng& rng() { return rng_; }

  std::vector<Parameter*> parameters();
  std::vector<Buffer*> buffers();
  std::int64_t num_parameters() const;
  Parameter* find_param(const std::string& name);
  Buffer* find_buffer(const std::string& name);
  void zero_grad();

 private:
  void claim(const std::string& name);

  Rng rng_;
  std::deque<Parameter> params_;
  std::deque<Buffer> buffers_;
  std::vector<std::string> names_;
};

/// Per-forward state: the tape to record on and the BN mode.
struct Ctx {
  Tape& tape;
  bool training = false;
  /// In training mode, whether BN folds batch statistics into its running
  /// buffers (finite-difference probes turn this off).
  bool update_stats = true;
};

/// Kaiming-uniform bound for a fan-in.
double kaiming_bound(std::int64_t fan_in);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Registry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
         std::int64_t kernel, std::int64_t stride = 1, std::int64_t padding = -1,
         std::int64_t groups = 1, bool bias = false);

  Var operator()(Ctx& ctx, Var x) const;

  std::int64_t cin() const { return cin_; }
  std::int64_t cout() const { return cout_; }
  std::int64_t kernel() const { return kernel_; }
  const Conv2dSpec& spec() const { return spec_; }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  std::int64_t cin_ = 0, cout_ = 0, kernel_ = 1;
  Conv2dSpec spec_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  /// zero_gamma starts the layer as a zero map, used at the end of residual
  /// sub-paths.
  BatchNorm2d(Registry& reg, const std::string& name, std::int64_t channels,
              bool zero_gamma = false);

  Var operator()(Ctx& ctx, Var x) const;

  std::int64_t channels() const { return channels_; }
  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }
  Buffer& running_mean() const { return *mean_; }
  Buffer& running_var() const { return *var_; }

 private:
  std::int64_t channels_ = 0;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Buffer* mean_ = nullptr;
  Buffer* var_ = nullptr;
};

/// Moves every parameter off its structured initial value (BN scales to
/// [0.5, 1.5], shifts and biases to [-0.2, 0.2], external banks to [-1, 1])
/// so zero-initialized paths carry gradient and attention maps are not
/// near-uniform. Used by gradient checks.
void randomize_for_check(Registry& reg, std::uint64_t seed);

/// sum(y * W) for a fixed pseudo-random W. A plain sum is blind to anything
/// feeding a batch norm, so checks use this instead.
Var probe_loss(Tape& tape, Var y, std::uint64_t seed);

}  // namespace rtf::nn
