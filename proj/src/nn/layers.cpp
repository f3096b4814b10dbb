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

#include <algorithm>
#include <cmath>

#include "rtf/nn.hpp"

namespace rtf::nn {

void Registry::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw ConfigError("duplicate tensor name " + name);
  names_.push_back(name);
}

Parameter& Registry::param(const std::string& name, TensorD init) {
  claim(name);
  params_.push_back(Parameter{name, std::move(init), {}});
  return params_.back();
}

Buffer& Registry::buffer(const std::string& name, TensorD init) {
  claim(name);
  buffers_.push_back(Buffer{name, std::move(init)});
  return buffers_.back();
}

std::vector<Parameter*> Registry::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<Buffer*> Registry::buffers() {
  std::vector<Buffer*> out;
  for (auto& b : buffers_) out.push_back(&b);
  return out;
}

std::int64_t Registry::num_parameters() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Parameter* Registry::find_param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Buffer* Registry::find_buffer(const std::string& name) {
  for (auto& b : buffers_)
    if (b.name == name) return &b;
  return nullptr;
}

void Registry::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double kaiming_bound(std::int64_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

Conv2d::Conv2d(Registry& reg, const std::string& name, std::int64_t cin, std::int64_t cout,
               std::int64_t kernel, std::int64_t stride, std::int64_t padding,
               std::int64_t groups, bool bias)
    : cin_(cin), cout_(cout), kernel_(kernel) {
  if (cin < 1 || cout < 1 || kernel < 1 || kernel % 2 == 0)
    throw ConfigError(name + ": invalid convolution (kernel must be odd, channels >= 1)");
  if (groups < 1 || cin % groups || cout % groups)
    throw ConfigError(name + ": groups must divide both channel counts");
  spec_ = {stride, padding < 0 ? (kernel - 1) / 2 : padding, groups};
  const std::int64_t fan_in = cin / groups * kernel * kernel;
  weight_ = &reg.param(name + ".weight",
                       uniform_tensor<double>({cout, cin / groups, kernel, kernel}, reg.rng(),
                                              -kaiming_bound(fan_in), kaiming_bound(fan_in)));
  if (bias) bias_ = &reg.param(name + ".bias", TensorD(Shape{cout}));
}

Var Conv2d::operator()(Ctx& ctx, Var x) const {
  if (x.dim(1) != cin_)
    throw ShapeError("conv " + weight_->name + " expects " + std::to_string(cin_) +
                     " input channels, got " + to_string(x.shape()));
  Var b = bias_ ? ctx.tape.param(*bias_) : Var{};
  return ad::conv2d(x, ctx.tape.param(*weight_), b, spec_);
}

BatchNorm2d::BatchNorm2d(Registry& reg, const std::string& name, std::int64_t channels,
                         bool zero_gamma)
    : channels_(channels) {
  gamma_ = &reg.param(name + ".gamma", TensorD(Shape{channels}, zero_gamma ? 0.0 : 1.0));
  beta_ = &reg.param(name + ".beta", TensorD(Shape{channels}));
  mean_ = &reg.buffer(name + ".running_mean", TensorD(Shape{channels}));
  var_ = &reg.buffer(name + ".running_var", TensorD(Shape{channels}, 1.0));
}

Var BatchNorm2d::operator()(Ctx& ctx, Var x) const {
  Var g = ctx.tape.param(*gamma_);
  Var b = ctx.tape.param(*beta_);
  if (!ctx.training)
    return ad::batch_norm_eval(x, g, b, mean_->value, var_->value, kBatchNormEps);
  BatchStats st;
  Var y = ad::batch_norm_train(x, g, b, kBatchNormEps, st);
  if (ctx.update_stats) {
    const double m = kBatchNormMomentum;
    for (std::int64_t c = 0; c < channels_; ++c) {
      mean_->value[c] = (1 - m) * mean_->value[c] + m * st.mean[c];
      var_->value[c] = (1 - m) * var_->value[c] + m * st.var[c];
    }
  }
  return y;
}

void randomize_for_check(Registry& reg, std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter* p : reg.parameters()) {
    if (p->name.ends_with(".gamma")) {
      for (auto& v : p->value.data()) v = rng.uniform(0.5, 1.5);
    } else if (p->name.ends_with(".beta") || p->name.ends_with(".bias")) {
      for (auto& v : p->value.data()) v = rng.uniform(-0.2, 0.2);
    } else if (p->name.ends_with(".k") || p->name.ends_with(".v")) {
      for (auto& v : p->value.data()) v = rng.uniform(-1.0, 1.0);
    }
  }
}

Var probe_loss(Tape& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = tape.constant(uniform_tensor<double>(y.shape(), rng, -1.0, 1.0));
  return ad::sum(ad::mul(y, w));
}

}  // namespace rtf::nn
