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

// Reverse-mode differentiation over f64 tensors. A Tape records every op in
// creation order; since an op's inputs always exist before it, replaying the
// tape backwards is a valid reverse topological order.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rtf/ops.hpp"
#include "rtf/tensor.hpp"

namespace rtf::ad {

using TensorD = Tensor<double>;

/// A learnable tensor plus its accumulated gradient.
struct Parameter {
  std::string name;
  TensorD value;
  TensorD grad;

  void zero_grad() { grad = zeros_like(value); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid only while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int64_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const TensorD& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  const TensorD& grad() const;
};

class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const TensorD& out, const TensorD& grad_out)>;

  /// A non-recording tape computes values only; backward() on it throws.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(TensorD value);
  /// An input whose gradient is wanted (read it back with Var::grad()).
  Var leaf(TensorD value);
  /// Binds a parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  /// Records an op result. `inputs` decides whether the node needs a
  /// gradient; `backward` receives the result and d(loss)/d(result) and must
  /// call accumulate() for its inputs.
  Var push(TensorD value, std::initializer_list<Var> inputs, BackwardFn backward,
           const char* op);
  Var push(TensorD value, std::span<const Var> inputs, BackwardFn backward, const char* op);

  bool requires_grad(Var v) const { return node(v).requires_grad; }
  void accumulate(Var v, const TensorD& g);
  void accumulate(Var v, TensorD&& g);

  /// Populates gradients for everything reachable from a scalar loss.
  void backward(Var loss);

  const TensorD& value(Var v) const;
  const TensorD& grad(Var v) const;
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }
  const char* op_name(Var v) const { return node(v).op; }
  /// Node ids in the order the last backward() visited them.
  const std::vector<std::int64_t>& last_backward_order() const { return order_; }

  /// Running hash of ReLU activation patterns, used by grad_check to detect
  /// finite-difference steps that straddle a kink.
  std::uint64_t kink_signature() const { return kink_sig_; }
  void mix_kink_signature(std::uint64_t h) { kink_sig_ = kink_sig_ * 0x100000001B3ULL ^ h; }

 private:
  struct Node {
    TensorD value;
    const TensorD* ref = nullptr;  // parameters are read in place
    TensorD grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    const char* op = "";
    const TensorD& val() const { return ref ? *ref : value; }
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<std::int64_t> order_;
  std::uint64_t kink_sig_ = 0xCBF29CE484222325ULL;
};

// ---- differentiable ops (mirror rtf:: forward ops; found by ADL) -----------

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var slice_cols(Var a, std::int64_t start, std::int64_t count);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::int64_t> rows);
Var softmax(Var x, int axis);
Var grouped_double_norm(Var a, std::int64_t groups);
inline Var double_norm(Var a) { return grouped_double_norm(a, 1); }
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sum(Var a);
/// bias may be an invalid Var for no bias.
Var conv2d(Var x, Var weight, Var bias, const Conv2dSpec& spec);
Var avg_pool2d(Var x, std::int64_t kernel, std::int64_t stride, std::int64_t padding);
Var adaptive_avg_pool2d(Var x, std::int64_t out_h, std::int64_t out_w);
Var bilinear_resize(Var x, std::int64_t out_h, std::int64_t out_w);
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats& stats);
Var batch_norm_eval(Var x, Var gamma, Var beta, const TensorD& running_mean,
                    const TensorD& running_var, double eps);
Var select_batch(Var x, std::int64_t index);
Var concat_batch(std::span<const Var> parts);
Var slice_channels(Var x, std::int64_t start, std::int64_t count);
Var concat_channels(std::span<const Var> parts);
Var to_tokens(Var x);
Var from_tokens(Var tokens, std::int64_t h, std::int64_t w);

// ---- gradient checking -----------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t coords = 0;
  /// Coordinates whose step was shrunk because the activation pattern
  /// differed at x +- step.
  std::int64_t refined = 0;
  /// Coordinates left out because even the smallest step straddled a kink.
  std::int64_t skipped = 0;
};

inline constexpr double kMinKinkStep = 1e-7;

/// Central differences of a scalar function of one input tensor.
/// f builds its graph on the given tape from the supplied input Var.
GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& f, const TensorD& x,
                           double step = 1e-3);

/// Central differences with respect to parameter coordinates. max_coords
/// bounds the number of probed coordinates per parameter (evenly strided).
GradCheckResult grad_check_params(const std::function<Var(Tape&)>& f,
                                  std::span<Parameter* const> params, double step = 1e-3,
                                  std::int64_t max_coords = 64);

}  // namespace rtf::ad
