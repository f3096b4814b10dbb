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

#include "rtf/autograd.hpp"
#include "rtf/kernels.hpp"

namespace rtf::ad {

const TensorD& Var::value() const {
  if (!valid()) throw std::logic_error("use of an unbound Var");
  return tape->value(*this);
}

const TensorD& Var::grad() const {
  if (!valid()) throw std::logic_error("use of an unbound Var");
  return tape->grad(*this);
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw std::logic_error("Var does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

const TensorD& Tape::value(Var v) const { return node(v).val(); }

const TensorD& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) {
    static const TensorD kNone;
    return kNone;
  }
  return n.grad;
}

Var Tape::constant(TensorD value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::leaf(TensorD value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = recording_;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::push(TensorD value, std::initializer_list<Var> inputs, BackwardFn backward,
               const char* op) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward), op);
}

Var Tape::push(TensorD value, std::span<const Var> inputs, BackwardFn backward,
               const char* op) {
  if (nan_check_enabled() && !all_finite(value))
    throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (recording_) {
    for (const Var& in : inputs)
      if (in.valid() && node(in).requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

void Tape::accumulate(Var v, const TensorD& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (g.shape() != n.val().shape())
    throw ShapeError(std::string("gradient shape ") + to_string(g.shape()) +
                     " does not match value " + to_string(n.val().shape()) + " of " + n.op);
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  kernels::axpy<double>(g.size(), 1.0, g.raw(), n.grad.raw());
}

void Tape::accumulate(Var v, TensorD&& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.empty() && g.shape() == n.val().shape()) {
    n.grad = std::move(g);
    return;
  }
  accumulate(v, static_cast<const TensorD&>(g));
}

void Tape::backward(Var loss) {
  if (!loss.valid()) throw std::logic_error("backward on an unbound Var");
  if (!recording_) throw std::logic_error("backward on a non-recording tape");
  Node& root = node(loss);
  if (root.val().size() != 1)
    throw ShapeError("backward needs a scalar loss, got " + to_string(root.val().shape()));
  order_.clear();
  for (auto& n : nodes_) n.grad = TensorD{};
  if (!root.requires_grad) return;
  root.grad = TensorD(root.val().shape(), 1.0);
  for (std::int64_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    order_.push_back(id);
    if (n.backward) n.backward(*this, n.val(), n.grad);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.empty() || p.grad.shape() != p.value.shape()) p.zero_grad();
      kernels::axpy<double>(n.grad.size(), 1.0, n.grad.raw(), p.grad.raw());
    }
  }
}

}  // namespace rtf::ad
