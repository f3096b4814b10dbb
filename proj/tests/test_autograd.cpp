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
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "rtf/autograd.hpp"

using namespace rtf;
using namespace rtf::ad;

TEST_CASE("backward examples") {
  Tape t;
  Var x = t.leaf(TensorD::vector({3, -1}));
  t.backward(sum(mul(x, x)));
  CHECK(x.grad().storage() == std::vector<double>{6, -2});

  Tape t2;
  Var y = t2.leaf(TensorD::vector({1.5, 2}));
  t2.backward(sum(add(y, y)));
  CHECK(y.grad().storage() == std::vector<double>{2, 2});
}

TEST_CASE("sum(A*B) gives dA = ones * B^T against finite differences") {
  const auto a = oracle::random({3, 4}, 1);
  const auto b = oracle::random({4, 5}, 2);
  Tape t;
  Var va = t.leaf(a);
  t.backward(sum(matmul(va, t.constant(b))));
  const auto want = oracle::matmul(TensorD(Shape{3, 5}, 1.0), oracle::transpose(b));
  CHECK(oracle::max_diff(va.grad(), want) < 1e-14);
  // Independent finite-difference probe of one coordinate.
  auto f = [&](double da) {
    auto ap = a;
    ap.at(1, 2) += da;
    return sum(rtf::matmul(ap, b))[0];
  };
  CHECK(std::abs((f(1e-5) - f(-1e-5)) / 2e-5 - want.at(1, 2)) < 1e-8);
}

TEST_CASE("backward errors") {
  Tape t;
  Var x = t.leaf(TensorD::vector({1, 2}));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
  CHECK_THROWS(t.backward(Var{}));
  Tape frozen(false);
  Var z = frozen.leaf(TensorD::vector({1}));
  CHECK_THROWS(frozen.backward(sum(z)));
}

TEST_CASE("backward visits nodes in reverse topological order") {
  Tape t;
  Var a = t.leaf(oracle::random({2, 3}, 4));
  Var b = t.leaf(oracle::random({3, 2}, 5));
  Var c = matmul(a, b);
  Var d = relu(c);
  Var e = add(d, c);
  Var l = sum(mul(e, e));
  t.backward(l);
  const auto& order = t.last_backward_order();
  std::set<std::int64_t> seen;
  // Every node is visited after all of its consumers; ids are creation order.
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  CHECK(order.front() == l.id);
  CHECK(order.back() == a.id);
}

TEST_CASE("parameters accumulate across uses") {
  Parameter p{"w", TensorD::vector({2.0}), {}};
  Tape t;
  Var w1 = t.param(p);
  Var w2 = t.param(p);
  t.backward(sum(mul(w1, w2)));
  CHECK(p.grad[0] == 4.0);
}

TEST_CASE("grad_check basics") {
  auto r = grad_check([](Tape&, Var x) { return sum(mul(x, x)); }, TensorD::vector({1, 2}));
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.coords == 2);
  CHECK_THROWS(grad_check([](Tape&, Var x) { return x; }, TensorD::vector({1, 2})));
}

namespace {

// Scalarizes an op output with fixed random weights so every output
// coordinate contributes a distinct gradient.
Var weighted(Tape& t, Var y, std::uint64_t seed) {
  return sum(mul(y, t.constant(oracle::random(y.shape(), seed))));
}

void check_op(const char* name, const std::function<Var(Tape&, Var)>& op, const TensorD& x) {
  auto r = grad_check([&](Tape& t, Var v) { return weighted(t, op(t, v), 77); }, x, 1e-4);
  INFO(name << " err=" << r.max_rel_error << " skipped=" << r.skipped);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.skipped == 0);
}

}  // namespace

TEST_CASE("every differentiable op matches central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto m = oracle::random({3, 4}, seed + 10);
    const auto img = oracle::random({2, 3, 4, 5}, seed + 20);
    const auto sq = oracle::random({1, 2, 6, 6}, seed + 30);
    const auto other = oracle::random({4, 5}, seed + 40);
    const auto rhs_nt = oracle::random({6, 4}, seed + 41);
    const auto w = oracle::random({4, 3, 3, 3}, seed + 50);
    const auto wg = oracle::random({4, 1, 3, 3}, seed + 51);
    const auto ch = oracle::random({3}, seed + 60);

    check_op("matmul lhs", [&](Tape& t, Var v) { return matmul(v, t.constant(other)); }, m);
    check_op("matmul rhs", [&](Tape& t, Var v) { return matmul(t.constant(m), v); }, other);
    check_op("matmul_nt lhs", [&](Tape& t, Var v) { return matmul_nt(v, t.constant(rhs_nt)); }, m);
    check_op("matmul_nt rhs", [&](Tape& t, Var v) { return matmul_nt(t.constant(m), v); }, rhs_nt);
    check_op("transpose", [](Tape&, Var v) { return transpose(v); }, m);
    check_op("slice_cols", [](Tape&, Var v) { return slice_cols(v, 1, 2); }, m);
    check_op("concat_cols", [](Tape&, Var v) {
      std::vector<Var> parts{v, scale(v, 2.0), slice_cols(v, 0, 1)};
      return concat_cols(parts);
    }, m);
    check_op("gather_rows", [](Tape&, Var v) {
      std::vector<std::int64_t> idx{2, 0, 2};
      return gather_rows(v, idx);
    }, m);
    check_op("softmax last", [](Tape&, Var v) { return softmax(v, -1); }, m);
    check_op("softmax first", [](Tape&, Var v) { return softmax(v, 0); }, m);
    check_op("softmax image", [](Tape&, Var v) { return softmax(v, 1); }, img);
    check_op("double_norm", [](Tape&, Var v) { return double_norm(v); }, m);
    check_op("grouped_double_norm", [](Tape&, Var v) { return grouped_double_norm(v, 2); }, m);
    check_op("add same", [](Tape&, Var v) { return add(v, mul(v, v)); }, m);
    check_op("add channel", [&](Tape& t, Var v) { return add(t.constant(img), v); }, ch);
    check_op("add column", [&](Tape& t, Var v) { return add(t.constant(m), v); }, oracle::random({4}, seed));
    check_op("mul channel", [&](Tape& t, Var v) { return mul(t.constant(img), v); }, ch);
    check_op("mul scalar", [&](Tape& t, Var v) { return mul(t.constant(m), slice_cols(v, 0, 1)); },
             oracle::random({1, 3}, seed));
    check_op("scale", [](Tape&, Var v) { return scale(v, -1.5); }, m);
    check_op("relu", [](Tape&, Var v) { return relu(v); }, m);
    check_op("conv2d x", [&](Tape& t, Var v) {
      return conv2d(v, t.constant(w), t.constant(oracle::random({4}, 3)), {1, 1, 1});
    }, img);
    check_op("conv2d w", [&](Tape& t, Var v) { return conv2d(t.constant(img), v, Var{}, {2, 1, 1}); }, w);
    check_op("conv2d bias", [&](Tape& t, Var v) {
      return conv2d(t.constant(img), t.constant(w), v, {1, 0, 1});
    }, oracle::random({4}, 9));
    check_op("conv2d grouped", [&](Tape& t, Var v) {
      return conv2d(v, t.constant(wg), Var{}, {1, 1, 4});
    }, oracle::random({1, 4, 5, 5}, seed));
    check_op("conv2d pointwise", [&](Tape& t, Var v) {
      return conv2d(v, t.constant(oracle::random({2, 3, 1, 1}, 8)), Var{}, {});
    }, img);
    check_op("avg_pool2d", [](Tape&, Var v) { return avg_pool2d(v, 3, 2, 1); }, sq);
    check_op("adaptive down", [](Tape&, Var v) { return adaptive_avg_pool2d(v, 4, 4); }, sq);
    check_op("adaptive up", [](Tape&, Var v) { return adaptive_avg_pool2d(v, 5, 7); }, img);
    check_op("bilinear up", [](Tape&, Var v) { return bilinear_resize(v, 9, 11); }, img);
    check_op("bilinear down", [](Tape&, Var v) { return bilinear_resize(v, 3, 2); }, sq);
    check_op("batch_norm_train x", [&](Tape& t, Var v) {
      BatchStats st;
      return batch_norm_train(v, t.constant(ch), t.constant(oracle::random({3}, 1)), 1e-5, st);
    }, img);
    check_op("batch_norm_train gamma", [&](Tape& t, Var v) {
      BatchStats st;
      return batch_norm_train(t.constant(img), v, t.constant(ch), 1e-5, st);
    }, ch);
    check_op("batch_norm matrix", [&](Tape& t, Var v) {
      BatchStats st;
      return batch_norm_train(v, t.constant(oracle::random({4}, 2)), t.constant(oracle::random({4}, 3)), 1e-5, st);
    }, m.reshape({4, 3}).reshape({3, 4}));
    check_op("batch_norm_eval", [&](Tape& t, Var v) {
      return batch_norm_eval(v, t.constant(ch), t.constant(ch), oracle::random({3}, 4),
                             oracle::random({3}, 5, 0.5, 2.0), 1e-5);
    }, img);
    check_op("batch_norm_eval beta", [&](Tape& t, Var v) {
      return batch_norm_eval(t.constant(img), t.constant(ch), v, oracle::random({3}, 4),
                             oracle::random({3}, 5, 0.5, 2.0), 1e-5);
    }, ch);
    check_op("select/concat batch", [](Tape&, Var v) {
      std::vector<Var> parts{select_batch(v, 1), select_batch(v, 0), select_batch(v, 1)};
      return concat_batch(parts);
    }, img);
    check_op("slice/concat channels", [](Tape&, Var v) {
      std::vector<Var> parts{slice_channels(v, 2, 1), slice_channels(v, 0, 2)};
      return concat_channels(parts);
    }, img);
    check_op("tokens", [](Tape&, Var v) { return from_tokens(scale(to_tokens(v), 2.0), 5, 4); },
             oracle::random({1, 3, 4, 5}, seed));
  }
}

TEST_CASE("grad_check refines the step across a ReLU kink") {
  // x = 5e-4 sits inside the default step, so the first probe straddles the kink.
  auto r = grad_check([](Tape&, Var x) { return sum(relu(x)); }, TensorD::vector({5e-4, -0.3, 0.7}));
  CHECK(r.max_rel_error < 1e-10);
  CHECK(r.refined == 1);
  CHECK(r.skipped == 0);
}
