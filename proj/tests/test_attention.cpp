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

#include "doctest.h"
#include "oracles.hpp"
#include "rtf/attention.hpp"

using namespace rtf;
using namespace rtf::attn;
using TD = Tensor<double>;

namespace {

TD column_mean(const TD& v) {
  TD m(Shape{1, v.dim(1)});
  for (std::int64_t i = 0; i < v.dim(0); ++i)
    for (std::int64_t j = 0; j < v.dim(1); ++j) m[j] += v.at(i, j) / double(v.dim(0));
  return m;
}

bool rows_equal(const TD& out, const TD& row, double tol) {
  for (std::int64_t i = 0; i < out.dim(0); ++i)
    for (std::int64_t j = 0; j < out.dim(1); ++j)
      if (std::abs(out.at(i, j) - row[j]) > tol) return false;
  return true;
}

TD oracle_ea(const TD& x, const TD& k, const TD& v, int groups = 1) {
  return oracle::matmul(oracle::grouped_double_norm(oracle::matmul(x, oracle::transpose(k)), groups), v);
}

}  // namespace

TEST_CASE("double normalization examples") {
  const auto u = double_norm(TD(Shape{2, 3}));
  for (double v : u.data()) CHECK(std::abs(v - 1.0 / 3) < 1e-9);
  const double ln2 = std::log(2.0);
  auto a = double_norm(TD::matrix({{0, ln2}, {0, 0}}));
  const double want[] = {3.0 / 7, 4.0 / 7, 3.0 / 5, 2.0 / 5};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(a[i] - want[i]) < 1e-8);
  auto one = double_norm(oracle::random({1, 5}, 3));
  for (double v : one.data()) CHECK(std::abs(v - 0.2) < 1e-9);
}

TEST_CASE("grouped double normalization examples") {
  auto x = oracle::random({5, 6}, 4);
  CHECK(grouped_double_norm(x, 1) == double_norm(x));
  auto z = grouped_double_norm(TD(Shape{1, 4}), 2);
  for (double v : z.data()) CHECK(std::abs(v - 0.5) < 1e-9);
  // A single row has an all-ones column softmax, so every group is uniform.
  auto single = grouped_double_norm(TD::matrix({{0, std::log(2.0), 0, 0}}), 2);
  for (double v : single.data()) CHECK(std::abs(v - 0.5) < 1e-9);
  // Two rows: column 1 softmaxes to [2/3, 1/3], the rest to [1/2, 1/2].
  auto g = grouped_double_norm(TD::matrix({{0, std::log(2.0), 0, 0}, {0, 0, 0, 0}}), 2);
  const double want[] = {3.0 / 7, 4.0 / 7, 0.5, 0.5, 3.0 / 5, 2.0 / 5, 0.5, 0.5};
  for (int i = 0; i < 8; ++i) CHECK(std::abs(g[i] - want[i]) < 1e-8);
  CHECK_THROWS_AS(grouped_double_norm(x, 4), ConfigError);
}

TEST_CASE("double normalization matches the literal two-step definition") {
  for (int trial = 0; trial < 40; ++trial) {
    const std::int64_t groups = 1 + trial % 3;
    auto a = oracle::random({2 + trial % 5, 6}, 500 + trial, -5, 5);
    CHECK(oracle::max_diff(grouped_double_norm(a, groups), oracle::grouped_double_norm(a, int(groups))) < 1e-14);
    auto s = column_softmax(a);
    for (std::int64_t j = 0; j < 6; ++j) {
      double c = 0;
      for (std::int64_t i = 0; i < a.dim(0); ++i) c += s.at(i, j);
      CHECK(std::abs(c - 1) < 1e-12);
    }
  }
}

TEST_CASE("external attention examples") {
  auto k = oracle::random({3, 4}, 1), v = oracle::random({3, 4}, 2);
  CHECK(rows_equal(external_attention(TD(Shape{5, 4}), k, v), column_mean(v), 1e-9));
  auto k1 = oracle::random({1, 4}, 3), v1 = oracle::random({1, 4}, 4);
  CHECK(rows_equal(external_attention(oracle::random({6, 4}, 5), k1, v1), v1, 1e-6));
  auto x = oracle::random({3, 4}, 6), k2 = oracle::random({2, 4}, 7), v2 = oracle::random({2, 4}, 8);
  CHECK(oracle::max_diff(external_attention(x, k2, v2), oracle_ea(x, k2, v2)) < 1e-14);
  CHECK_THROWS_AS(external_attention(x, oracle::random({2, 3}, 1), oracle::random({2, 3}, 1)), ShapeError);
}

TEST_CASE("multi-head external attention examples") {
  auto x = oracle::random({7, 6}, 9), k = oracle::random({4, 6}, 10), v = oracle::random({4, 6}, 11);
  CHECK(oracle::max_diff(multi_head_external_attention(x, k, v, 1), external_attention(x, k, v)) <= 1e-12);

  auto kh = oracle::random({3, 2}, 12), vh = oracle::random({3, 2}, 13);
  auto z = multi_head_external_attention(TD(Shape{4, 6}), kh, vh, 3);
  auto m = column_mean(vh);
  TD rep(Shape{1, 6});
  for (int h = 0; h < 3; ++h) rep[2 * h] = m[0], rep[2 * h + 1] = m[1];
  CHECK(rows_equal(z, rep, 1e-9));

  auto x2 = oracle::random({2, 4}, 14), k2 = oracle::random({3, 2}, 15), v2 = oracle::random({3, 2}, 16);
  auto got = multi_head_external_attention(x2, k2, v2, 2);
  for (int h = 0; h < 2; ++h) {
    auto head = oracle_ea(oracle::cols(x2, 2 * h, 2), k2, v2);
    CHECK(oracle::max_diff(oracle::cols(got, 2 * h, 2), head) < 1e-14);
  }
  CHECK_THROWS_AS(multi_head_external_attention(x2, k2, v2, 3), ConfigError);
}

TEST_CASE("gpu-friendly attention examples") {
  auto x = oracle::random({6, 4}, 17), k = oracle::random({5, 4}, 18), v = oracle::random({5, 4}, 19);
  CHECK(oracle::max_diff(gpu_friendly_attention(x, k, v, 1), external_attention(x, k, v)) <= 1e-12);

  // X = 0: each group is uniform, so the output sums the per-group V means.
  auto kg = oracle::random({6, 4}, 20), vg = oracle::random({6, 4}, 21);
  auto z = gpu_friendly_attention(TD(Shape{3, 4}), kg, vg, 3);
  TD want(Shape{1, 4});
  for (int g = 0; g < 3; ++g)
    for (int j = 0; j < 4; ++j) want[j] += (vg.at(2 * g, j) + vg.at(2 * g + 1, j)) / 2;
  CHECK(rows_equal(z, want, 1e-8));

  auto xr = oracle::random({5, 4}, 22);
  CHECK(oracle::max_diff(gpu_friendly_attention(xr, kg, vg, 2), oracle_ea(xr, kg, vg, 2)) < 1e-13);
  CHECK_THROWS_AS(gpu_friendly_attention(xr, kg, vg, 4), ConfigError);
}

TEST_CASE("matmul call structure: GFA integrates, MHEA splits per head") {
  const std::int64_t n = 16, d = 16, heads = 8, m = 4;
  auto x = oracle::random({n, d}, 1);
  reset_op_counters();
  gpu_friendly_attention(x, oracle::random({m * 2, d}, 2), oracle::random({m * 2, d}, 3), heads / 4);
  CHECK(op_counters().matmul_calls == 2);
  reset_op_counters();
  multi_head_external_attention(x, oracle::random({m, d / heads}, 4), oracle::random({m, d / heads}, 5), heads);
  CHECK(op_counters().matmul_calls == 2 * heads);
}

TEST_CASE("analytic attention counts equal the instrumented counters") {
  auto check = [](const Macs& want) {
    CHECK(op_counters().gemm_macs == want.gemm);
    CHECK(op_counters().norm_macs == want.norm);
    CHECK(op_counters().matmul_calls == want.matmul_calls);
  };
  const std::int64_t n = 24, d = 8;
  auto x = oracle::random({n, d}, 1);
  reset_op_counters();
  external_attention(x, oracle::random({5, d}, 2), oracle::random({5, d}, 3));
  check(ea_macs(n, d, 5));
  reset_op_counters();
  multi_head_external_attention(x, oracle::random({3, 2}, 2), oracle::random({3, 2}, 3), 4);
  check(mhea_macs(n, d, 3, 4));
  reset_op_counters();
  gpu_friendly_attention(x, oracle::random({8, d}, 2), oracle::random({8, d}, 3), 2);
  check(gfa_macs(n, d, 8));
  reset_op_counters();
  cross_resolution_attention(x, oracle::random({9, d}, 2), oracle::random({9, d}, 3));
  check(ca_macs(n, d, 3));
  reset_op_counters();
  auto eye = oracle::random({d, d}, 7);
  reduced_self_attention(x, 4, 6, eye, eye, eye, eye, 2, 2);
  check(sa_macs(n, d, 2, 2));
  reset_op_counters();
  cross_kv(oracle::random({1, 6, 4, 4}, 8), oracle::random({2 * d, 6, 1, 1}, 9), oracle::random({2 * d}, 3), 3);
  CHECK(op_counters().gemm_macs == theta_macs(6, d, 3).gemm);
}

TEST_CASE("cross-resolution attention examples") {
  auto kc = oracle::random({4, 4}, 23), vc = oracle::random({4, 4}, 24);
  CHECK(rows_equal(cross_resolution_attention(TD(Shape{5, 4}), kc, vc), column_mean(vc), 1e-12));
  auto k1 = oracle::random({1, 4}, 25), v1 = oracle::random({1, 4}, 26);
  CHECK(rows_equal(cross_resolution_attention(oracle::random({5, 4}, 27), k1, v1), v1, 1e-15));

  // d_h = 4, s = 2 end to end against pool / conv / split / softmax oracles.
  const std::int64_t dl = 6, dh = 4, s = 2;
  auto low = oracle::random({1, dl, 4, 6}, 28);
  auto w = oracle::random({2 * dh, dl, 1, 1}, 29), b = oracle::random({2 * dh}, 30);
  auto xh = oracle::random({10, dh}, 31);
  auto [k, v] = cross_kv(low, w, b, s);
  TD pooled(Shape{1, dl, s, s});
  for (std::int64_t c = 0; c < dl; ++c)
    for (std::int64_t i = 0; i < s; ++i)
      for (std::int64_t j = 0; j < s; ++j) {
        double acc = 0;
        for (std::int64_t y = 2 * i; y < 2 * i + 2; ++y)
          for (std::int64_t x = 3 * j; x < 3 * j + 3; ++x) acc += low.at(0, c, y, x);
        pooled.at(0, c, i, j) = acc / 6;
      }
  auto xc = oracle::conv2d(pooled, w, b, 1, 0);
  TD kw(Shape{s * s, dh}), vw(Shape{s * s, dh});
  for (std::int64_t t = 0; t < s * s; ++t)
    for (std::int64_t c = 0; c < dh; ++c) {
      kw.at(t, c) = xc.at(0, c, t / s, t % s);
      vw.at(t, c) = xc.at(0, dh + c, t / s, t % s);
    }
  CHECK(oracle::max_diff(k, kw) < 1e-14);
  CHECK(oracle::max_diff(v, vw) < 1e-14);
  TD logits = oracle::matmul(xh, oracle::transpose(kw));
  for (auto& e : logits.data()) e /= 2.0;
  auto want = oracle::matmul(oracle::softmax_rows(logits), vw);
  CHECK(oracle::max_diff(cross_resolution_attention(xh, k, v), want) < 1e-14);
  CHECK_THROWS_AS(cross_kv(low, oracle::random({8, 5, 1, 1}, 1), b, 2), ShapeError);
}

TEST_CASE("cross-resolution output is a convex combination of value rows") {
  for (int trial = 0; trial < 30; ++trial) {
    auto kc = oracle::random({9, 4}, 40 + trial, -3, 3), vc = oracle::random({9, 4}, 80 + trial);
    auto out = cross_resolution_attention(oracle::random({12, 4}, 120 + trial, -3, 3), kc, vc);
    for (std::int64_t j = 0; j < 4; ++j) {
      double lo = 1e9, hi = -1e9;
      for (std::int64_t i = 0; i < 9; ++i) lo = std::min(lo, vc.at(i, j)), hi = std::max(hi, vc.at(i, j));
      for (std::int64_t i = 0; i < 12; ++i) {
        CHECK(out.at(i, j) >= lo - 1e-12);
        CHECK(out.at(i, j) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("reduced self-attention examples") {
  const std::int64_t d = 4;
  TD eye(Shape{d, d});
  for (std::int64_t i = 0; i < d; ++i) eye.at(i, i) = 1;
  TD x(Shape{6, d});
  for (std::int64_t i = 0; i < 6; ++i) x.at(i, i % d) = 1;
  TD logits = oracle::matmul(x, oracle::transpose(x));
  for (auto& e : logits.data()) e /= 2.0;
  auto want = oracle::matmul(oracle::softmax_rows(logits), x);
  CHECK(oracle::max_diff(reduced_self_attention(x, 2, 3, eye, eye, eye, eye, 1, 1), want) < 1e-15);

  auto wq = oracle::random({d, d}, 1), wk = oracle::random({d, d}, 2), wv = oracle::random({d, d}, 3);
  auto wo = oracle::random({d, d}, 4);
  auto z = reduced_self_attention(TD(Shape{16, d}), 4, 4, wq, wk, wv, wo, 2, 2);
  CHECK(rows_equal(z, TD(Shape{1, d}), 0.0));  // zero values, zero output

  auto single = oracle::random({1, d}, 5);
  auto one = reduced_self_attention(single, 1, 1, wq, wk, wv, eye, 2, 1);
  CHECK(oracle::max_diff(one, oracle::matmul(single, wv)) < 1e-15);

  // sigma = 2 keeps tokens (0,0), (0,2), (2,0), (2,2) of a 4x4 grid.
  auto xr = oracle::random({16, d}, 6);
  TD sub(Shape{4, d});
  const int keep[] = {0, 2, 8, 10};
  for (int t = 0; t < 4; ++t)
    for (std::int64_t c = 0; c < d; ++c) sub.at(t, c) = xr.at(keep[t], c);
  TD lg = oracle::matmul(xr, oracle::transpose(sub));
  for (auto& e : lg.data()) e /= 2.0;
  CHECK(oracle::max_diff(reduced_self_attention(xr, 4, 4, eye, eye, eye, eye, 1, 2),
                         oracle::matmul(oracle::softmax_rows(lg), sub)) < 1e-14);
  CHECK_THROWS_AS(reduced_self_attention(xr, 4, 4, eye, eye, eye, eye, 1, 3), ConfigError);
}

TEST_CASE("permuting bank rows within a group leaves GFA unchanged") {
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random({7, 4}, 200 + trial, -2, 2);
    auto k = oracle::random({8, 4}, 300 + trial), v = oracle::random({8, 4}, 400 + trial);
    auto kp = k, vp = v;
    // Reverse rows 4..7 (the second of two groups) jointly.
    for (std::int64_t r = 0; r < 4; ++r)
      for (std::int64_t c = 0; c < 4; ++c) {
        kp.at(4 + r, c) = k.at(7 - r, c);
        vp.at(4 + r, c) = v.at(7 - r, c);
      }
    CHECK(oracle::max_diff(gpu_friendly_attention(x, k, v, 2), gpu_friendly_attention(x, kp, vp, 2)) <= 1e-12);
  }
}

TEST_CASE("f32 path runs the same templates") {
  auto x = cast<float>(oracle::random({8, 4}, 1));
  auto k = cast<float>(oracle::random({4, 4}, 2)), v = cast<float>(oracle::random({4, 4}, 3));
  auto g = gpu_friendly_attention(x, k, v, 2);
  auto gd = gpu_friendly_attention(cast<double>(x), cast<double>(k), cast<double>(v), 2);
  CHECK(max_abs_diff(cast<double>(g), gd) < 1e-5);
}

TEST_CASE("attention forwards pass gradient checks") {
  using namespace rtf::ad;
  const double tol = 1e-4, step = 1e-3;
  auto weights = oracle::random({6, 4}, 99);
  auto scalarize = [&](Tape& t, Var y) { return sum(mul(y, t.constant(weights))); };
  for (int trial = 0; trial < 3; ++trial) {
    auto x = oracle::random({6, 4}, 600 + trial);
    auto k = oracle::random({4, 4}, 700 + trial), v = oracle::random({4, 4}, 800 + trial);
    auto kh = oracle::random({3, 2}, 900 + trial), vh = oracle::random({3, 2}, 950 + trial);
    struct Case {
      const char* name;
      std::function<Var(Tape&, Var)> f;
    };
    std::vector<Case> cases = {
        {"ea", [&](Tape& t, Var xv) { return external_attention(xv, t.constant(k), t.constant(v)); }},
        {"ea bank", [&](Tape& t, Var kv) { return external_attention(t.constant(x), kv, t.constant(v)); }},
        {"mhea", [&](Tape& t, Var xv) { return multi_head_external_attention(xv, t.constant(kh), t.constant(vh), 2); }},
        {"gfa", [&](Tape& t, Var xv) { return gpu_friendly_attention(xv, t.constant(k), t.constant(v), 2); }},
        {"gfa bank", [&](Tape& t, Var vv) { return gpu_friendly_attention(t.constant(x), t.constant(k), vv, 2); }},
        {"ca", [&](Tape& t, Var xv) { return cross_resolution_attention(xv, t.constant(k), t.constant(v)); }},
        {"sa", [&](Tape& t, Var xv) {
           auto w = [&](int s) { return t.constant(oracle::random({4, 4}, s)); };
           return reduced_self_attention(xv, 2, 3, w(1), w(2), w(3), w(4), 2, 1);
         }},
    };
    for (auto& c : cases) {
      const TD& input = std::string(c.name) == "ea bank" ? k : std::string(c.name) == "gfa bank" ? v : x;
      auto r = grad_check([&](Tape& t, Var in) {
        Var y = c.f(t, in);
        return scalarize(t, y.shape()[0] == 6 ? y : y);
      }, input, step);
      INFO(c.name << " err=" << r.max_rel_error);
      CHECK(r.max_rel_error < tol);
    }
    // SA with sigma = 2 on a 4x4 grid, and CA through theta.
    auto grid = oracle::random({16, 4}, 1000 + trial);
    auto wsa = oracle::random({16, 4}, 5);
    auto r_sa = grad_check([&](Tape& t, Var xv) {
      auto w = [&](int s) { return t.constant(oracle::random({4, 4}, s)); };
      return sum(mul(reduced_self_attention(xv, 4, 4, w(1), w(2), w(3), w(4), 2, 2), t.constant(wsa)));
    }, grid, step);
    CHECK(r_sa.max_rel_error < tol);
    auto low = oracle::random({1, 6, 4, 4}, 1100 + trial);
    auto r_ca = grad_check([&](Tape& t, Var lv) {
      auto [kc, vc] = cross_kv(lv, t.constant(oracle::random({8, 6, 1, 1}, 3)), t.constant(oracle::random({8}, 4)), 2);
      return scalarize(t, cross_resolution_attention(t.constant(x), kc, vc));
    }, low, step);
    CHECK(r_ca.max_rel_error < tol);
  }
}
