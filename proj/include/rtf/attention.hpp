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

// Attention variants over token matrices (N x d). Every function is a
// template over the operand type so the same code runs on plain tensors
// (f32 or f64, forward only) and on ad::Var (differentiable). Operations are
// found by argument-dependent lookup in rtf:: or rtf::ad::.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rtf/autograd.hpp"
#include "rtf/ops.hpp"

namespace rtf::attn {

namespace detail {
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}
inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
template <class X>
void require_matrix(const X& x, const char* what) {
  require(x.shape().size() == 2, std::string(what) + " must be a matrix, got " + to_string(x.shape()));
}
}  // namespace detail

/// EA(X) = DN(X K^T) V with K, V : M x d.
template <class X>
X external_attention(const X& x, const X& k, const X& v) {
  detail::require_matrix(x, "EA input");
  detail::require(k.shape() == v.shape() && k.shape().size() == 2,
                  "EA key/value banks must share an M x d shape");
  detail::require(x.shape()[1] == k.shape()[1],
                  "EA feature dimension mismatch: input " + to_string(x.shape()) + " vs bank " +
                      to_string(k.shape()));
  return matmul(double_norm(matmul_nt(x, k)), v);
}

/// Concat_i EA(X_i, K', V') over H column heads sharing one M x d/H bank.
template <class X>
X multi_head_external_attention(const X& x, const X& k, const X& v, std::int64_t heads) {
  detail::require_matrix(x, "MHEA input");
  const std::int64_t d = x.shape()[1];
  detail::require_config(heads >= 1 && d % heads == 0,
                         "MHEA: " + std::to_string(heads) + " heads do not divide d=" +
                             std::to_string(d));
  const std::int64_t dh = d / heads;
  detail::require(k.shape().size() == 2 && k.shape()[1] == dh && k.shape() == v.shape(),
                  "MHEA bank " + to_string(k.shape()) + " must be M x " + std::to_string(dh));
  std::vector<X> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h)
    outs.push_back(external_attention(slice_cols(x, h * dh, dh), k, v));
  if (heads == 1) return outs[0];
  return concat_cols(std::span<const X>(outs));
}

/// GFA(X) = GDN_H(X K_g^T) V_g with K_g, V_g : M_g x d: two integrated
/// products regardless of the group count.
template <class X>
X gpu_friendly_attention(const X& x, const X& kg, const X& vg, std::int64_t groups) {
  detail::require_matrix(x, "GFA input");
  detail::require(kg.shape() == vg.shape() && kg.shape().size() == 2,
                  "GFA banks must share an M_g x d shape");
  detail::require(x.shape()[1] == kg.shape()[1],
                  "GFA feature dimension mismatch: input " + to_string(x.shape()) + " vs bank " +
                      to_string(kg.shape()));
  detail::require_config(groups >= 1 && kg.shape()[0] % groups == 0,
                         "GFA: " + std::to_string(groups) + " groups do not divide M_g=" +
                             std::to_string(kg.shape()[0]));
  return matmul(grouped_double_norm(matmul_nt(x, kg), groups), vg);
}

/// theta then phi: pools a [1, d_l, h, w] map to s x s, projects with a 1x1
/// convolution to 2*d_h channels and splits into (K_c, V_c), each s^2 x d_h.
template <class X>
std::pair<X, X> cross_kv(const X& low_map, const X& theta_w, const X& theta_b, std::int64_t s) {
  detail::require(low_map.shape().size() == 4 && low_map.shape()[0] == 1,
                  "cross-feature source must be a single [1,c,h,w] map, got " +
                      to_string(low_map.shape()));
  detail::require(theta_w.shape().size() == 4 && theta_w.shape()[1] == low_map.shape()[1],
                  "theta projection " + to_string(theta_w.shape()) + " does not accept " +
                      to_string(low_map.shape()));
  detail::require(theta_w.shape()[0] % 2 == 0, "theta must produce 2*d_h channels");
  detail::require_config(s >= 1, "cross-feature side must be >= 1");
  const std::int64_t dh = theta_w.shape()[0] / 2;
  X xc = conv2d(adaptive_avg_pool2d(low_map, s, s), theta_w, theta_b, Conv2dSpec{});
  return {to_tokens(slice_channels(xc, 0, dh)), to_tokens(slice_channels(xc, dh, dh))};
}

/// CA(X_h) = Softmax(X_h K_c^T / sqrt(d_h)) V_c, single head.
template <class X>
X cross_resolution_attention(const X& xh, const X& kc, const X& vc) {
  detail::require_matrix(xh, "CA query");
  detail::require(kc.shape() == vc.shape() && kc.shape().size() == 2,
                  "CA key/value tokens must share a shape");
  detail::require(xh.shape()[1] == kc.shape()[1],
                  "CA channel mismatch: queries " + to_string(xh.shape()) + " vs keys " +
                      to_string(kc.shape()));
  const double inv = 1.0 / std::sqrt(static_cast<double>(xh.shape()[1]));
  return matmul(softmax(scale(matmul_nt(xh, kc), inv), -1), vc);
}

/// Multi-head softmax attention whose keys and values come from the h x w
/// token grid subsampled by sigma (a strided 1x1 projection). Projections
/// are d x d matrices applied on the right.
template <class X>
X reduced_self_attention(const X& x, std::int64_t h, std::int64_t w, const X& wq, const X& wk,
                         const X& wv, const X& wo, std::int64_t heads, std::int64_t sigma) {
  detail::require_matrix(x, "SA input");
  const std::int64_t d = x.shape()[1];
  detail::require(x.shape()[0] == h * w, "SA token count does not match the grid");
  detail::require_config(sigma >= 1 && h % sigma == 0 && w % sigma == 0,
                         "SA: sigma=" + std::to_string(sigma) + " does not divide the " +
                             std::to_string(h) + "x" + std::to_string(w) + " grid");
  detail::require_config(heads >= 1 && d % heads == 0, "SA: heads do not divide d");
  for (const X* p : {&wq, &wk, &wv, &wo})
    detail::require(p->shape() == Shape{d, d}, "SA projections must be d x d");
  const std::int64_t dh = d / heads;
  const auto idx = strided_token_indices(h, w, sigma);
  const X kv_src = sigma == 1 ? x : gather_rows(x, std::span<const std::int64_t>(idx));
  const X q = matmul(x, wq);
  const X k = matmul(kv_src, wk);
  const X v = matmul(kv_src, wv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<X> outs;
  for (std::int64_t i = 0; i < heads; ++i) {
    const X a = softmax(scale(matmul_nt(slice_cols(q, i * dh, dh), slice_cols(k, i * dh, dh)), inv), -1);
    outs.push_back(matmul(a, slice_cols(v, i * dh, dh)));
  }
  const X cat = heads == 1 ? outs[0] : concat_cols(std::span<const X>(outs));
  return matmul(cat, wo);
}

// ---- analytic multiply-add counts (matmul products plus one per normalized
// element), matching the instrumented counters ------------------------------

struct Macs {
  std::int64_t gemm = 0;
  std::int64_t norm = 0;
  std::int64_t matmul_calls = 0;
  std::int64_t total() const { return gemm + norm; }
  std::int64_t flops() const { return 2 * total(); }
};

inline Macs ea_macs(std::int64_t n, std::int64_t d, std::int64_t m) {
  return {2 * n * d * m, n * m, 2};
}
inline Macs mhea_macs(std::int64_t n, std::int64_t d, std::int64_t m, std::int64_t heads) {
  return {heads * 2 * n * (d / heads) * m, heads * n * m, 2 * heads};
}
inline Macs gfa_macs(std::int64_t n, std::int64_t d, std::int64_t mg) {
  return {2 * n * d * mg, n * mg, 2};
}
/// Attention products only; the theta projection is a convolution counted
/// with the layer that owns it.
inline Macs ca_macs(std::int64_t n, std::int64_t dh, std::int64_t s) {
  return {2 * n * s * s * dh, n * s * s, 2};
}
inline Macs theta_macs(std::int64_t dl, std::int64_t dh, std::int64_t s) {
  return {s * s * dl * 2 * dh, 0, 0};
}
inline Macs sa_macs(std::int64_t n, std::int64_t d, std::int64_t heads, std::int64_t sigma) {
  const std::int64_t nk = n / (sigma * sigma);
  return {2 * n * d * d + 2 * nk * d * d + 2 * n * nk * d, heads * n * nk, 4 + 2 * heads};
}

}  // namespace rtf::attn
