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

// Forward tensor operations on plain values, plus the adjoint helpers the
// autodiff layer builds on. Image tensors are NCHW; token matrices are N x C
// with tokens in row-major (h, w) order.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rtf/tensor.hpp"

namespace rtf {

/// Per-thread instrumentation. matmul_calls counts explicit matmul/matmul_nt
/// invocations (convolutions are not matmul calls); gemm_macs counts
/// multiply-adds in matmuls and convolutions; norm_macs counts one per
/// element for batch norm, softmax and (grouped) double normalization.
struct OpCounters {
  std::int64_t matmul_calls = 0;
  std::int64_t gemm_macs = 0;
  std::int64_t norm_macs = 0;
  std::int64_t total_macs() const { return gemm_macs + norm_macs; }
};

OpCounters& op_counters();
void reset_op_counters();

// ---- matrices --------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t start, std::int64_t count);
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
/// Rows at the given indices, in order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> rows);

// ---- normalization ---------------------------------------------------------

/// Numerically stable softmax along `axis` (negative counts from the back).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

inline constexpr double kDoubleNormEps = 1e-9;

/// Two-step normalization of an N x M attention map: softmax over the token
/// axis (per column), then L1 over contiguous column groups of width M/groups
/// (per row). groups == 1 is plain double normalization.
template <typename T>
Tensor<T> grouped_double_norm(const Tensor<T>& a, std::int64_t groups);
template <typename T>
Tensor<T> double_norm(const Tensor<T>& a) {
  return grouped_double_norm(a, 1);
}

/// The column softmax alone (first step of double normalization).
template <typename T>
Tensor<T> column_softmax(const Tensor<T>& a);

// ---- elementwise -----------------------------------------------------------

/// a + b where b has a's shape, is a single scalar, or is a per-channel
/// vector (shape {C} against a rank-4 NCHW tensor, or {cols} against a
/// matrix).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> s);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

enum class Broadcast { same, scalar, channel, column };
/// Classifies b's broadcast against a, throwing ShapeError if unsupported.
Broadcast broadcast_kind(const Shape& a, const Shape& b);

// ---- images ----------------------------------------------------------------

struct Conv2dSpec {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
};

std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t pad);

/// Cross-correlation. x: [n, c_in, h, w]; weight: [c_out, c_in/groups, kh, kw];
/// bias (optional, may be empty): [c_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dSpec& spec);

/// Adjoint of conv2d. Any of the output pointers may be null; outputs are
/// overwritten (not accumulated).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& grad_out, const Conv2dSpec& spec,
                     Tensor<T>* grad_x, Tensor<T>* grad_w, Tensor<T>* grad_b);

/// Average pooling. Padding cells are excluded from each window's mean.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::int64_t kernel,
                     std::int64_t stride, std::int64_t padding);
template <typename T>
Tensor<T> avg_pool2d_backward(const Tensor<T>& grad_out, const Shape& in_shape,
                              std::int64_t kernel, std::int64_t stride,
                              std::int64_t padding);

/// Partitions the input into out_h x out_w windows
/// [floor(i*in/out), ceil((i+1)*in/out)). Windows overlap when out > in.
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::int64_t out_h,
                              std::int64_t out_w);
template <typename T>
Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>& grad_out,
                                       const Shape& in_shape);

/// Bilinear interpolation with half-pixel centers (align_corners = false).
/// Interpolates as a + t*(b - a), so constant fields are reproduced exactly.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h,
                          std::int64_t out_w);
template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out,
                                   const Shape& in_shape);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> inv_std;  // 1 / sqrt(var + eps), population variance
  std::vector<double> var;
};

/// Normalizes every channel of an NCHW (or N x C) tensor by batch
/// statistics; `stats` receives them.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, double eps, BatchStats& stats);
template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma,
                          const Tensor<T>& beta, const Tensor<T>& running_mean,
                          const Tensor<T>& running_var, double eps);

// ---- layout ----------------------------------------------------------------

/// Image i of a batch as a [1, c, h, w] tensor.
template <typename T>
Tensor<T> select_batch(const Tensor<T>& x, std::int64_t index);
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count);
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);
/// [1, c, h, w] -> [h*w, c]
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);
/// [h*w, c] -> [1, c, h, w]
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::int64_t h, std::int64_t w);
/// Tokens of an h x w grid kept at every `stride`-th row and column; this is
/// the sampling pattern of a 1x1 convolution with that stride.
std::vector<std::int64_t> strided_token_indices(std::int64_t h, std::int64_t w,
                                                std::int64_t stride);

}  // namespace rtf
