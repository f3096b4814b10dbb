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

#include "rtf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rtf/kernels.hpp"

namespace rtf {
namespace {

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) +
                     ", got " + to_string(s));
}

void require_image(const Shape& s, const char* op) { require_rank(s, 4, op); }

template <typename T>
void check_finite_output(const Tensor<T>& t, const char* op) {
  if (nan_check_enabled() && !all_finite(t))
    throw NumericError(std::string("non-finite value produced by ") + op);
}

// im2col for one image and one channel group: rows (c, ky, kx), cols (oy, ox).
template <typename T>
void im2col(const T* img, std::int64_t channels, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, T* cols) {
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t ky = 0; ky < kh; ++ky)
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((c * kh + ky) * kw + kx) * oh * ow;
        const T* plane = img + c * h * w;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          T* out = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = plane + iy * w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? src[ix] : T{0};
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, std::int64_t channels, std::int64_t h, std::int64_t w,
                std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
                std::int64_t oh, std::int64_t ow, T* img) {
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t ky = 0; ky < kh; ++ky)
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((c * kh + ky) * kw + kx) * oh * ow;
        T* plane = img + c * h * w;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* in = row + oy * ow;
          T* dst = plane + iy * w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += in[ox];
          }
        }
      }
}

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, kh, kw, oh, ow, groups, cin_g, cout_g;
  bool pointwise;  // 1x1, stride 1, no padding: cols alias the input
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& weight,
                       const Conv2dSpec& spec) {
  require_image(x.shape(), "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.groups = spec.groups;
  if (spec.groups < 1 || g.cin % spec.groups != 0 || g.cout % spec.groups != 0)
    throw ShapeError("conv2d groups " + std::to_string(spec.groups) +
                     " do not divide channels of input " + to_string(x.shape()) +
                     " / weight " + to_string(weight.shape()));
  g.cin_g = g.cin / spec.groups;
  g.cout_g = g.cout / spec.groups;
  if (weight.dim(1) != g.cin_g)
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) +
                     " vs weight " + to_string(weight.shape()));
  if (spec.stride < 1 || spec.padding < 0)
    throw ShapeError("conv2d stride must be >= 1 and padding >= 0");
  g.oh = conv_out_size(g.h, g.kh, spec.stride, spec.padding);
  g.ow = conv_out_size(g.w, g.kw, spec.stride, spec.padding);
  if (g.oh < 1 || g.ow < 1)
    throw ShapeError("conv2d output size is non-positive for input " +
                     to_string(x.shape()) + " and weight " + to_string(weight.shape()));
  g.pointwise = g.kh == 1 && g.kw == 1 && spec.stride == 1 && spec.padding == 0;
  return g;
}

std::int64_t norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return axis;
}

// Channel layout for batch norm: rank 4 -> (n, c, hw); rank 2 -> (n, c, 1).
struct ChannelLayout {
  std::int64_t outer, channels, inner;
};
ChannelLayout channel_layout(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
  if (s.size() == 2) return {s[0], s[1], 1};
  throw ShapeError("batch norm expects an NCHW tensor or a matrix, got " + to_string(s));
}

struct Window {
  std::int64_t begin, end;
};
Window adaptive_window(std::int64_t i, std::int64_t in, std::int64_t out) {
  const std::int64_t b = (i * in) / out;
  const std::int64_t e = ((i + 1) * in + out - 1) / out;
  return {b, e};
}

// Half-pixel source coordinate for bilinear sampling.
struct Tap {
  std::int64_t i0, i1;
  double t;
};
Tap bilinear_tap(std::int64_t dst, std::int64_t in, std::int64_t out) {
  double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) - 0.5;
  if (src < 0) src = 0;
  auto i0 = static_cast<std::int64_t>(std::floor(src));
  if (i0 > in - 1) i0 = in - 1;
  const std::int64_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

void reset_op_counters() { op_counters() = OpCounters{}; }

std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

// ---- matrices --------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " * " +
                     to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c(Shape{m, n});
  kernels::gemm<T>(false, false, m, n, k, a.raw(), k, b.raw(), n, false, c.raw(), n);
  auto& ctr = op_counters();
  ++ctr.matmul_calls;
  ctr.gemm_macs += m * n * k;
  check_finite_output(c, "matmul");
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt lhs");
  require_rank(b.shape(), 2, "matmul_nt rhs");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) +
                     " * transpose of " + to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor<T> c(Shape{m, n});
  kernels::gemm<T>(false, true, m, n, k, a.raw(), k, b.raw(), k, false, c.raw(), n);
  auto& ctr = op_counters();
  ++ctr.matmul_calls;
  ctr.gemm_macs += m * n * k;
  check_finite_output(c, "matmul_nt");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::int64_t start, std::int64_t count) {
  require_rank(a.shape(), 2, "slice_cols");
  if (start < 0 || count < 1 || start + count > a.dim(1))
    throw ShapeError("slice_cols [" + std::to_string(start) + ", +" +
                     std::to_string(count) + ") out of range for " + to_string(a.shape()));
  const auto r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{r, count});
  for (std::int64_t i = 0; i < r; ++i)
    std::copy_n(a.raw() + i * c + start, count, out.raw() + i * count);
  return out;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const auto r = parts[0].dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_cols");
    if (p.dim(0) != r)
      throw ShapeError("concat_cols row mismatch: " + to_string(parts[0].shape()) +
                       " vs " + to_string(p.shape()));
    total += p.dim(1);
  }
  Tensor<T> out(Shape{r, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const auto c = p.dim(1);
    for (std::int64_t i = 0; i < r; ++i)
      std::copy_n(p.raw() + i * c, c, out.raw() + i * total + off);
    off += c;
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::int64_t> rows) {
  require_rank(a.shape(), 2, "gather_rows");
  const auto c = a.dim(1);
  Tensor<T> out(Shape{static_cast<std::int64_t>(rows.size()), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.dim(0)) throw ShapeError("gather_rows index out of range");
    std::copy_n(a.raw() + rows[i] * c, c, out.raw() + static_cast<std::int64_t>(i) * c);
  }
  return out;
}

// ---- normalization ---------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto ax = norm_axis(axis, x.rank());
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (std::int64_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::int64_t len = x.shape()[ax];
  Tensor<T> y(x.shape());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const T* src = x.raw() + o * len * inner + in;
      T* dst = y.raw() + o * len * inner + in;
      T mx = src[0];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, src[j * inner]);
      T s = 0;
      for (std::int64_t j = 0; j < len; ++j) {
        const T e = std::exp(src[j * inner] - mx);
        dst[j * inner] = e;
        s += e;
      }
      const T inv = T{1} / s;
      for (std::int64_t j = 0; j < len; ++j) dst[j * inner] *= inv;
    }
  op_counters().norm_macs += x.size();
  check_finite_output(y, "softmax");
  return y;
}

template <typename T>
Tensor<T> column_softmax(const Tensor<T>& a) {
  require_rank(a.shape(), 2, "column_softmax");
  const auto rows = a.dim(0), cols = a.dim(1);
  Tensor<T> s(a.shape());
  std::vector<T> mx(static_cast<std::size_t>(cols));
  std::vector<T> den(static_cast<std::size_t>(cols), T{0});
  for (std::int64_t j = 0; j < cols; ++j) mx[j] = a[j];
  for (std::int64_t i = 1; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) mx[j] = std::max(mx[j], a[i * cols + j]);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      const T e = std::exp(a[i * cols + j] - mx[j]);
      s[i * cols + j] = e;
      den[j] += e;
    }
  for (std::int64_t j = 0; j < cols; ++j) den[j] = T{1} / den[j];
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) s[i * cols + j] *= den[j];
  return s;
}

template <typename T>
Tensor<T> grouped_double_norm(const Tensor<T>& a, std::int64_t groups) {
  require_rank(a.shape(), 2, "double_norm");
  const auto rows = a.dim(0), cols = a.dim(1);
  if (groups < 1 || cols % groups != 0)
    throw ConfigError("grouped double normalization: " + std::to_string(groups) +
                      " groups do not divide " + std::to_string(cols) + " columns");
  const std::int64_t width = cols / groups;
  Tensor<T> out = column_softmax(a);
  const T eps = static_cast<T>(kDoubleNormEps);
  for (std::int64_t i = 0; i < rows; ++i) {
    T* row = out.raw() + i * cols;
    for (std::int64_t g = 0; g < groups; ++g) {
      T* seg = row + g * width;
      T s = 0;
      for (std::int64_t j = 0; j < width; ++j) s += seg[j];
      const T den = s + eps;
      for (std::int64_t j = 0; j < width; ++j) seg[j] /= den;
    }
  }
  op_counters().norm_macs += a.size();
  check_finite_output(out, "double_norm");
  return out;
}

// ---- elementwise -----------------------------------------------------------

Broadcast broadcast_kind(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (numel(b) == 1) return Broadcast::scalar;
  if (b.size() == 1 && a.size() == 4 && b[0] == a[1]) return Broadcast::channel;
  if (b.size() == 1 && a.size() == 2 && b[0] == a[1]) return Broadcast::column;
  throw ShapeError("incompatible shapes for broadcasting: " + to_string(a) + " and " +
                   to_string(b));
}

namespace {
template <typename T, typename F>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  const auto kind = broadcast_kind(a.shape(), b.shape());
  Tensor<T> out(a.shape());
  const auto n = a.size();
  switch (kind) {
    case Broadcast::same:
      for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
      break;
    case Broadcast::scalar:
      for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[0]);
      break;
    case Broadcast::channel: {
      const auto c = a.dim(1), hw = a.dim(2) * a.dim(3);
      for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[(i / hw) % c]);
      break;
    }
    case Broadcast::column: {
      const auto c = a.dim(1);
      for (std::int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i % c]);
      break;
    }
  }
  return out;
}
}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, [](T x, T y) { return x * y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> s) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return Tensor<T>::scalar(s);
}

// ---- images ----------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dSpec& spec) {
  const ConvGeom g = conv_geometry(x, weight, spec);
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != g.cout))
    throw ShapeError("conv2d bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  Tensor<T> y(Shape{g.n, g.cout, g.oh, g.ow});
  const std::int64_t L = g.oh * g.ow;
  const std::int64_t K = g.cin_g * g.kh * g.kw;
  std::vector<T> cols;
  if (!g.pointwise) cols.resize(static_cast<std::size_t>(K * L));
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* img = x.raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
      const T* colp = img;
      if (!g.pointwise) {
        im2col(img, g.cin_g, g.h, g.w, g.kh, g.kw, spec.stride, spec.padding, g.oh, g.ow,
               cols.data());
        colp = cols.data();
      }
      const T* wg = weight.raw() + grp * g.cout_g * K;
      T* out = y.raw() + (n * g.cout + grp * g.cout_g) * L;
      kernels::gemm<T>(false, false, g.cout_g, L, K, wg, K, colp, L, false, out, L);
    }
  if (!bias.empty())
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t c = 0; c < g.cout; ++c) {
        T* plane = y.raw() + (n * g.cout + c) * L;
        const T b = bias[c];
        for (std::int64_t i = 0; i < L; ++i) plane[i] += b;
      }
  op_counters().gemm_macs += g.n * g.cout * K * L;
  check_finite_output(y, "conv2d");
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     const Conv2dSpec& spec, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     Tensor<T>* grad_b) {
  const ConvGeom g = conv_geometry(x, weight, spec);
  const std::int64_t L = g.oh * g.ow;
  const std::int64_t K = g.cin_g * g.kh * g.kw;
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_w) *grad_w = Tensor<T>(weight.shape());
  if (grad_b) *grad_b = Tensor<T>(Shape{g.cout});
  std::vector<T> cols(static_cast<std::size_t>(K * L));
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* gout = grad_out.raw() + (n * g.cout + grp * g.cout_g) * L;
      if (grad_w) {
        const T* img = x.raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
        const T* colp = img;
        if (!g.pointwise) {
          im2col(img, g.cin_g, g.h, g.w, g.kh, g.kw, spec.stride, spec.padding, g.oh,
                 g.ow, cols.data());
          colp = cols.data();
        }
        kernels::gemm<T>(false, true, g.cout_g, K, L, gout, L, colp, L, true,
                         grad_w->raw() + grp * g.cout_g * K, K);
      }
      if (grad_x) {
        const T* wg = weight.raw() + grp * g.cout_g * K;
        T* gimg = grad_x->raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
        if (g.pointwise) {
          kernels::gemm<T>(true, false, K, L, g.cout_g, wg, K, gout, L, true, gimg, L);
        } else {
          kernels::gemm<T>(true, false, K, L, g.cout_g, wg, K, gout, L, false, cols.data(), L);
          col2im_add(cols.data(), g.cin_g, g.h, g.w, g.kh, g.kw, spec.stride, spec.padding,
                     g.oh, g.ow, gimg);
        }
      }
    }
  if (grad_b)
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t c = 0; c < g.cout; ++c) {
        const T* plane = grad_out.raw() + (n * g.cout + c) * L;
        T s = 0;
        for (std::int64_t i = 0; i < L; ++i) s += plane[i];
        (*grad_b)[c] += s;
      }
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::int64_t kernel, std::int64_t stride,
                     std::int64_t padding) {
  require_image(x.shape(), "avg_pool2d");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding)
    throw ShapeError("avg_pool2d kernel " + std::to_string(kernel) +
                     " is larger than padded input " + to_string(x.shape()));
  const auto oh = conv_out_size(h, kernel, stride, padding);
  const auto ow = conv_out_size(w, kernel, stride, padding);
  Tensor<T> y(Shape{n, c, oh, ow});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = y.raw() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto y0 = std::max<std::int64_t>(oy * stride - padding, 0);
      const auto y1 = std::min(oy * stride - padding + kernel, h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto x0 = std::max<std::int64_t>(ox * stride - padding, 0);
        const auto x1 = std::min(ox * stride - padding + kernel, w);
        T s = 0;
        for (auto iy = y0; iy < y1; ++iy)
          for (auto ix = x0; ix < x1; ++ix) s += src[iy * w + ix];
        dst[oy * ow + ox] = s / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2d_backward(const Tensor<T>& grad_out, const Shape& in_shape,
                              std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const auto h = in_shape[2], w = in_shape[3];
  const auto oh = grad_out.dim(2), ow = grad_out.dim(3);
  Tensor<T> gx(in_shape);
  for (std::int64_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
    const T* g = grad_out.raw() + p * oh * ow;
    T* dst = gx.raw() + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto y0 = std::max<std::int64_t>(oy * stride - padding, 0);
      const auto y1 = std::min(oy * stride - padding + kernel, h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto x0 = std::max<std::int64_t>(ox * stride - padding, 0);
        const auto x1 = std::min(ox * stride - padding + kernel, w);
        const T v = g[oy * ow + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
        for (auto iy = y0; iy < y1; ++iy)
          for (auto ix = x0; ix < x1; ++ix) dst[iy * w + ix] += v;
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_image(x.shape(), "adaptive_avg_pool2d");
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool2d output dims must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y(Shape{n, c, out_h, out_w});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = y.raw() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto wy = adaptive_window(oy, h, out_h);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto wx = adaptive_window(ox, w, out_w);
        T s = 0;
        for (auto iy = wy.begin; iy < wy.end; ++iy)
          for (auto ix = wx.begin; ix < wx.end; ++ix) s += src[iy * w + ix];
        dst[oy * out_w + ox] =
            s / static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
  const auto h = in_shape[2], w = in_shape[3];
  const auto oh = grad_out.dim(2), ow = grad_out.dim(3);
  Tensor<T> gx(in_shape);
  for (std::int64_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
    const T* g = grad_out.raw() + p * oh * ow;
    T* dst = gx.raw() + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto wy = adaptive_window(oy, h, oh);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto wx = adaptive_window(ox, w, ow);
        const T v = g[oy * ow + ox] /
                    static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
        for (auto iy = wy.begin; iy < wy.end; ++iy)
          for (auto ix = wx.begin; ix < wx.end; ++ix) dst[iy * w + ix] += v;
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_image(x.shape(), "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize output dims must be >= 1");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) return x;
  std::vector<Tap> ty(static_cast<std::size_t>(out_h)), tx(static_cast<std::size_t>(out_w));
  for (std::int64_t i = 0; i < out_h; ++i) ty[i] = bilinear_tap(i, h, out_h);
  for (std::int64_t i = 0; i < out_w; ++i) tx[i] = bilinear_tap(i, w, out_w);
  Tensor<T> y(Shape{n, c, out_h, out_w});
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = y.raw() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      const T* r0 = src + a.i0 * w;
      const T* r1 = src + a.i1 * w;
      const T t = static_cast<T>(a.t);
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        const T u = static_cast<T>(b.t);
        const T top = r0[b.i0] + u * (r0[b.i1] - r0[b.i0]);
        const T bot = r1[b.i0] + u * (r1[b.i1] - r1[b.i0]);
        dst[oy * out_w + ox] = top + t * (bot - top);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& grad_out, const Shape& in_shape) {
  const auto h = in_shape[2], w = in_shape[3];
  const auto oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (h == oh && w == ow) return grad_out;
  std::vector<Tap> ty(static_cast<std::size_t>(oh)), tx(static_cast<std::size_t>(ow));
  for (std::int64_t i = 0; i < oh; ++i) ty[i] = bilinear_tap(i, h, oh);
  for (std::int64_t i = 0; i < ow; ++i) tx[i] = bilinear_tap(i, w, ow);
  Tensor<T> gx(in_shape);
  for (std::int64_t p = 0; p < in_shape[0] * in_shape[1]; ++p) {
    const T* g = grad_out.raw() + p * oh * ow;
    T* dst = gx.raw() + p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const Tap& a = ty[oy];
      const T t = static_cast<T>(a.t);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const Tap& b = tx[ox];
        const T u = static_cast<T>(b.t);
        const T v = g[oy * ow + ox];
        dst[a.i0 * w + b.i0] += v * (1 - t) * (1 - u);
        dst[a.i0 * w + b.i1] += v * (1 - t) * u;
        dst[a.i1 * w + b.i0] += v * t * (1 - u);
        dst[a.i1 * w + b.i1] += v * t * u;
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, BatchStats& stats) {
  const auto lay = channel_layout(x.shape());
  if (gamma.size() != lay.channels || beta.size() != lay.channels)
    throw ShapeError("batch norm parameters " + to_string(gamma.shape()) + " do not match " +
                     std::to_string(lay.channels) + " channels of " + to_string(x.shape()));
  const double count = static_cast<double>(lay.outer * lay.inner);
  stats.mean.assign(static_cast<std::size_t>(lay.channels), 0.0);
  stats.var.assign(static_cast<std::size_t>(lay.channels), 0.0);
  stats.inv_std.assign(static_cast<std::size_t>(lay.channels), 0.0);
  for (std::int64_t o = 0; o < lay.outer; ++o)
    for (std::int64_t c = 0; c < lay.channels; ++c) {
      const T* p = x.raw() + (o * lay.channels + c) * lay.inner;
      double s = 0;
      for (std::int64_t i = 0; i < lay.inner; ++i) s += p[i];
      stats.mean[c] += s;
    }
  for (auto& m : stats.mean) m /= count;
  for (std::int64_t o = 0; o < lay.outer; ++o)
    for (std::int64_t c = 0; c < lay.channels; ++c) {
      const T* p = x.raw() + (o * lay.channels + c) * lay.inner;
      const double m = stats.mean[c];
      double s = 0;
      for (std::int64_t i = 0; i < lay.inner; ++i) s += (p[i] - m) * (p[i] - m);
      stats.var[c] += s;
    }
  for (std::int64_t c = 0; c < lay.channels; ++c) {
    stats.var[c] /= count;
    stats.inv_std[c] = 1.0 / std::sqrt(stats.var[c] + eps);
  }
  Tensor<T> y(x.shape());
  for (std::int64_t o = 0; o < lay.outer; ++o)
    for (std::int64_t c = 0; c < lay.channels; ++c) {
      const auto off = (o * lay.channels + c) * lay.inner;
      const double a = gamma[c] * stats.inv_std[c];
      const double b = beta[c] - a * stats.mean[c];
      for (std::int64_t i = 0; i < lay.inner; ++i)
        y[off + i] = static_cast<T>(a * x[off + i] + b);
    }
  op_counters().norm_macs += x.size();
  check_finite_output(y, "batch_norm");
  return y;
}

template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const Tensor<T>& running_mean, const Tensor<T>& running_var,
                          double eps) {
  const auto lay = channel_layout(x.shape());
  if (gamma.size() != lay.channels || beta.size() != lay.channels ||
      running_mean.size() != lay.channels || running_var.size() != lay.channels)
    throw ShapeError("batch norm parameters do not match " + std::to_string(lay.channels) +
                     " channels of " + to_string(x.shape()));
  Tensor<T> y(x.shape());
  for (std::int64_t o = 0; o < lay.outer; ++o)
    for (std::int64_t c = 0; c < lay.channels; ++c) {
      const auto off = (o * lay.channels + c) * lay.inner;
      const double a = gamma[c] / std::sqrt(static_cast<double>(running_var[c]) + eps);
      const double b = beta[c] - a * running_mean[c];
      for (std::int64_t i = 0; i < lay.inner; ++i)
        y[off + i] = static_cast<T>(a * x[off + i] + b);
    }
  op_counters().norm_macs += x.size();
  check_finite_output(y, "batch_norm");
  return y;
}

// ---- layout ----------------------------------------------------------------

template <typename T>
Tensor<T> select_batch(const Tensor<T>& x, std::int64_t index) {
  require_image(x.shape(), "select_batch");
  if (index < 0 || index >= x.dim(0)) throw ShapeError("select_batch index out of range");
  const auto per = x.size() / x.dim(0);
  std::vector<T> data(x.raw() + index * per, x.raw() + (index + 1) * per);
  return Tensor<T>(Shape{1, x.dim(1), x.dim(2), x.dim(3)}, std::move(data));
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_batch of nothing");
  Shape s = parts[0].shape();
  require_image(s, "concat_batch");
  std::int64_t n = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(1) != s[1] || p.dim(2) != s[2] || p.dim(3) != s[3])
      throw ShapeError("concat_batch shape mismatch: " + to_string(s) + " vs " +
                       to_string(p.shape()));
    n += p.dim(0);
  }
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(n * s[1] * s[2] * s[3]));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  s[0] = n;
  return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t start, std::int64_t count) {
  require_image(x.shape(), "slice_channels");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (start < 0 || count < 1 || start + count > c)
    throw ShapeError("slice_channels out of range for " + to_string(x.shape()));
  Tensor<T> y(Shape{n, count, x.dim(2), x.dim(3)});
  for (std::int64_t b = 0; b < n; ++b)
    std::copy_n(x.raw() + (b * c + start) * hw, count * hw, y.raw() + b * count * hw);
  return y;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const Shape& s0 = parts[0].shape();
  require_image(s0, "concat_channels");
  std::int64_t c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3])
      throw ShapeError("concat_channels shape mismatch: " + to_string(s0) + " vs " +
                       to_string(p.shape()));
    c += p.dim(1);
  }
  const auto n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> y(Shape{n, c, s0[2], s0[3]});
  for (std::int64_t b = 0; b < n; ++b) {
    std::int64_t off = 0;
    for (const auto& p : parts) {
      const auto pc = p.dim(1);
      std::copy_n(p.raw() + b * pc * hw, pc * hw, y.raw() + (b * c + off) * hw);
      off += pc;
    }
  }
  return y;
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  require_image(x.shape(), "to_tokens");
  if (x.dim(0) != 1) throw ShapeError("to_tokens expects a single image, got " + to_string(x.shape()));
  const auto c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> t(Shape{hw, c});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < hw; ++i) t[i * c + ch] = x[ch * hw + i];
  return t;
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::int64_t h, std::int64_t w) {
  require_rank(tokens.shape(), 2, "from_tokens");
  if (tokens.dim(0) != h * w)
    throw ShapeError("from_tokens: " + to_string(tokens.shape()) + " is not " +
                     std::to_string(h) + "x" + std::to_string(w) + " tokens");
  const auto c = tokens.dim(1), hw = h * w;
  Tensor<T> x(Shape{1, c, h, w});
  for (std::int64_t i = 0; i < hw; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) x[ch * hw + i] = tokens[i * c + ch];
  return x;
}

std::vector<std::int64_t> strided_token_indices(std::int64_t h, std::int64_t w,
                                                std::int64_t stride) {
  std::vector<std::int64_t> idx;
  for (std::int64_t y = 0; y < h; y += stride)
    for (std::int64_t x = 0; x < w; x += stride) idx.push_back(y * w + x);
  return idx;
}

#define RTF_INSTANTIATE(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> transpose(const Tensor<T>&);                                       \
  template Tensor<T> slice_cols(const Tensor<T>&, std::int64_t, std::int64_t);          \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                           \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>);      \
  template Tensor<T> softmax(const Tensor<T>&, int);                                    \
  template Tensor<T> column_softmax(const Tensor<T>&);                                  \
  template Tensor<T> grouped_double_norm(const Tensor<T>&, std::int64_t);               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                            \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                            const Conv2dSpec&);                                         \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                const Conv2dSpec&, Tensor<T>*, Tensor<T>*, Tensor<T>*); \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::int64_t, std::int64_t,           \
                                std::int64_t);                                          \
  template Tensor<T> avg_pool2d_backward(const Tensor<T>&, const Shape&, std::int64_t,  \
                                         std::int64_t, std::int64_t);                   \
  template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, std::int64_t, std::int64_t); \
  template Tensor<T> adaptive_avg_pool2d_backward(const Tensor<T>&, const Shape&);      \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::int64_t, std::int64_t);     \
  template Tensor<T> bilinear_resize_backward(const Tensor<T>&, const Shape&);          \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&,               \
                                      const Tensor<T>&, double, BatchStats&);           \
  template Tensor<T> batch_norm_eval(const Tensor<T>&, const Tensor<T>&,                \
                                     const Tensor<T>&, const Tensor<T>&,                \
                                     const Tensor<T>&, double);                         \
  template Tensor<T> select_batch(const Tensor<T>&, std::int64_t);                      \
  template Tensor<T> concat_batch(std::span<const Tensor<T>>);                          \
  template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);      \
  template Tensor<T> concat_channels(std::span<const Tensor<T>>);                       \
  template Tensor<T> to_tokens(const Tensor<T>&);                                       \
  template Tensor<T> from_tokens(const Tensor<T>&, std::int64_t, std::int64_t);

RTF_INSTANTIATE(float)
RTF_INSTANTIATE(double)
#undef RTF_INSTANTIATE

}  // namespace rtf
