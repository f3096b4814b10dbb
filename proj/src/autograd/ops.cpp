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

#include "rtf/autograd.hpp"
#include "rtf/kernels.hpp"

namespace rtf::ad {
namespace {

Tape& tape_of(Var v) {
  if (!v.valid()) throw std::logic_error("differentiable op on an unbound Var");
  return *v.tape;
}

Tape& tape_of(std::span<const Var> vs) {
  if (vs.empty()) throw ShapeError("op over an empty list of tensors");
  Tape& t = tape_of(vs[0]);
  for (const Var& v : vs)
    if (v.tape != &t) throw std::logic_error("Vars from different tapes");
  return t;
}

// C = op(A) op(B) into a fresh tensor; backward products are not counted as
// forward matmul calls.
TensorD gemm_new(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                 const TensorD& a, const TensorD& b) {
  TensorD c(Shape{m, n});
  kernels::gemm<double>(ta, tb, m, n, k, a.raw(), ta ? m : k, b.raw(), tb ? k : n, false,
                        c.raw(), n);
  return c;
}

// Sums g down to the shape b was broadcast from.
TensorD reduce_to(const TensorD& g, const Shape& a, const Shape& b) {
  switch (broadcast_kind(a, b)) {
    case Broadcast::same:
      return g;
    case Broadcast::scalar: {
      double s = 0;
      for (double v : g.data()) s += v;
      return TensorD(b, s);
    }
    case Broadcast::channel: {
      TensorD r(b);
      const auto c = a[1], hw = a[2] * a[3];
      for (std::int64_t i = 0; i < g.size(); ++i) r[(i / hw) % c] += g[i];
      return r;
    }
    case Broadcast::column: {
      TensorD r(b);
      const auto c = a[1];
      for (std::int64_t i = 0; i < g.size(); ++i) r[i % c] += g[i];
      return r;
    }
  }
  return g;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(rtf::matmul(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const TensorD&, const TensorD& g) {
                  const TensorD& av = t.value(a);
                  const TensorD& bv = t.value(b);
                  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
                  if (t.requires_grad(a)) t.accumulate(a, gemm_new(false, true, m, k, n, g, bv));
                  if (t.requires_grad(b)) t.accumulate(b, gemm_new(true, false, k, n, m, av, g));
                },
                "matmul");
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(rtf::matmul_nt(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const TensorD&, const TensorD& g) {
                  const TensorD& av = t.value(a);
                  const TensorD& bv = t.value(b);
                  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(0);
                  if (t.requires_grad(a)) t.accumulate(a, gemm_new(false, false, m, k, n, g, bv));
                  if (t.requires_grad(b)) t.accumulate(b, gemm_new(true, false, n, k, m, g, av));
                },
                "matmul_nt");
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  return t.push(rtf::transpose(a.value()), {a},
                [a](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(a, rtf::transpose(g));
                },
                "transpose");
}

Var slice_cols(Var a, std::int64_t start, std::int64_t count) {
  Tape& t = tape_of(a);
  return t.push(rtf::slice_cols(a.value(), start, count), {a},
                [a, start, count](Tape& t, const TensorD&, const TensorD& g) {
                  const auto& s = t.value(a).shape();
                  TensorD ga(s);
                  for (std::int64_t i = 0; i < s[0]; ++i)
                    std::copy_n(g.raw() + i * count, count, ga.raw() + i * s[1] + start);
                  t.accumulate(a, std::move(ga));
                },
                "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
  Tape& t = tape_of(parts);
  std::vector<TensorD> vals;
  for (const Var& p : parts) vals.push_back(p.value());
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(rtf::concat_cols<double>(vals), parts,
                [ins](Tape& t, const TensorD&, const TensorD& g) {
                  std::int64_t off = 0;
                  for (const Var& p : ins) {
                    const auto c = t.value(p).dim(1);
                    if (t.requires_grad(p)) t.accumulate(p, rtf::slice_cols(g, off, c));
                    off += c;
                  }
                },
                "concat_cols");
}

Var gather_rows(Var a, std::span<const std::int64_t> rows) {
  Tape& t = tape_of(a);
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  return t.push(rtf::gather_rows(a.value(), rows), {a},
                [a, idx](Tape& t, const TensorD&, const TensorD& g) {
                  TensorD ga(t.value(a).shape());
                  const auto c = ga.dim(1);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                      ga[idx[i] * c + j] += g[static_cast<std::int64_t>(i) * c + j];
                  t.accumulate(a, std::move(ga));
                },
                "gather_rows");
}

Var softmax(Var x, int axis) {
  Tape& t = tape_of(x);
  return t.push(rtf::softmax(x.value(), axis), {x},
                [x, axis](Tape& t, const TensorD& y, const TensorD& g) {
                  const auto& s = y.shape();
                  const int rank = static_cast<int>(s.size());
                  const int ax = axis < 0 ? axis + rank : axis;
                  std::int64_t outer = 1, inner = 1;
                  for (int i = 0; i < ax; ++i) outer *= s[i];
                  for (int i = ax + 1; i < rank; ++i) inner *= s[i];
                  const auto len = s[ax];
                  TensorD gx(s);
                  for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t in = 0; in < inner; ++in) {
                      const auto base = o * len * inner + in;
                      double dotp = 0;
                      for (std::int64_t j = 0; j < len; ++j)
                        dotp += g[base + j * inner] * y[base + j * inner];
                      for (std::int64_t j = 0; j < len; ++j) {
                        const auto i = base + j * inner;
                        gx[i] = y[i] * (g[i] - dotp);
                      }
                    }
                  t.accumulate(x, std::move(gx));
                },
                "softmax");
}

Var grouped_double_norm(Var a, std::int64_t groups) {
  Tape& t = tape_of(a);
  return t.push(
      rtf::grouped_double_norm(a.value(), groups), {a},
      [a, groups](Tape& t, const TensorD& out, const TensorD& g) {
        const TensorD s = rtf::column_softmax(t.value(a));
        const auto rows = s.dim(0), cols = s.dim(1), width = cols / groups;
        // Through the per-group L1 step.
        TensorD ds(s.shape());
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t gr = 0; gr < groups; ++gr) {
            const auto off = i * cols + gr * width;
            double den = kDoubleNormEps, go = 0;
            for (std::int64_t j = 0; j < width; ++j) {
              den += s[off + j];
              go += g[off + j] * out[off + j];
            }
            for (std::int64_t j = 0; j < width; ++j) ds[off + j] = (g[off + j] - go) / den;
          }
        // Through the column softmax.
        std::vector<double> colsum(static_cast<std::size_t>(cols), 0.0);
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j) colsum[j] += ds[i * cols + j] * s[i * cols + j];
        TensorD ga(s.shape());
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j) {
            const auto k = i * cols + j;
            ga[k] = s[k] * (ds[k] - colsum[j]);
          }
        t.accumulate(a, std::move(ga));
      },
      "grouped_double_norm");
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(rtf::add(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const TensorD&, const TensorD& g) {
                  if (t.requires_grad(a)) t.accumulate(a, g);
                  if (t.requires_grad(b))
                    t.accumulate(b, reduce_to(g, t.value(a).shape(), t.value(b).shape()));
                },
                "add");
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  return t.push(rtf::mul(a.value(), b.value()), {a, b},
                [a, b](Tape& t, const TensorD&, const TensorD& g) {
                  const TensorD& av = t.value(a);
                  const TensorD& bv = t.value(b);
                  if (t.requires_grad(a)) t.accumulate(a, rtf::mul(g, bv));
                  if (t.requires_grad(b) ) {
                    TensorD ga(av.shape());
                    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * av[i];
                    t.accumulate(b, reduce_to(ga, av.shape(), bv.shape()));
                  }
                },
                "mul");
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  return t.push(rtf::scale(a.value(), s), {a},
                [a, s](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(a, rtf::scale(g, s));
                },
                "scale");
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  TensorD y = rtf::relu(a.value());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (double v : y.data()) h = (h ^ (v > 0 ? 1u : 0u)) * 0x100000001B3ULL;
  t.mix_kink_signature(h);
  return t.push(std::move(y), {a},
                [a](Tape& t, const TensorD& y, const TensorD& g) {
                  TensorD gx(y.shape());
                  for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] = y[i] > 0 ? g[i] : 0.0;
                  t.accumulate(a, std::move(gx));
                },
                "relu");
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  return t.push(rtf::sum(a.value()), {a},
                [a](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(a, TensorD(t.value(a).shape(), g[0]));
                },
                "sum");
}

Var conv2d(Var x, Var weight, Var bias, const Conv2dSpec& spec) {
  Tape& t = tape_of(x);
  static const TensorD kNoBias;
  const TensorD& bv = bias.valid() ? bias.value() : kNoBias;
  return t.push(rtf::conv2d(x.value(), weight.value(), bv, spec), {x, weight, bias},
                [x, weight, bias, spec](Tape& t, const TensorD&, const TensorD& g) {
                  TensorD gx, gw, gb;
                  const bool wx = t.requires_grad(x), ww = t.requires_grad(weight);
                  const bool wb = bias.valid() && t.requires_grad(bias);
                  rtf::conv2d_backward(t.value(x), t.value(weight), g, spec, wx ? &gx : nullptr,
                                       ww ? &gw : nullptr, wb ? &gb : nullptr);
                  if (wx) t.accumulate(x, std::move(gx));
                  if (ww) t.accumulate(weight, std::move(gw));
                  if (wb) t.accumulate(bias, std::move(gb));
                },
                "conv2d");
}

Var avg_pool2d(Var x, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  Tape& t = tape_of(x);
  return t.push(rtf::avg_pool2d(x.value(), kernel, stride, padding), {x},
                [x, kernel, stride, padding](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(x, rtf::avg_pool2d_backward(g, t.value(x).shape(), kernel,
                                                           stride, padding));
                },
                "avg_pool2d");
}

Var adaptive_avg_pool2d(Var x, std::int64_t out_h, std::int64_t out_w) {
  Tape& t = tape_of(x);
  return t.push(rtf::adaptive_avg_pool2d(x.value(), out_h, out_w), {x},
                [x](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(x, rtf::adaptive_avg_pool2d_backward(g, t.value(x).shape()));
                },
                "adaptive_avg_pool2d");
}

Var bilinear_resize(Var x, std::int64_t out_h, std::int64_t out_w) {
  Tape& t = tape_of(x);
  return t.push(rtf::bilinear_resize(x.value(), out_h, out_w), {x},
                [x](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(x, rtf::bilinear_resize_backward(g, t.value(x).shape()));
                },
                "bilinear_resize");
}

namespace {
struct Layout {
  std::int64_t outer, channels, inner;
};
Layout layout_of(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
  return {s[0], s[1], 1};
}
}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats& stats) {
  Tape& t = tape_of(x);
  TensorD y = rtf::batch_norm_train(x.value(), gamma.value(), beta.value(), eps, stats);
  return t.push(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mean = stats.mean, inv = stats.inv_std](Tape& t, const TensorD&,
                                                               const TensorD& g) {
        const TensorD& xv = t.value(x);
        const TensorD& gv = t.value(gamma);
        const auto lay = layout_of(xv.shape());
        const double count = static_cast<double>(lay.outer * lay.inner);
        std::vector<double> sg(lay.channels, 0.0), sgx(lay.channels, 0.0);
        for (std::int64_t o = 0; o < lay.outer; ++o)
          for (std::int64_t c = 0; c < lay.channels; ++c) {
            const auto off = (o * lay.channels + c) * lay.inner;
            for (std::int64_t i = 0; i < lay.inner; ++i) {
              const double xh = (xv[off + i] - mean[c]) * inv[c];
              sg[c] += g[off + i];
              sgx[c] += g[off + i] * xh;
            }
          }
        if (t.requires_grad(x)) {
          TensorD gx(xv.shape());
          for (std::int64_t o = 0; o < lay.outer; ++o)
            for (std::int64_t c = 0; c < lay.channels; ++c) {
              const auto off = (o * lay.channels + c) * lay.inner;
              const double k = gv[c] * inv[c] / count;
              for (std::int64_t i = 0; i < lay.inner; ++i) {
                const double xh = (xv[off + i] - mean[c]) * inv[c];
                gx[off + i] = k * (count * g[off + i] - sg[c] - xh * sgx[c]);
              }
            }
          t.accumulate(x, std::move(gx));
        }
        if (t.requires_grad(gamma)) t.accumulate(gamma, TensorD(Shape{lay.channels}, sgx));
        if (t.requires_grad(beta)) t.accumulate(beta, TensorD(Shape{lay.channels}, sg));
      },
      "batch_norm_train");
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const TensorD& running_mean,
                    const TensorD& running_var, double eps) {
  Tape& t = tape_of(x);
  TensorD y = rtf::batch_norm_eval(x.value(), gamma.value(), beta.value(), running_mean,
                                   running_var, eps);
  std::vector<double> mean(running_mean.data().begin(), running_mean.data().end());
  std::vector<double> inv(running_var.size());
  for (std::int64_t c = 0; c < running_var.size(); ++c)
    inv[c] = 1.0 / std::sqrt(running_var[c] + eps);
  return t.push(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, mean, inv](Tape& t, const TensorD&, const TensorD& g) {
        const TensorD& xv = t.value(x);
        const TensorD& gv = t.value(gamma);
        const auto lay = layout_of(xv.shape());
        TensorD gx(xv.shape());
        std::vector<double> sg(lay.channels, 0.0), sgx(lay.channels, 0.0);
        for (std::int64_t o = 0; o < lay.outer; ++o)
          for (std::int64_t c = 0; c < lay.channels; ++c) {
            const auto off = (o * lay.channels + c) * lay.inner;
            for (std::int64_t i = 0; i < lay.inner; ++i) {
              gx[off + i] = g[off + i] * gv[c] * inv[c];
              sg[c] += g[off + i];
              sgx[c] += g[off + i] * (xv[off + i] - mean[c]) * inv[c];
            }
          }
        if (t.requires_grad(x)) t.accumulate(x, std::move(gx));
        if (t.requires_grad(gamma)) t.accumulate(gamma, TensorD(Shape{lay.channels}, sgx));
        if (t.requires_grad(beta)) t.accumulate(beta, TensorD(Shape{lay.channels}, sg));
      },
      "batch_norm_eval");
}

Var select_batch(Var x, std::int64_t index) {
  Tape& t = tape_of(x);
  return t.push(rtf::select_batch(x.value(), index), {x},
                [x, index](Tape& t, const TensorD&, const TensorD& g) {
                  TensorD gx(t.value(x).shape());
                  std::copy_n(g.raw(), g.size(), gx.raw() + index * g.size());
                  t.accumulate(x, std::move(gx));
                },
                "select_batch");
}

Var concat_batch(std::span<const Var> parts) {
  Tape& t = tape_of(parts);
  std::vector<TensorD> vals;
  for (const Var& p : parts) vals.push_back(p.value());
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(rtf::concat_batch<double>(vals), parts,
                [ins](Tape& t, const TensorD&, const TensorD& g) {
                  std::int64_t off = 0;
                  for (const Var& p : ins) {
                    const TensorD& pv = t.value(p);
                    if (t.requires_grad(p)) {
                      TensorD gp(pv.shape());
                      std::copy_n(g.raw() + off, pv.size(), gp.raw());
                      t.accumulate(p, std::move(gp));
                    }
                    off += pv.size();
                  }
                },
                "concat_batch");
}

Var slice_channels(Var x, std::int64_t start, std::int64_t count) {
  Tape& t = tape_of(x);
  return t.push(rtf::slice_channels(x.value(), start, count), {x},
                [x, start, count](Tape& t, const TensorD&, const TensorD& g) {
                  const auto& s = t.value(x).shape();
                  TensorD gx(s);
                  const auto hw = s[2] * s[3];
                  for (std::int64_t b = 0; b < s[0]; ++b)
                    std::copy_n(g.raw() + b * count * hw, count * hw,
                                gx.raw() + (b * s[1] + start) * hw);
                  t.accumulate(x, std::move(gx));
                },
                "slice_channels");
}

Var concat_channels(std::span<const Var> parts) {
  Tape& t = tape_of(parts);
  std::vector<TensorD> vals;
  for (const Var& p : parts) vals.push_back(p.value());
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(rtf::concat_channels<double>(vals), parts,
                [ins](Tape& t, const TensorD&, const TensorD& g) {
                  std::int64_t off = 0;
                  for (const Var& p : ins) {
                    const auto c = t.value(p).dim(1);
                    if (t.requires_grad(p)) t.accumulate(p, rtf::slice_channels(g, off, c));
                    off += c;
                  }
                },
                "concat_channels");
}

Var to_tokens(Var x) {
  Tape& t = tape_of(x);
  return t.push(rtf::to_tokens(x.value()), {x},
                [x](Tape& t, const TensorD&, const TensorD& g) {
                  const auto& s = t.value(x).shape();
                  t.accumulate(x, rtf::from_tokens(g, s[2], s[3]));
                },
                "to_tokens");
}

Var from_tokens(Var tokens, std::int64_t h, std::int64_t w) {
  Tape& t = tape_of(tokens);
  return t.push(rtf::from_tokens(tokens.value(), h, w), {tokens},
                [tokens](Tape& t, const TensorD&, const TensorD& g) {
                  t.accumulate(tokens, rtf::to_tokens(g));
                },
                "from_tokens");
}

}  // namespace rtf::ad
