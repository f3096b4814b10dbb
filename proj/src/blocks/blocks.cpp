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

#include "rtf/blocks.hpp"

#include <cmath>

#include "rtf/attention.hpp"

namespace rtf::blocks {

using nn::Tape;
using rtf::to_string;

std::string_view to_string(AttnKind k) {
  switch (k) {
    case AttnKind::gfa: return "gfa";
    case AttnKind::ca: return "ca";
    case AttnKind::ea: return "ea";
    case AttnKind::mhea: return "mhea";
    case AttnKind::sa: return "sa";
  }
  return "?";
}

std::string_view to_string(FfnKind k) { return k == FfnKind::conv ? "conv" : "mlp_dw"; }

AttnKind parse_attn(std::string_view s) {
  for (AttnKind k : {AttnKind::gfa, AttnKind::ca, AttnKind::ea, AttnKind::mhea, AttnKind::sa})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown attention kind '" + std::string(s) + "'");
}

FfnKind parse_ffn(std::string_view s) {
  if (s == "conv" || s == "conv3x3") return FfnKind::conv;
  if (s == "mlp_dw") return FfnKind::mlp_dw;
  throw ConfigError("unknown ffn kind '" + std::string(s) + "'");
}

std::int64_t external_bank_rows(std::int64_t d, double ratio) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(d) * ratio));
}

namespace {

void check_attention(std::int64_t d, const AttentionLayer::Spec& s, const char* branch) {
  const std::string where = std::string(branch) + " branch " + std::string(to_string(s.kind));
  switch (s.kind) {
    case AttnKind::gfa:
      if (s.groups < 1 || d % s.groups)
        throw ConfigError(where + ": groups " + std::to_string(s.groups) + " do not divide " +
                          std::to_string(d));
      break;
    case AttnKind::mhea:
    case AttnKind::sa:
      if (s.heads < 1 || d % s.heads)
        throw ConfigError(where + ": heads " + std::to_string(s.heads) + " do not divide " +
                          std::to_string(d));
      if (s.sigma < 1) throw ConfigError(where + ": sigma must be >= 1");
      break;
    case AttnKind::ca:
      if (s.cross_side < 1) throw ConfigError(where + ": cross-feature side must be >= 1");
      if (s.source_channels < 1) throw ConfigError(where + ": needs a low-resolution source");
      break;
    case AttnKind::ea:
      break;
  }
  if (!(s.ratio > 0)) throw ConfigError(where + ": bank ratio must be positive");
}

}  // namespace

void BlockConfig::validate() const {
  if (d_h < 1 || d_l < 1) throw ConfigError("block widths must be >= 1");
  if (d_h > d_l)
    throw ConfigError("block needs d_h <= d_l, got " + std::to_string(d_h) + "/" +
                      std::to_string(d_l));
  if (low_attn == AttnKind::ca)
    throw ConfigError("cross-resolution attention is only defined for the high branch");
  check_attention(d_l, low_spec(*this), "low");
  check_attention(d_h, high_spec(*this), "high");
}

AttentionLayer::Spec low_spec(const BlockConfig& c) {
  return {c.low_attn, c.groups_low, c.heads_low, c.mhea_ratio, c.sigma_low, c.cross_side, 0};
}

AttentionLayer::Spec high_spec(const BlockConfig& c) {
  return {c.high_attn, c.groups_high, c.heads_high, c.mhea_ratio, c.sigma_high, c.cross_side,
          c.d_l};
}

// ---- stem / residual -------------------------------------------------------

Stem::Stem(Registry& reg, const std::string& name, std::int64_t in_channels, std::int64_t width)
    : conv1_(reg, name + ".conv1", in_channels, width, 3, 2),
      conv2_(reg, name + ".conv2", width, width, 3, 2),
      bn1_(reg, name + ".bn1", width),
      bn2_(reg, name + ".bn2", width) {}

Var Stem::operator()(Ctx& ctx, Var x) const {
  x = ad::relu(bn1_(ctx, conv1_(ctx, x)));
  return ad::relu(bn2_(ctx, conv2_(ctx, x)));
}

BasicBlock::BasicBlock(Registry& reg, const std::string& name, std::int64_t cin,
                       std::int64_t cout, std::int64_t stride) {
  if (stride != 1 && stride != 2)
    throw ConfigError(name + ": stride must be 1 or 2, got " + std::to_string(stride));
  conv1_ = Conv2d(reg, name + ".conv1", cin, cout, 3, stride);
  bn1_ = BatchNorm2d(reg, name + ".bn1", cout);
  conv2_ = Conv2d(reg, name + ".conv2", cout, cout, 3);
  bn2_ = BatchNorm2d(reg, name + ".bn2", cout);
  project_ = stride != 1 || cin != cout;
  if (project_) {
    short_conv_ = Conv2d(reg, name + ".shortcut.conv", cin, cout, 1, stride);
    short_bn_ = BatchNorm2d(reg, name + ".shortcut.bn", cout);
  }
}

Var BasicBlock::operator()(Ctx& ctx, Var x) const {
  Var r = ad::relu(bn1_(ctx, conv1_(ctx, x)));
  r = bn2_(ctx, conv2_(ctx, r));
  Var s = project_ ? short_bn_(ctx, short_conv_(ctx, x)) : x;
  return ad::relu(ad::add(r, s));
}

// ---- FFN -------------------------------------------------------------------

Ffn::Ffn(Registry& reg, const std::string& name, std::int64_t d, FfnKind kind)
    : kind_(kind), d_(d) {
  if (kind == FfnKind::conv) {
    convs_.emplace_back(reg, name + ".conv1", d, d, 3);
    bns_.emplace_back(reg, name + ".bn1", d);
    convs_.emplace_back(reg, name + ".conv2", d, d, 3);
    bns_.emplace_back(reg, name + ".bn2", d, true);
  } else {
    const std::int64_t e = 2 * d;
    convs_.emplace_back(reg, name + ".fc1", d, e, 1);
    bns_.emplace_back(reg, name + ".bn1", e);
    convs_.emplace_back(reg, name + ".dw", e, e, 3, 1, -1, e);
    bns_.emplace_back(reg, name + ".bn2", e);
    convs_.emplace_back(reg, name + ".fc2", e, d, 1);
    bns_.emplace_back(reg, name + ".bn3", d, true);
  }
}

Var Ffn::operator()(Ctx& ctx, Var x) const {
  if (x.dim(1) != d_)
    throw ShapeError("ffn expects " + std::to_string(d_) + " channels, got " +
                     to_string(x.shape()));
  const std::size_t n = convs_.size();
  for (std::size_t i = 0; i < n; ++i) {
    x = bns_[i](ctx, convs_[i](ctx, x));
    if (i + 1 < n) x = ad::relu(x);
  }
  return x;
}

// ---- exchange --------------------------------------------------------------

Exchange::Exchange(Registry& reg, const std::string& name, std::int64_t d_h, std::int64_t d_l,
                   std::int64_t ratio, bool down)
    : ratio_(ratio), down_(down) {
  if (ratio != 2 && ratio != 4)
    throw ConfigError(name + ": resolution ratio must be 2 or 4, got " + std::to_string(ratio));
  up_conv_ = Conv2d(reg, name + ".up.conv", d_l, d_h, 1);
  up_bn_ = BatchNorm2d(reg, name + ".up.bn", d_h);
  if (!down) return;
  std::int64_t c = d_h;
  for (std::int64_t r = ratio, i = 0; r > 1; r /= 2, ++i) {
    const std::int64_t out = r == 2 ? d_l : d_h;
    const std::string p = name + ".down" + std::to_string(i);
    down_convs_.emplace_back(reg, p + ".conv", c, out, 3, 2);
    down_bns_.emplace_back(reg, p + ".bn", out);
    c = out;
  }
}

std::pair<Var, Var> Exchange::operator()(Ctx& ctx, Var x_h, Var x_l) const {
  const std::int64_t hh = x_h.dim(2), hw = x_h.dim(3);
  if (hh != ratio_ * x_l.dim(2) || hw != ratio_ * x_l.dim(3))
    throw ShapeError("exchange with ratio " + std::to_string(ratio_) + " got " +
                     to_string(x_h.shape()) + " and " + to_string(x_l.shape()));
  Var up = ad::bilinear_resize(up_bn_(ctx, up_conv_(ctx, x_l)), hh, hw);
  Var out_h = ad::relu(ad::add(x_h, up));
  if (!down_) return {out_h, x_l};
  Var d = x_h;
  for (std::size_t i = 0; i < down_convs_.size(); ++i) {
    d = down_bns_[i](ctx, down_convs_[i](ctx, d));
    if (i + 1 < down_convs_.size()) d = ad::relu(d);
  }
  return {out_h, ad::relu(ad::add(x_l, d))};
}

// ---- attention layer -------------------------------------------------------

AttentionLayer::AttentionLayer(Registry& reg, const std::string& name, std::int64_t d,
                               const Spec& spec)
    : d_(d), spec_(spec) {
  check_attention(d, spec, name.c_str());
  auto bank = [&](std::int64_t rows, std::int64_t cols) {
    const double b = 1.0 / std::sqrt(static_cast<double>(cols));
    k_ = &reg.param(name + ".k", uniform_tensor<double>({rows, cols}, reg.rng(), -b, b));
    v_ = &reg.param(name + ".v", uniform_tensor<double>({rows, cols}, reg.rng(), -b, b));
  };
  switch (spec.kind) {
    case AttnKind::gfa: bank(d, d); break;
    case AttnKind::ea: bank(external_bank_rows(d, spec.ratio), d); break;
    case AttnKind::mhea: bank(external_bank_rows(d, spec.ratio), d / spec.heads); break;
    case AttnKind::ca:
      theta_ = Conv2d(reg, name + ".theta", spec.source_channels, 2 * d, 1, 1, 0, 1, true);
      break;
    case AttnKind::sa: {
      const double b = 1.0 / std::sqrt(static_cast<double>(d));
      for (const char* p : {"q", "k", "v", "o"})
        proj_.push_back(&reg.param(name + ".w" + p,
                                   uniform_tensor<double>({d, d}, reg.rng(), -b, b)));
      break;
    }
  }
}

Var AttentionLayer::tokens(Ctx& ctx, Var x, Var source, std::int64_t h, std::int64_t w) const {
  Tape& t = ctx.tape;
  switch (spec_.kind) {
    case AttnKind::gfa:
      return attn::gpu_friendly_attention(x, t.param(*k_), t.param(*v_), spec_.groups);
    case AttnKind::ea:
      return attn::external_attention(x, t.param(*k_), t.param(*v_));
    case AttnKind::mhea:
      return attn::multi_head_external_attention(x, t.param(*k_), t.param(*v_), spec_.heads);
    case AttnKind::ca: {
      Var b = t.param(*theta_.bias());
      auto [kc, vc] = attn::cross_kv(source, t.param(theta_.weight()), b, spec_.cross_side);
      return attn::cross_resolution_attention(x, kc, vc);
    }
    case AttnKind::sa:
      return attn::reduced_self_attention(x, h, w, t.param(*proj_[0]), t.param(*proj_[1]),
                                          t.param(*proj_[2]), t.param(*proj_[3]), spec_.heads,
                                          spec_.sigma);
  }
  return {};
}

Var AttentionLayer::operator()(Ctx& ctx, Var x, Var source) const {
  if (x.shape().size() != 4 || x.dim(1) != d_)
    throw ShapeError("attention expects [n, " + std::to_string(d_) + ", h, w], got " +
                     to_string(x.shape()));
  const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (spec_.kind == AttnKind::ca) {
    if (!source.valid()) throw ShapeError("cross-resolution attention needs a source map");
    if (source.dim(0) != n || source.dim(1) != spec_.source_channels)
      throw ShapeError("cross-feature source " + to_string(source.shape()) +
                       " does not match query batch " + to_string(x.shape()));
  }
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Var xi = n == 1 ? x : ad::select_batch(x, i);
    Var si = source.valid() && n > 1 ? ad::select_batch(source, i) : source;
    outs.push_back(ad::from_tokens(tokens(ctx, ad::to_tokens(xi), si, h, w), h, w));
  }
  return n == 1 ? outs[0] : ad::concat_batch(std::span<const Var>(outs));
}

// ---- RTFormer block --------------------------------------------------------

RTFormerBlock::RTFormerBlock(Registry& reg, const std::string& name, const BlockConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  auto make = [&](const std::string& p, std::int64_t d, const AttentionLayer::Spec& s) {
    return Branch{BatchNorm2d(reg, p + ".attn_norm", d),
                  BatchNorm2d(reg, p + ".attn_out", d, true),
                  BatchNorm2d(reg, p + ".ffn_norm", d),
                  AttentionLayer(reg, p + ".attn", d, s),
                  Ffn(reg, p + ".ffn", d, cfg.ffn)};
  };
  branches_.push_back(make(name + ".low", cfg.d_l, low_spec(cfg)));
  branches_.push_back(make(name + ".high", cfg.d_h, high_spec(cfg)));
}

Var RTFormerBlock::run(Ctx& ctx, const Branch& b, Var x, Var source) const {
  Var u = ad::add(x, b.attn_out(ctx, b.attn(ctx, b.attn_norm(ctx, x), source)));
  return ad::add(u, b.ffn(ctx, b.ffn_norm(ctx, u)));
}

std::pair<Var, Var> RTFormerBlock::operator()(Ctx& ctx, Var x_h, Var x_l) const {
  if (x_h.dim(1) != cfg_.d_h || x_l.dim(1) != cfg_.d_l)
    throw ShapeError("block expects " + std::to_string(cfg_.d_h) + "/" +
                     std::to_string(cfg_.d_l) + " channels, got " + to_string(x_h.shape()) +
                     " and " + to_string(x_l.shape()));
  if (x_h.dim(0) != x_l.dim(0)) throw ShapeError("block branches disagree on batch size");
  Var y_l = run(ctx, branches_[0], x_l, Var{});
  Var y_h = run(ctx, branches_[1], x_h, y_l);
  return {y_h, y_l};
}

}  // namespace rtf::blocks
