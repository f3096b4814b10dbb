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

#include "rtf/count.hpp"

#include <sstream>

#include "rtf/attention.hpp"

namespace rtf::model {
namespace {

struct Acc : CountRow {
  void conv(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t oh,
            std::int64_t ow, std::int64_t groups = 1, bool bias = false) {
    const std::int64_t w = cout * (cin / groups) * k * k;
    params += w + (bias ? cout : 0);
    gemm_macs += w * oh * ow;
  }
  void bn(std::int64_t c, std::int64_t h, std::int64_t w) {
    params += 2 * c;
    norm_macs += c * h * w;
  }
  void add(const attn::Macs& m) {
    gemm_macs += m.gemm;
    norm_macs += m.norm;
    matmul_calls += m.matmul_calls;
  }
  CountRow named(std::string name) {
    CountRow r = *this;
    r.module = std::move(name);
    return r;
  }
};

}  // namespace

CountRow& CountRow::operator+=(const CountRow& o) {
  params += o.params;
  gemm_macs += o.gemm_macs;
  norm_macs += o.norm_macs;
  matmul_calls += o.matmul_calls;
  return *this;
}

CountRow CountReport::total() const {
  CountRow t;
  t.module = "total";
  for (const auto& r : rows) t += r;
  return t;
}

const CountRow& CountReport::row(const std::string& module) const {
  for (const auto& r : rows)
    if (r.module == module) return r;
  throw ConfigError("no count row named " + module);
}

std::string CountReport::to_csv() const {
  std::ostringstream o;
  o << "module,params,flops\n";
  for (const auto& r : rows) o << r.module << "," << r.params << "," << r.flops() << "\n";
  const CountRow t = total();
  o << "total," << t.params << "," << t.flops() << "\n";
  return o.str();
}

CountRow count_basic_block(std::int64_t cin, std::int64_t cout, std::int64_t stride,
                           std::int64_t oh, std::int64_t ow) {
  Acc a;
  a.conv(cin, cout, 3, oh, ow);
  a.bn(cout, oh, ow);
  a.conv(cout, cout, 3, oh, ow);
  a.bn(cout, oh, ow);
  if (stride != 1 || cin != cout) {
    a.conv(cin, cout, 1, oh, ow);
    a.bn(cout, oh, ow);
  }
  return a.named("basic");
}

CountRow count_ffn(std::int64_t d, FfnKind kind, std::int64_t h, std::int64_t w) {
  Acc a;
  if (kind == FfnKind::conv) {
    for (int i = 0; i < 2; ++i) {
      a.conv(d, d, 3, h, w);
      a.bn(d, h, w);
    }
  } else {
    a.conv(d, 2 * d, 1, h, w);
    a.bn(2 * d, h, w);
    a.conv(2 * d, 2 * d, 3, h, w, 2 * d);
    a.bn(2 * d, h, w);
    a.conv(2 * d, d, 1, h, w);
    a.bn(d, h, w);
  }
  return a.named("ffn");
}

CountRow count_exchange(std::int64_t dh, std::int64_t dl, std::int64_t ratio, bool down,
                        std::int64_t hh, std::int64_t hw) {
  Acc a;
  a.conv(dl, dh, 1, hh / ratio, hw / ratio);
  a.bn(dh, hh / ratio, hw / ratio);
  if (down) {
    if (ratio == 4) {
      a.conv(dh, dh, 3, hh / 2, hw / 2);
      a.bn(dh, hh / 2, hw / 2);
    }
    a.conv(dh, dl, 3, hh / ratio, hw / ratio);
    a.bn(dl, hh / ratio, hw / ratio);
  }
  return a.named("exchange");
}

CountRow count_attention(std::int64_t d, const blocks::AttentionLayer::Spec& s, std::int64_t h,
                         std::int64_t w) {
  Acc a;
  const std::int64_t n = h * w;
  switch (s.kind) {
    case AttnKind::gfa:
      a.params += 2 * d * d;
      a.add(attn::gfa_macs(n, d, d));
      break;
    case AttnKind::ea: {
      const std::int64_t m = blocks::external_bank_rows(d, s.ratio);
      a.params += 2 * m * d;
      a.add(attn::ea_macs(n, d, m));
      break;
    }
    case AttnKind::mhea: {
      const std::int64_t m = blocks::external_bank_rows(d, s.ratio);
      a.params += 2 * m * (d / s.heads);
      a.add(attn::mhea_macs(n, d, m, s.heads));
      break;
    }
    case AttnKind::ca:
      a.params += s.source_channels * 2 * d + 2 * d;
      a.add(attn::theta_macs(s.source_channels, d, s.cross_side));
      a.add(attn::ca_macs(n, d, s.cross_side));
      break;
    case AttnKind::sa:
      a.params += 4 * d * d;
      a.add(attn::sa_macs(n, d, s.heads, s.sigma));
      break;
  }
  return a.named("attention");
}

CountRow count_block(const blocks::BlockConfig& cfg, std::int64_t hh, std::int64_t hw,
                     std::int64_t lh, std::int64_t lw) {
  CountRow r;
  r.module = "rtformer_block";
  auto branch = [&](std::int64_t d, const blocks::AttentionLayer::Spec& s, std::int64_t h,
                    std::int64_t w) {
    Acc a;
    for (int i = 0; i < 3; ++i) a.bn(d, h, w);
    r += a;
    r += count_attention(d, s, h, w);
    r += count_ffn(d, cfg.ffn, h, w);
  };
  branch(cfg.d_l, blocks::low_spec(cfg), lh, lw);
  branch(cfg.d_h, blocks::high_spec(cfg), hh, hw);
  return r;
}

CountRow count_dappm(std::int64_t cin, std::int64_t b, std::int64_t cout, std::int64_t h,
                     std::int64_t w) {
  Acc a;
  a.bn(cin, h, w);
  a.conv(cin, b, 1, h, w);
  for (const PoolSpec& p : kDappmPools) {
    std::int64_t ph = 1, pw = 1;
    if (pool_fits(p, h, w)) {
      ph = conv_out_size(h, p.kernel, p.stride, p.padding);
      pw = conv_out_size(w, p.kernel, p.stride, p.padding);
    }
    a.bn(cin, ph, pw);
    a.conv(cin, b, 1, ph, pw);
  }
  a.bn(cin, 1, 1);
  a.conv(cin, b, 1, 1, 1);
  for (int i = 0; i < 4; ++i) {
    a.bn(b, h, w);
    a.conv(b, b, 3, h, w);
  }
  a.bn(5 * b, h, w);
  a.conv(5 * b, cout, 1, h, w);
  a.bn(cin, h, w);
  a.conv(cin, cout, 1, h, w);
  return a.named("dappm");
}

CountRow count_head(std::int64_t d, std::int64_t classes, std::int64_t h, std::int64_t w) {
  Acc a;
  a.conv(d, d, 3, h, w);
  a.bn(d, h, w);
  a.conv(d, classes, 1, h, w, 1, true);
  return a.named("head");
}

CountReport count_flops(const ModelConfig& cfg, std::int64_t H, std::int64_t W) {
  cfg.validate();
  check_input_size(H, W);
  const auto& ch = cfg.channels;
  const auto& nb = cfg.blocks;
  CountReport rep;
  rep.config = cfg.name;
  rep.height = H;
  rep.width = W;
  auto add_row = [&](const std::string& name, CountRow r) {
    r.module = name;
    rep.rows.push_back(r);
  };

  {
    Acc a;
    a.conv(cfg.in_channels, ch[0].high, 3, H / 2, W / 2);
    a.bn(ch[0].high, H / 2, W / 2);
    a.conv(ch[0].high, ch[0].high, 3, H / 4, W / 4);
    a.bn(ch[0].high, H / 4, W / 4);
    add_row("stem", a);
  }
  CountRow s1, s2, s3, s4, s5;
  for (std::int64_t i = 0; i < nb[0].high; ++i)
    s1 += count_basic_block(ch[0].high, ch[0].high, 1, H / 4, W / 4);
  add_row("stage1", s1);
  for (std::int64_t i = 0; i < nb[1].high; ++i)
    s2 += count_basic_block(i ? ch[1].high : ch[0].high, ch[1].high, i ? 1 : 2, H / 8, W / 8);
  add_row("stage2", s2);
  for (std::int64_t i = 0; i < nb[2].high; ++i)
    s3 += count_basic_block(i ? ch[2].high : ch[1].high, ch[2].high, 1, H / 8, W / 8);
  for (std::int64_t i = 0; i < nb[2].low; ++i)
    s3 += count_basic_block(i ? ch[2].low : ch[1].high, ch[2].low, i ? 1 : 2, H / 16, W / 16);
  s3 += count_exchange(ch[2].high, ch[2].low, 2, true, H / 8, W / 8);
  add_row("stage3", s3);
  {
    Acc a;
    a.conv(ch[2].low, ch[3].low, 1, H / 32, W / 32);
    a.bn(ch[3].low, H / 32, W / 32);
    s4 += a;
  }
  const auto bc = cfg.block_config();
  for (std::int64_t i = 0; i < nb[3].high; ++i) s4 += count_block(bc, H / 8, W / 8, H / 32, W / 32);
  s4 += count_exchange(ch[3].high, ch[3].low, 4, true, H / 8, W / 8);
  add_row("stage4", s4);
  for (std::int64_t i = 0; i < nb[4].high; ++i) s5 += count_block(bc, H / 8, W / 8, H / 32, W / 32);
  s5 += count_exchange(ch[4].high, ch[4].low, 4, false, H / 8, W / 8);
  add_row("stage5", s5);
  add_row("dappm", count_dappm(ch[4].low, cfg.dappm_width, ch[4].high, H / 32, W / 32));
  add_row("head", count_head(ch[4].high, cfg.num_classes, H / 8, W / 8));
  return rep;
}

CountReport count_params(const ModelConfig& cfg) {
  return count_flops(cfg, kInputMultiple, kInputMultiple);
}

}  // namespace rtf::model
