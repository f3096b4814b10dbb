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
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "rtf/attention.hpp"
#include "rtf/blocks.hpp"

using namespace rtf;
using namespace rtf::blocks;
using ad::Tape;
using ad::TensorD;

namespace {

constexpr double kTol = 1e-4;
constexpr double kStep = 1e-3;

void zero_params(Registry& reg, std::string_view prefix) {
  for (auto* p : reg.parameters())
    if (p->name.starts_with(prefix))
      for (auto& v : p->value.data()) v = 0.0;
}

bool same_bits(const TensorD& a, const TensorD& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), sizeof(double) * a.size()) == 0;
}

/// Checks gradients of probe_loss(f(x)) with respect to x and to every
/// registry parameter, in training-mode BN without touching running stats.
template <class F>
void check_grads(Registry& reg, const TensorD& x, F&& f, std::uint64_t seed = 3) {
  randomize_for_check(reg, seed);
  auto input = ad::grad_check([&](Tape& t, Var xv) {
    Ctx ctx{t, true, false};
    return nn::probe_loss(t, f(ctx, xv), 77);
  }, x, kStep);
  INFO("input err=" << input.max_rel_error << " skipped=" << input.skipped);
  CHECK(input.max_rel_error < kTol);
  auto params = reg.parameters();
  auto pr = ad::grad_check_params([&](Tape& t) {
    Ctx ctx{t, true, false};
    return nn::probe_loss(t, f(ctx, t.constant(x)), 77);
  }, params, kStep, 12);
  INFO("param err=" << pr.max_rel_error << " coords=" << pr.coords << " skipped=" << pr.skipped);
  CHECK(pr.max_rel_error < kTol);
  CHECK(pr.coords > 0);
}

BlockConfig mini() {
  BlockConfig c;
  c.d_h = 8;
  c.d_l = 16;
  c.groups_low = 4;
  c.groups_high = 2;
  c.heads_low = 2;
  c.heads_high = 2;
  c.sigma_high = 2;
  c.cross_side = 2;
  return c;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  CHECK(parse_attn("gfa") == AttnKind::gfa);
  CHECK(parse_attn("sa") == AttnKind::sa);
  CHECK_THROWS_AS(parse_attn("linformer"), ConfigError);
  CHECK(parse_ffn("conv3x3") == FfnKind::conv);
  CHECK(parse_ffn("mlp_dw") == FfnKind::mlp_dw);
  CHECK(external_bank_rows(256, 0.25) == 64);
  CHECK(external_bank_rows(2, 0.25) == 1);

  BlockConfig c = mini();
  CHECK_NOTHROW(c.validate());
  c.d_h = 32;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = mini();
  c.groups_low = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = mini();
  c.low_attn = AttnKind::ca;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = mini();
  c.high_attn = AttnKind::mhea;
  c.heads_high = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ffn shapes, zero map and gradients") {
  for (FfnKind kind : {FfnKind::conv, FfnKind::mlp_dw}) {
    INFO(to_string(kind));
    Registry reg(1);
    Ffn ffn(reg, "ffn", 8, kind);
    Tape t;
    Ctx ctx{t, true};
    const auto x = oracle::random({1, 8, 16, 16}, 2);
    Var y = ffn(ctx, t.constant(x));
    CHECK(y.shape() == x.shape());
    zero_params(reg, "ffn");
    Var z = ffn(ctx, t.constant(x));
    for (double v : z.value().data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(ffn(ctx, t.constant(oracle::random({1, 4, 4, 4}, 3))), ShapeError);

    Registry small(2);
    Ffn f2(small, "ffn", 4, kind);
    check_grads(small, oracle::random({2, 4, 4, 4}, 5),
                [&](Ctx& c, Var v) { return f2(c, v); });
  }
}

TEST_CASE("mlp_dw ffn widths") {
  Registry reg(0);
  Ffn ffn(reg, "f", 8, FfnKind::mlp_dw);
  CHECK(reg.find_param("f.fc1.weight")->value.shape() == Shape{16, 8, 1, 1});
  CHECK(reg.find_param("f.dw.weight")->value.shape() == Shape{16, 1, 3, 3});
  CHECK(reg.find_param("f.fc2.weight")->value.shape() == Shape{8, 16, 1, 1});
}

TEST_CASE("basic residual block") {
  const auto x = oracle::random({1, 4, 8, 8}, 1);
  {
    Registry reg(0);
    BasicBlock b(reg, "b", 4, 4, 1);
    CHECK_FALSE(b.has_projection());
    zero_params(reg, "b.conv");
    Tape t;
    Ctx ctx{t, false};
    Var y = b(ctx, t.constant(x));
    CHECK(same_bits(y.value(), relu(x)));
  }
  {
    Registry reg(0);
    BasicBlock b(reg, "b", 4, 8, 2);
    CHECK(b.has_projection());
    Tape t;
    Ctx ctx{t, true};
    CHECK(b(ctx, t.constant(x)).shape() == Shape{1, 8, 4, 4});
  }
  {
    Registry reg(0);
    CHECK_THROWS_AS(BasicBlock(reg, "b", 4, 4, 3), ConfigError);
  }
  for (std::int64_t stride : {1, 2}) {
    Registry reg(4);
    BasicBlock b(reg, "b", 3, 4, stride);
    check_grads(reg, oracle::random({2, 3, 4, 4}, 6 + stride),
                [&](Ctx& c, Var v) { return b(c, v); });
  }
}

TEST_CASE("stem") {
  Registry reg(0);
  Stem stem(reg, "stem", 3, 32);
  Tape t;
  Ctx ctx{t, true};
  Var y = stem(ctx, t.constant(oracle::random({1, 3, 64, 64}, 1)));
  CHECK(y.shape() == Shape{1, 32, 16, 16});

  Registry small(1);
  Stem s2(small, "stem", 3, 4);
  check_grads(small, oracle::random({2, 3, 8, 8}, 2), [&](Ctx& c, Var v) { return s2(c, v); });
}

TEST_CASE("exchange") {
  for (std::int64_t ratio : {2, 4}) {
    INFO("ratio " << ratio);
    Registry reg(3);
    Exchange ex(reg, "ex", 4, 8, ratio);
    const auto xh = oracle::random({2, 4, 8, 8}, 1);
    const auto xl = oracle::random({2, 8, 8 / ratio, 8 / ratio}, 2);
    Tape t;
    Ctx ctx{t, true};
    auto [yh, yl] = ex(ctx, t.constant(xh), t.constant(xl));
    CHECK(yh.shape() == xh.shape());
    CHECK(yl.shape() == xl.shape());
    zero_params(reg, "ex");
    auto [zh, zl] = ex(ctx, t.constant(xh), t.constant(xl));
    CHECK(same_bits(zh.value(), relu(xh)));
    CHECK(same_bits(zl.value(), relu(xl)));
    CHECK_THROWS_AS(ex(ctx, t.constant(xh), t.constant(xh)), ShapeError);

    Registry g(5);
    Exchange e2(g, "ex", 3, 4, ratio);
    const auto gl = oracle::random({2, 4, 8 / ratio, 8 / ratio}, 9);
    check_grads(g, oracle::random({2, 3, 8, 8}, 8), [&](Ctx& c, Var v) {
      auto [a, b] = e2(c, v, c.tape.constant(gl));
      return ad::concat_channels(std::vector<Var>{a, ad::bilinear_resize(b, 8, 8)});
    });
  }
  {
    Registry reg(0);
    Exchange ex(reg, "ex", 4, 8, 4, false);
    CHECK(reg.find_param("ex.down0.conv.weight") == nullptr);
    Tape t;
    Ctx ctx{t, true};
    const auto xl = oracle::random({1, 8, 2, 2}, 2);
    auto [yh, yl] = ex(ctx, t.constant(oracle::random({1, 4, 8, 8}, 1)), t.constant(xl));
    CHECK(same_bits(yl.value(), xl));
  }
  {
    Registry reg(0);
    Exchange ex(reg, "ex", 4, 8, 4);
    CHECK(reg.find_param("ex.down0.conv.weight")->value.shape() == Shape{4, 4, 3, 3});
    CHECK(reg.find_param("ex.down1.conv.weight")->value.shape() == Shape{8, 4, 3, 3});
    CHECK_THROWS_AS(Exchange(reg, "bad", 4, 8, 3), ConfigError);
  }
}

TEST_CASE("attention layer matches the token-level functions") {
  const auto x = oracle::random({2, 8, 4, 4}, 1);
  const auto src = oracle::random({2, 16, 2, 2}, 2);
  for (AttnKind kind : {AttnKind::gfa, AttnKind::ea, AttnKind::mhea, AttnKind::ca, AttnKind::sa}) {
    INFO(to_string(kind));
    AttentionLayer::Spec spec{kind, 2, 2, 0.5, 2, 2, 16};
    Registry reg(7);
    AttentionLayer layer(reg, "a", 8, spec);
    Tape t;
    Ctx ctx{t};
    Var y = layer(ctx, t.constant(x), t.constant(src));
    REQUIRE(y.shape() == x.shape());
    auto p = [&](const char* n) { return reg.find_param(std::string("a.") + n)->value; };
    for (std::int64_t i = 0; i < 2; ++i) {
      const TensorD tok = to_tokens(select_batch(x, i));
      TensorD ref;
      switch (kind) {
        case AttnKind::gfa: ref = attn::gpu_friendly_attention(tok, p("k"), p("v"), 2); break;
        case AttnKind::ea: ref = attn::external_attention(tok, p("k"), p("v")); break;
        case AttnKind::mhea:
          ref = attn::multi_head_external_attention(tok, p("k"), p("v"), 2);
          break;
        case AttnKind::ca: {
          auto [kc, vc] =
              attn::cross_kv(select_batch(src, i), p("theta.weight"), p("theta.bias"), 2);
          ref = attn::cross_resolution_attention(tok, kc, vc);
          break;
        }
        case AttnKind::sa:
          ref = attn::reduced_self_attention(tok, 4, 4, p("wq"), p("wk"), p("wv"), p("wo"), 2, 2);
          break;
      }
      CHECK(same_bits(to_tokens(select_batch(y.value(), i)), ref));
    }
  }
}

TEST_CASE("attention layer bank shapes") {
  Registry reg(0);
  AttentionLayer gfa(reg, "g", 16, {AttnKind::gfa, 4});
  CHECK(reg.find_param("g.k")->value.shape() == Shape{16, 16});
  AttentionLayer mh(reg, "m", 16, {AttnKind::mhea, 1, 4, 0.25});
  CHECK(reg.find_param("m.k")->value.shape() == Shape{4, 4});
  AttentionLayer ea(reg, "e", 16, {AttnKind::ea, 1, 1, 0.5});
  CHECK(reg.find_param("e.v")->value.shape() == Shape{8, 16});
  AttentionLayer ca(reg, "c", 8, {AttnKind::ca, 1, 1, 0.25, 1, 3, 16});
  CHECK(reg.find_param("c.theta.weight")->value.shape() == Shape{16, 16, 1, 1});
  CHECK(reg.find_param("c.theta.bias")->value.shape() == Shape{16});
  Tape t;
  Ctx ctx{t};
  CHECK_THROWS_AS(ca(ctx, t.constant(oracle::random({1, 8, 2, 2}, 1))), ShapeError);
}

TEST_CASE("rtformer block: identity at init and shapes") {
  Registry reg(11);
  RTFormerBlock block(reg, "blk", mini());
  const auto xh = oracle::random({2, 8, 8, 8}, 1);
  const auto xl = oracle::random({2, 16, 4, 4}, 2);
  Tape t;
  Ctx ctx{t, true};
  auto [yh, yl] = block(ctx, t.constant(xh), t.constant(xl));
  CHECK(same_bits(yh.value(), xh));
  CHECK(same_bits(yl.value(), xl));
  CHECK_THROWS_AS(block(ctx, t.constant(xl), t.constant(xh)), ShapeError);
}

TEST_CASE("rtformer block: stepped causality") {
  for (int trial = 0; trial < 5; ++trial) {
    Registry reg(100 + trial);
    RTFormerBlock block(reg, "blk", mini());
    randomize_for_check(reg, 200 + trial);
    const auto xh = oracle::random({1, 8, 8, 8}, 300 + trial);
    const auto xl = oracle::random({1, 16, 4, 4}, 400 + trial);
    auto xh2 = xh, xl2 = xl;
    for (auto& v : xh2.data()) v += 0.5;
    xl2[3] += 1.0;
    Tape t;
    Ctx ctx{t, false};
    auto [yh, yl] = block(ctx, t.constant(xh), t.constant(xl));
    auto [ah, al] = block(ctx, t.constant(xh2), t.constant(xl));
    auto [bh, bl] = block(ctx, t.constant(xh), t.constant(xl2));
    CHECK(same_bits(al.value(), yl.value()));
    CHECK(max_abs_diff(bh.value(), yh.value()) > 1e-6);
  }
}

TEST_CASE("rtformer block matches its composition") {
  Registry reg(21);
  BlockConfig cfg = mini();
  RTFormerBlock block(reg, "blk", cfg);
  randomize_for_check(reg, 22);
  const auto xh = oracle::random({1, 8, 4, 4}, 1);
  const auto xl = oracle::random({1, 16, 2, 2}, 2);
  Tape t;
  Ctx ctx{t, false};
  auto [yh, yl] = block(ctx, t.constant(xh), t.constant(xl));

  auto P = [&](const std::string& n) { return reg.find_param("blk." + n)->value; };
  auto B = [&](const std::string& n) { return reg.find_buffer("blk." + n)->value; };
  auto bn = [&](const std::string& n, const TensorD& v) {
    return batch_norm_eval(v, P(n + ".gamma"), P(n + ".beta"), B(n + ".running_mean"),
                           B(n + ".running_var"), kBatchNormEps);
  };
  auto conv = [&](const std::string& n, const TensorD& v) {
    return oracle::conv2d(v, P(n + ".weight"), TensorD{}, 1, 1, 1);
  };
  auto ffn = [&](const std::string& p, const TensorD& v) {
    TensorD h = relu(bn(p + ".bn1", conv(p + ".conv1", v)));
    return bn(p + ".bn2", conv(p + ".conv2", h));
  };
  // low branch
  TensorD a = bn("low.attn_norm", xl);
  TensorD att = from_tokens(attn::gpu_friendly_attention(to_tokens(a), P("low.attn.k"),
                                                         P("low.attn.v"), cfg.groups_low),
                            2, 2);
  TensorD ul = add(xl, bn("low.attn_out", att));
  TensorD ref_l = add(ul, ffn("low.ffn", bn("low.ffn_norm", ul)));
  // high branch, fed by the low output
  auto [kc, vc] = attn::cross_kv(ref_l, P("high.attn.theta.weight"), P("high.attn.theta.bias"),
                                 cfg.cross_side);
  TensorD ca = from_tokens(
      attn::cross_resolution_attention(to_tokens(bn("high.attn_norm", xh)), kc, vc), 4, 4);
  TensorD uh = add(xh, bn("high.attn_out", ca));
  TensorD ref_h = add(uh, ffn("high.ffn", bn("high.ffn_norm", uh)));
  CHECK(max_abs_diff(yl.value(), ref_l) < 1e-12);
  CHECK(max_abs_diff(yh.value(), ref_h) < 1e-12);
}

TEST_CASE("rtformer block gradient check") {
  Registry reg(31);
  BlockConfig cfg = mini();
  RTFormerBlock block(reg, "blk", cfg);
  const auto xl = oracle::random({2, 16, 2, 2}, 3);
  check_grads(reg, oracle::random({2, 8, 4, 4}, 4), [&](Ctx& c, Var v) {
    auto [h, l] = block(c, v, c.tape.constant(xl));
    return ad::concat_channels(std::vector<Var>{h, ad::bilinear_resize(l, 4, 4)});
  });
  // and with respect to the low input
  randomize_for_check(reg, 5);
  const auto xh = oracle::random({2, 8, 4, 4}, 6);
  auto r = ad::grad_check([&](Tape& t, Var v) {
    Ctx ctx{t, true, false};
    auto [h, l] = block(ctx, t.constant(xh), v);
    return nn::probe_loss(t, h, 8);
  }, xl, kStep);
  CHECK(r.max_rel_error < kTol);
}

TEST_CASE("every attention kind in a block builds and differentiates") {
  struct Pair { AttnKind low, high; };
  for (Pair p : {Pair{AttnKind::sa, AttnKind::sa}, Pair{AttnKind::ea, AttnKind::ea},
                 Pair{AttnKind::mhea, AttnKind::mhea}, Pair{AttnKind::gfa, AttnKind::gfa},
                 Pair{AttnKind::gfa, AttnKind::ca}}) {
    for (FfnKind f : {FfnKind::conv, FfnKind::mlp_dw}) {
      INFO(to_string(p.low) << "/" << to_string(p.high) << " " << to_string(f));
      BlockConfig cfg = mini();
      cfg.low_attn = p.low;
      cfg.high_attn = p.high;
      cfg.ffn = f;
      Registry reg(41);
      RTFormerBlock block(reg, "blk", cfg);
      randomize_for_check(reg, 42);
      Tape t;
      Ctx ctx{t, true};
      auto [h, l] = block(ctx, t.leaf(oracle::random({2, 8, 4, 4}, 1)),
                          t.leaf(oracle::random({2, 16, 2, 2}, 2)));
      Var loss = ad::add(nn::probe_loss(t, h, 1), nn::probe_loss(t, l, 2));
      t.backward(loss);
      double g = 0;
      for (auto* prm : reg.parameters())
        for (double v : prm->grad.data()) g += std::abs(v);
      CHECK(std::isfinite(g));
      CHECK(g > 0);
    }
  }
}
