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
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "rtf/checkpoint.hpp"
#include "rtf/count.hpp"
#include "rtf/model.hpp"

using namespace rtf;
using namespace rtf::model;
using ad::Tape;
using ad::TensorD;

namespace {

bool same_bits(const TensorD& a, const TensorD& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), sizeof(double) * a.size()) == 0;
}

std::int64_t params_with_prefix(Registry& reg, const std::string& prefix) {
  std::int64_t n = 0;
  for (auto* p : reg.parameters())
    if (p->name.starts_with(prefix + ".")) n += p->value.size();
  return n;
}

const char* kModules[] = {"stem", "stage1", "stage2", "stage3", "stage4",
                          "stage5", "dappm",  "head"};

}  // namespace

TEST_CASE("presets") {
  const auto s = slim(), b = base(), t = tiny();
  CHECK(s.cross_side * s.cross_side == 64);
  CHECK(b.cross_side * b.cross_side == 144);
  CHECK(s.channels[0].high == 32);
  CHECK(s.channels[3] == Dual{64, 256});
  CHECK(b.channels[4] == Dual{128, 512});
  CHECK(s.blocks[2] == Dual{1, 2});
  CHECK(t.channels[0].high == 4);
  CHECK(t.channels[4] == Dual{8, 32});
  CHECK(t.num_classes == 4);
  for (const auto& c : {s, b, t}) CHECK_NOTHROW(c.validate());
}

TEST_CASE("config text round trip and errors") {
  for (const auto& c : {slim(), base(), tiny()}) {
    std::istringstream in(format_config(c));
    CHECK(parse_config(in) == c);
  }
  std::istringstream in(
      "# ablation\npreset = tiny\nattention = gfa+ca\nffn = mlp_dw\n"
      "channels = 4, 8, 8/16, 8/32, 8/32\nblocks = 2, 2, 1/2, 1, 1\ngroups_low = 4\n");
  const auto c = parse_config(in);
  CHECK(c.ffn == FfnKind::mlp_dw);
  CHECK(c.groups.low == 4);
  CHECK(c.num_classes == 4);
  CHECK(c.low_attn == AttnKind::gfa);
  CHECK(c.high_attn == AttnKind::ca);

  auto fails = [](const std::string& text) {
    std::istringstream s(text);
    CHECK_THROWS_AS(parse_config(s), ConfigError);
  };
  fails("bogus = 1\n");
  fails("channels = 1, 2, 3\n");
  fails("channels = 32/4, 64, 64/128, 64/256, 64/256\n");
  fails("channels = 32, 64, 64/128, 32/256, 64/256\n");
  fails("num_classes = two\n");
  fails("groups_low = 3\n");
  fails("no equals sign\n");
  fails("attention = ca\n");
  CHECK_THROWS_AS(load_config("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("parameter counts: analytic and registry agree") {
  for (const auto& cfg : {tiny(), slim(), base()}) {
    INFO(cfg.name);
    Model m(cfg);
    const auto rep = count_params(cfg);
    CHECK(rep.total().params == m.registry().num_parameters());
    std::int64_t sum = 0;
    for (const char* mod : kModules) {
      INFO(mod);
      CHECK(rep.row(mod).params == params_with_prefix(m.registry(), mod));
      sum += rep.row(mod).params;
    }
    CHECK(sum == rep.total().params);
  }
  CHECK(std::abs(count_params(slim()).total().params / 4.8e6 - 1) < 0.05);
  CHECK(std::abs(count_params(base()).total().params / 16.8e6 - 1) < 0.05);
}

TEST_CASE("multiply-adds: analytic and instrumented agree per module") {
  struct Case {
    ModelConfig cfg;
    std::int64_t n, h, w;
  };
  auto ablation = tiny();
  ablation.low_attn = AttnKind::mhea;
  ablation.high_attn = AttnKind::sa;
  ablation.ffn = FfnKind::mlp_dw;
  auto ea = tiny();
  ea.low_attn = ea.high_attn = AttnKind::ea;
  auto gfa = tiny();
  gfa.high_attn = AttnKind::gfa;
  for (const Case& c : {Case{tiny(), 1, 64, 64}, Case{tiny(), 2, 128, 64},
                        Case{slim(), 1, 64, 128}, Case{ablation, 1, 64, 64},
                        Case{ea, 1, 64, 64}, Case{gfa, 1, 128, 128}}) {
    INFO(c.cfg.name << " " << c.n << "x" << c.h << "x" << c.w);
    Model m(c.cfg);
    const auto rep = count_flops(c.cfg, c.h, c.w);
    Tape tape(false);
    nn::Ctx ctx{tape, false};
    Trace trace;
    reset_op_counters();
    m(ctx, tape.constant(oracle::random({c.n, 3, c.h, c.w}, 1, 0, 1)), &trace);
    REQUIRE(trace.counters.size() == rep.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      INFO(rep.rows[i].module);
      CHECK(trace.counters[i].first == rep.rows[i].module);
      CHECK(trace.counters[i].second.gemm_macs == c.n * rep.rows[i].gemm_macs);
      CHECK(trace.counters[i].second.norm_macs == c.n * rep.rows[i].norm_macs);
      CHECK(trace.counters[i].second.matmul_calls == c.n * rep.rows[i].matmul_calls);
    }
  }
}

TEST_CASE("flop counts are reported at 2 x multiply-adds") {
  const auto rep = count_flops(slim(), 512, 2048);
  CHECK(rep.total().flops() == 2 * rep.total().macs());
  std::int64_t sum = 0;
  for (const auto& r : rep.rows) sum += r.flops();
  CHECK(sum == rep.total().flops());
  const std::string csv = rep.to_csv();
  CHECK(csv.starts_with("module,params,flops\nstem,"));
  CHECK(csv.find("\ntotal,") != std::string::npos);
}

TEST_CASE("convolutional flops scale with area") {
  for (const auto& cfg : {slim(), base()}) {
    const auto a = count_flops(cfg, 512, 512), b = count_flops(cfg, 512, 1024);
    for (const char* mod : {"stem", "stage1", "stage2", "stage3", "head"}) {
      CHECK(b.row(mod).gemm_macs == 2 * a.row(mod).gemm_macs);
      CHECK(b.row(mod).norm_macs == 2 * a.row(mod).norm_macs);
    }
    // What does not double: the theta projection of each block (fixed s x s
    // cross-feature) and DAPPM's global branch (a 1 x 1 map).
    const std::int64_t s = cfg.cross_side, dl = cfg.d_l(), dh = cfg.d_h();
    const std::int64_t theta = s * s * dl * 2 * dh;
    const std::int64_t global = dl * cfg.dappm_width;
    CHECK(2 * a.row("stage4").gemm_macs - b.row("stage4").gemm_macs == theta);
    CHECK(2 * a.row("stage5").gemm_macs - b.row("stage5").gemm_macs == theta);
    CHECK(2 * a.row("dappm").gemm_macs - b.row("dappm").gemm_macs == global);
  }
}

TEST_CASE("forward shapes and strides") {
  {
    Model m(slim());
    const auto y = m.infer(oracle::random({1, 3, 64, 64}, 2, 0, 1));
    CHECK(y.shape() == Shape{1, 19, 64, 64});
  }
  Model m(tiny());
  Tape tape(false);
  nn::Ctx ctx{tape, false};
  Trace trace;
  const std::int64_t H = 128, W = 64;
  m(ctx, tape.constant(oracle::random({2, 3, H, W}, 3, 0, 1)), &trace);
  const std::pair<const char*, std::int64_t> strides[] = {
      {"stem", 4},        {"stage1", 4},      {"stage2", 8},      {"stage3.high", 8},
      {"stage3.low", 16}, {"stage4.high", 8}, {"stage4.low", 32}, {"stage5.high", 8},
      {"stage5.low", 32}, {"dappm", 32},      {"fused", 8},       {"logits", 1}};
  for (auto [name, stride] : strides) {
    INFO(name);
    bool found = false;
    for (const auto& [n, v] : trace.features) {
      if (n != std::string(name)) continue;
      found = true;
      CHECK(v.dim(0) == 2);
      CHECK(v.dim(2) == H / stride);
      CHECK(v.dim(3) == W / stride);
    }
    CHECK(found);
  }
  CHECK_THROWS_AS(m.infer(TensorD(Shape{1, 3, 96, 64})), ConfigError);
  CHECK_THROWS_AS(m.infer(TensorD(Shape{1, 1, 64, 64})), ShapeError);
}

TEST_CASE("eval forward is deterministic; seeds matter") {
  const auto x = oracle::random({1, 3, 64, 64}, 4, 0, 1);
  Model a(tiny()), b(tiny());
  CHECK(same_bits(a.infer(x), a.infer(x)));
  CHECK(same_bits(a.infer(x), b.infer(x)));
  auto cfg = tiny();
  cfg.seed = 9;
  Model c(cfg);
  CHECK_FALSE(same_bits(a.infer(x), c.infer(x)));
}

TEST_CASE("dappm") {
  Registry reg(1);
  Dappm d(reg, "dappm", 4, 3, 2);
  randomize_for_check(reg, 2);
  Tape t(false);
  nn::Ctx ctx{t, false};
  {
    Var y = d(ctx, t.constant(TensorD(Shape{1, 4, 16, 16}, 0.7)));
    CHECK(y.shape() == Shape{1, 2, 16, 16});
    // Pools and 1x1 convs keep a constant field constant; only the zero
    // padding of the 3x3 fusion convs touches the outer 4 pixels.
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t i = 4; i < 12; ++i)
        for (std::int64_t j = 4; j < 12; ++j)
          CHECK(std::abs(y.value().at(0, c, i, j) - y.value().at(0, c, 8, 8)) < 1e-12);
  }
  {
    // On a single-pixel map every branch is exactly constant.
    Var y = d(ctx, t.constant(TensorD(Shape{1, 4, 1, 1}, 0.7)));
    CHECK(y.shape() == Shape{1, 2, 1, 1});
  }
  // k = 2p + 1 keeps every pyramid pool legal down to 1 x 1...
  for (const auto& p : kDappmPools) CHECK(pool_fits(p, 1, 1));
  // ...but an unpadded window larger than the map does not fit.
  CHECK_FALSE(pool_fits(PoolSpec{5, 2, 0}, 4, 4));
  {
    // fallback to the global branch on maps too small for the pyramid pools
    Registry r2(1);
    Dappm small(r2, "dappm", 2, 2, 2);
    Var y = small(ctx, t.constant(TensorD(Shape{1, 2, 1, 1}, 1.0)));
    CHECK(y.shape() == Shape{1, 2, 1, 1});
  }
  const auto x = oracle::random({2, 4, 4, 4}, 3);
  auto r = ad::grad_check([&](Tape& tp, Var v) {
    nn::Ctx c{tp, true, false};
    return nn::probe_loss(tp, d(c, v), 5);
  }, x, 1e-3);
  CHECK(r.max_rel_error < 1e-4);
  auto params = reg.parameters();
  auto rp = ad::grad_check_params([&](Tape& tp) {
    nn::Ctx c{tp, true, false};
    return nn::probe_loss(tp, d(c, tp.constant(x)), 5);
  }, params, 1e-3, 8);
  CHECK(rp.max_rel_error < 1e-4);
}

TEST_CASE("segmentation head") {
  Registry reg(1);
  SegHead head(reg, "head", 4, 1);
  for (auto* p : reg.parameters())
    if (p->name.ends_with("weight") || p->name.ends_with("bias") || p->name.ends_with("beta"))
      for (auto& v : p->value.data()) v = 0.0;
  Tape t(false);
  nn::Ctx ctx{t, true};
  Var y = head(ctx, t.constant(oracle::random({2, 4, 4, 4}, 1)));
  CHECK(y.shape() == Shape{2, 1, 4, 4});
  for (double v : y.value().data()) CHECK(v == 0.0);

  Registry g(2);
  SegHead h2(g, "head", 4, 3);
  randomize_for_check(g, 3);
  const auto x = oracle::random({2, 4, 4, 4}, 4);
  auto r = ad::grad_check([&](Tape& tp, Var v) {
    nn::Ctx c{tp, true, false};
    return nn::probe_loss(tp, ad::bilinear_resize(h2(c, v), 8, 8), 6);
  }, x, 1e-3);
  CHECK(r.max_rel_error < 1e-4);
  auto params = g.parameters();
  auto rp = ad::grad_check_params([&](Tape& tp) {
    nn::Ctx c{tp, true, false};
    return nn::probe_loss(tp, h2(c, tp.constant(x)), 6);
  }, params, 1e-3, 16);
  CHECK(rp.max_rel_error < 1e-4);
}

TEST_CASE("tiny model matches the composition of its parts") {
  // The model is the head applied to high + up(DAPPM(low)) of its stage-5
  // features; rebuild those last steps from the trace.
  Model m(tiny());
  Tape t(false);
  nn::Ctx ctx{t, false};
  Trace trace;
  Var y = m(ctx, t.constant(oracle::random({1, 3, 64, 64}, 8, 0, 1)), &trace);
  auto feature = [&](const std::string& n) {
    for (const auto& [k, v] : trace.features)
      if (k == n) return v.value();
    FAIL("missing feature " << n);
    return TensorD{};
  };
  auto& reg = m.registry();
  Dappm d_ref(reg, "probe.dappm", 32, 16, 8);
  auto copy = [&](const std::string& from, const std::string& to) {
    for (auto* p : reg.parameters())
      if (p->name.starts_with(from + "."))
        reg.find_param(to + p->name.substr(from.size()))->value = p->value;
    for (auto* b : reg.buffers())
      if (b->name.starts_with(from + "."))
        reg.find_buffer(to + b->name.substr(from.size()))->value = b->value;
  };
  copy("dappm", "probe.dappm");
  SegHead h_ref(reg, "probe.head", 8, 4);
  copy("head", "probe.head");
  Var dl = d_ref(ctx, t.constant(feature("stage5.low")));
  CHECK(same_bits(dl.value(), feature("dappm")));
  const TensorD fused = add(feature("stage5.high"), bilinear_resize(dl.value(), 8, 8));
  CHECK(same_bits(fused, feature("fused")));
  Var logits = ad::bilinear_resize(h_ref(ctx, t.constant(fused)), 64, 64);
  CHECK(same_bits(logits.value(), y.value()));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "rtf_model_test.ckpt").string();
  Model a(tiny());
  auto cfg = tiny();
  cfg.seed = 3;
  Model b(cfg);
  for (auto* buf : a.registry().buffers())
    for (auto& v : buf->value.data()) v += 0.25;
  save_checkpoint(a.registry(), path);
  const auto x = oracle::random({1, 3, 64, 64}, 2, 0, 1);
  CHECK_FALSE(same_bits(a.infer(x), b.infer(x)));
  load_checkpoint(b.registry(), path);
  CHECK(same_bits(a.infer(x), b.infer(x)));

  Model other(slim());
  CHECK_THROWS_AS(load_checkpoint(other.registry(), path), FormatError);
  std::filesystem::remove(path);
  std::filesystem::remove(manifest_path(path));
  CHECK_THROWS_AS(load_checkpoint(b.registry(), path), FormatError);
}
