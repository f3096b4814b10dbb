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

#include "rtf/acceptance.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>

#include "rtf/attention.hpp"
#include "rtf/bench.hpp"
#include "rtf/blocks.hpp"
#include "rtf/count.hpp"
#include "rtf/model.hpp"
#include "rtf/train.hpp"

namespace rtf::acceptance {
namespace {

using ad::Tape;
using ad::TensorD;
using ad::Var;
using blocks::AttnKind;
using blocks::FfnKind;
using nn::Ctx;
using nn::Registry;

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-3;

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(const TensorD& a, const TensorD& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), sizeof(double) * a.size()) == 0;
}

TensorD random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  return uniform_tensor<double>(std::move(s), rng, lo, hi);
}

TensorD random(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return random(std::move(s), rng);
}

bool within(double value, double target, double rel) {
  return std::abs(value / target - 1.0) <= rel;
}

// ---- 1, 2: counts ---------------------------------------------------------

Outcome params_criterion() {
  Outcome o;
  struct Row { model::ModelConfig cfg; double target; };
  bool ok = true;
  for (const Row& r : {Row{model::slim(), 4.8e6}, Row{model::base(), 16.8e6}}) {
    const double p = static_cast<double>(model::count_params(r.cfg).total().params);
    const bool good = within(p, r.target, 0.05);
    ok = ok && good;
    o.details.push_back(fmt("%-5s params %.4fM  target %.1fM +-5%%  (%+.2f%%)  %s",
                            r.cfg.name.c_str(), p / 1e6, r.target / 1e6,
                            100 * (p / r.target - 1), good ? "ok" : "out of range"));
  }
  o.pass = ok;
  return o;
}

Outcome flops_criterion() {
  Outcome o;
  struct Row { model::ModelConfig cfg; std::int64_t h, w; double target; };
  auto coco = model::base();
  coco.num_classes = 171;
  bool ok = true;
  for (const Row& r : {Row{model::slim(), 512, 2048, 17.5e9}, Row{model::base(), 512, 2048, 67.4e9},
                       Row{coco, 640, 640, 26.6e9}}) {
    const auto total = model::count_flops(r.cfg, r.h, r.w).total();
    const double f = static_cast<double>(total.flops());
    const double macs = static_cast<double>(total.macs());
    const bool good = within(f, r.target, 0.10);
    ok = ok && good;
    o.details.push_back(fmt("%-5s %4lldx%-4lld flops %.2fG  target %.1fG +-10%%  (x%.3f)  %s  "
                            "[multiply-adds %.2fG, x%.3f of target]",
                            r.cfg.name.c_str(), static_cast<long long>(r.h),
                            static_cast<long long>(r.w), f / 1e9, r.target / 1e9, f / r.target,
                            good ? "ok" : "out of range", macs / 1e9, macs / r.target));
  }
  o.pass = ok;
  return o;
}

// ---- 3, 4: attention identities -------------------------------------------

Outcome degeneracy_criterion() {
  Outcome o;
  Rng rng(3);
  double gfa = 0, mhea = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + static_cast<std::int64_t>(rng.below(12));
    const auto d = 1 + static_cast<std::int64_t>(rng.below(8));
    const auto m = 1 + static_cast<std::int64_t>(rng.below(8));
    const TensorD x = random({n, d}, rng, -3, 3);
    const TensorD k = random({m, d}, rng), v = random({m, d}, rng);
    const TensorD ea = attn::external_attention(x, k, v);
    gfa = std::max(gfa, max_abs_diff(attn::gpu_friendly_attention(x, k, v, 1), ea));
    mhea = std::max(mhea, max_abs_diff(attn::multi_head_external_attention(x, k, v, 1), ea));
  }
  o.details.push_back(fmt("GFA(H=1) vs EA: max |diff| %.3g over 100 shapes (bound 1e-12)", gfa));
  o.details.push_back(fmt("MHEA(H=1) vs EA: max |diff| %.3g over 100 shapes (bound 1e-12)", mhea));
  o.pass = gfa <= 1e-12 && mhea <= 1e-12;
  return o;
}

Outcome normalization_criterion() {
  // A row (group) of column-softmax mass m normalizes to m / (m + eps), so
  // its sum sits eps / (m + eps) below 1 by definition. The sum is compared
  // to that value, and to 1 itself on rows where the eps term is <= 1e-9.
  Outcome o;
  Rng rng(4);
  double vs_exact = 0, vs_one = 0, worst_light = 0, min_entry = 1;
  std::int64_t light_rows = 0, rows = 0, not_bitwise = 0;
  auto check_row = [&](const TensorD& soft, const TensorD& out, std::int64_t i, std::int64_t lo,
                       std::int64_t hi) {
    double mass = 0, sum = 0;
    for (std::int64_t j = lo; j < hi; ++j) {
      mass += soft.at(i, j);
      sum += out.at(i, j);
      min_entry = std::min(min_entry, out.at(i, j));
    }
    ++rows;
    vs_exact = std::max(vs_exact, std::abs(sum - mass / (mass + kDoubleNormEps)));
    if (kDoubleNormEps / (mass + kDoubleNormEps) <= 1e-9) {
      vs_one = std::max(vs_one, std::abs(sum - 1));
    } else {
      ++light_rows;
      worst_light = std::max(worst_light, std::abs(sum - 1));
    }
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + static_cast<std::int64_t>(rng.below(16));
    const auto groups = 1 + static_cast<std::int64_t>(rng.below(4));
    const auto width = 1 + static_cast<std::int64_t>(rng.below(6));
    const auto m = groups * width;
    const double spread = trial % 4 == 0 ? 30.0 : 3.0;
    const TensorD a = random({n, m}, rng, -spread, spread);
    const TensorD soft = column_softmax(a);
    const TensorD g = grouped_double_norm(a, groups);
    const TensorD dn = double_norm(a);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t gi = 0; gi < groups; ++gi) check_row(soft, g, i, gi * width, (gi + 1) * width);
      check_row(soft, dn, i, 0, m);
    }
    if (!same_bits(grouped_double_norm(a, 1), dn)) ++not_bitwise;
  }
  o.details.push_back(fmt("%lld DN rows and GDN row groups checked", static_cast<long long>(rows)));
  o.details.push_back(fmt("max |sum - m/(m+eps)| %.3g over all rows (bound 1e-9)", vs_exact));
  o.details.push_back(fmt("max |sum - 1| %.17g on rows with mass m >= 1 - eps (bound 1e-9 + 64 ulp)", vs_one));
  o.details.push_back(fmt("%lld lighter rows, where eps alone pulls the sum below 1 - 1e-9: "
                          "max |sum - 1| %.3g (reported)",
                          static_cast<long long>(light_rows), worst_light));
  o.details.push_back(fmt("smallest entry %.3g (must be >= 0)", min_entry));
  o.details.push_back(fmt("GDN(H=1) differs bitwise from DN on %lld of 1000 matrices",
                          static_cast<long long>(not_bitwise)));
  // rows of mass exactly 1 land on the bound itself, give them rounding room
  const double one_bound = 1e-9 + 64 * std::numeric_limits<double>::epsilon();
  o.pass = vs_exact <= 1e-9 && vs_one <= one_bound && min_entry >= 0 && not_bitwise == 0;
  return o;
}

// ---- 5: gradients ---------------------------------------------------------

struct GradLog {
  Outcome& out;
  bool ok = true;

  void record(const std::string& name, const ad::GradCheckResult& r) {
    const bool good = r.max_rel_error < kGradTol && r.skipped == 0 && r.coords > 0;
    ok = ok && good;
    out.details.push_back(fmt("%-28s max rel err %.2e  coords %4lld  refined %lld  skipped %lld  %s",
                              name.c_str(), r.max_rel_error, static_cast<long long>(r.coords),
                              static_cast<long long>(r.refined), static_cast<long long>(r.skipped),
                              good ? "ok" : "FAIL"));
  }

  /// Input and parameter gradients of probe_loss(f(x)) in training-mode BN
  /// with running statistics frozen.
  void module(const std::string& name, Registry& reg, const TensorD& x,
              const std::function<Var(Ctx&, Var)>& f, std::uint64_t seed) {
    nn::randomize_for_check(reg, seed);
    record(name + " (input)", ad::grad_check([&](Tape& t, Var v) {
             Ctx ctx{t, true, false};
             return nn::probe_loss(t, f(ctx, v), seed + 1);
           }, x, kGradStep));
    auto params = reg.parameters();
    if (params.empty()) return;
    record(name + " (params)", ad::grad_check_params([&](Tape& t) {
             Ctx ctx{t, true, false};
             return nn::probe_loss(t, f(ctx, t.constant(x)), seed + 1);
           }, params, kGradStep, 12));
  }
};

blocks::BlockConfig mini_block() {
  blocks::BlockConfig c;
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

Outcome gradient_criterion() {
  Outcome o;
  GradLog log{o};
  const TensorD x8 = random({2, 8, 4, 4}, 1);
  const TensorD src = random({2, 16, 2, 2}, 2);
  for (AttnKind kind : {AttnKind::ea, AttnKind::mhea, AttnKind::gfa, AttnKind::ca, AttnKind::sa}) {
    Registry reg(10);
    const blocks::AttentionLayer layer(reg, "attn", 8, {kind, 2, 2, 0.5, 2, 2, 16});
    log.module("attention " + std::string(to_string(kind)), reg, x8,
               [&](Ctx& c, Var v) { return layer(c, v, c.tape.constant(src)); }, 11);
    if (kind == AttnKind::ca)
      log.record("attention ca (source)", ad::grad_check([&](Tape& t, Var s) {
                   Ctx ctx{t, true, false};
                   return nn::probe_loss(t, layer(ctx, t.constant(x8), s), 12);
                 }, src, kGradStep));
  }
  for (FfnKind kind : {FfnKind::conv, FfnKind::mlp_dw}) {
    Registry reg(20);
    const blocks::Ffn ffn(reg, "ffn", 4, kind);
    log.module("ffn " + std::string(to_string(kind)), reg, random({2, 4, 4, 4}, 21),
               [&](Ctx& c, Var v) { return ffn(c, v); }, 22);
  }
  for (std::int64_t stride : {1, 2}) {
    Registry reg(30);
    const blocks::BasicBlock b(reg, "basic", 3, 4, stride);
    log.module(fmt("residual block stride %lld", static_cast<long long>(stride)), reg,
               random({2, 3, 4, 4}, 31), [&](Ctx& c, Var v) { return b(c, v); }, 32);
  }
  for (std::int64_t ratio : {2, 4}) {
    Registry reg(40);
    const blocks::Exchange ex(reg, "exchange", 3, 4, ratio);
    const TensorD low = random({2, 4, 8 / ratio, 8 / ratio}, 41);
    log.module(fmt("exchange ratio %lld", static_cast<long long>(ratio)), reg,
               random({2, 3, 8, 8}, 42), [&](Ctx& c, Var v) {
                 auto [h, l] = ex(c, v, c.tape.constant(low));
                 return ad::concat_channels(std::vector<Var>{h, ad::bilinear_resize(l, 8, 8)});
               }, 43);
  }
  {
    Registry reg(50);
    const model::Dappm d(reg, "dappm", 4, 3, 2);
    log.module("dappm", reg, random({2, 4, 4, 4}, 51), [&](Ctx& c, Var v) { return d(c, v); },
               52);
  }
  {
    Registry reg(60);
    const model::SegHead h(reg, "head", 4, 3);
    log.module("segmentation head", reg, random({2, 4, 4, 4}, 61),
               [&](Ctx& c, Var v) { return h(c, v); }, 62);
  }
  {
    Registry reg(70);
    const blocks::RTFormerBlock block(reg, "block", mini_block());
    const TensorD xl = random({2, 16, 2, 2}, 71);
    log.module("rtformer block", reg, random({2, 8, 4, 4}, 72), [&](Ctx& c, Var v) {
      auto [h, l] = block(c, v, c.tape.constant(xl));
      return ad::concat_channels(std::vector<Var>{h, ad::bilinear_resize(l, 4, 4)});
    }, 73);
    const TensorD xh = random({2, 8, 4, 4}, 74);
    log.record("rtformer block (low input)", ad::grad_check([&](Tape& t, Var v) {
                 Ctx ctx{t, true, false};
                 auto [h, l] = block(ctx, t.constant(xh), v);
                 return nn::probe_loss(t, h, 75);
               }, xl, kGradStep));
  }
  o.pass = log.ok;
  return o;
}

// ---- 6: structural efficiency ---------------------------------------------

Outcome efficiency_criterion(const Options& opt) {
  Outcome o;
  bool ok = true;
  for (std::int64_t heads : {2, 4, 8}) {
    const auto pair = bench::matched_pair(4096, 256, heads, 256);
    const auto m = bench::describe_attention(bench::Variant::mhea, pair.mhea);
    const auto g = bench::describe_attention(bench::Variant::gfa, pair.gfa);
    const double rel = static_cast<double>(g.flops - m.flops) / static_cast<double>(m.flops);
    const auto gm = attn::mhea_macs(4096, 256, 256, heads).gemm;
    const auto gg = attn::gfa_macs(4096, 256, 256).gemm;
    const bool good = std::abs(rel) <= 0.01;
    const bool calls = m.matmul_calls == 2 * heads && g.matmul_calls == 2;
    ok = ok && good && calls;
    o.details.push_back(fmt("N=4096 d=256 M=256 H=%lld: flops MHEA %lld GFA %lld (%+.2f%%, bound 1%%) "
                            "%s; matmul-only flops %s; calls %lld vs %lld %s",
                            static_cast<long long>(heads), static_cast<long long>(m.flops),
                            static_cast<long long>(g.flops), 100 * rel, good ? "ok" : "FAIL",
                            gm == gg ? "equal" : "differ", static_cast<long long>(m.matmul_calls),
                            static_cast<long long>(g.matmul_calls), calls ? "ok" : "FAIL"));
  }
  bench::MeasureOptions mo;
  mo.trials = std::max(opt.bench_trials, 30);
  // single ~35 ms calls let one scheduler hiccup dominate a trial
  mo.min_trial_ns = 200'000'000;
  const auto pair = bench::matched_pair(4096, 256, 8, 256);
  const auto g = bench::bench_attention(bench::Variant::gfa, pair.gfa, mo);
  const auto m = bench::bench_attention(bench::Variant::mhea, pair.mhea, mo);
  const bool calls = m.matmul_calls == 16 && g.matmul_calls == 2;
  const bool stable = g.cv < 0.15 && m.cv < 0.15;
  ok = ok && calls && stable;
  for (const auto* r : {&g, &m})
    o.details.push_back(fmt("timed %-4s (f32, %d trials x %lld reps): median %.3f ms  cv %.3f  "
                            "measured matmul calls %lld",
                            r->variant.c_str(), mo.trials, static_cast<long long>(r->inner_reps),
                            r->median_ns / 1e6, r->cv, static_cast<long long>(r->matmul_calls)));
  o.details.push_back(fmt("GFA/MHEA median time ratio %.3f (reported, not asserted)",
                          g.median_ns / m.median_ns));
  o.details.push_back(fmt("cv < 0.15: %s; calls 2 vs 16: %s", stable ? "ok" : "FAIL",
                          calls ? "ok" : "FAIL"));
  o.pass = ok;
  return o;
}

// ---- 7: stepped causality -------------------------------------------------

Outcome causality_criterion() {
  Outcome o;
  Rng rng(7);
  int isolated = 0, coupled = 0;
  double min_change = INFINITY;
  for (int trial = 0; trial < 20; ++trial) {
    blocks::BlockConfig cfg;
    cfg.d_h = 8;
    cfg.d_l = 8 << rng.below(3);
    // the stepped layout: GFA below, cross-resolution attention above
    cfg.low_attn = AttnKind::gfa;
    cfg.high_attn = AttnKind::ca;
    cfg.groups_low = cfg.heads_low = 1 << rng.below(4);
    cfg.groups_high = cfg.heads_high = 1 << rng.below(3);
    cfg.sigma_high = 2;
    cfg.cross_side = 1 + static_cast<std::int64_t>(rng.below(4));
    cfg.ffn = rng.below(2) ? FfnKind::conv : FfnKind::mlp_dw;
    Registry reg(700 + trial);
    const blocks::RTFormerBlock block(reg, "block", cfg);
    nn::randomize_for_check(reg, 800 + trial);
    const TensorD xh = random({2, 8, 8, 8}, rng), xl = random({2, cfg.d_l, 4, 4}, rng);
    TensorD xh2 = xh, xl2 = xl;
    for (auto& v : xh2.data()) v += rng.uniform(-0.5, 0.5);
    xl2[static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(xl2.size())))] += 1.0;
    Tape t(false);
    Ctx ctx{t, trial % 2 == 0, false};
    auto [yh, yl] = block(ctx, t.constant(xh), t.constant(xl));
    auto [ah, al] = block(ctx, t.constant(xh2), t.constant(xl));
    auto [bh, bl] = block(ctx, t.constant(xh), t.constant(xl2));
    if (same_bits(al.value(), yl.value())) ++isolated;
    const double change = max_abs_diff(bh.value(), yh.value());
    min_change = std::min(min_change, change);
    if (change > 0) ++coupled;
  }
  o.details.push_back(fmt("x_h perturbed: y_l bitwise unchanged in %d of 20 blocks", isolated));
  o.details.push_back(fmt("x_l perturbed: y_h changed in %d of 20 blocks (smallest max |change| %.3g)",
                          coupled, min_change));
  o.pass = isolated == 20 && coupled == 20;
  return o;
}

// ---- 8: toy training ------------------------------------------------------

Outcome training_criterion(const Options& opt) {
  Outcome o;
  const auto cfg = model::tiny();
  train::TrainConfig tc;
  tc.metrics_path = opt.metrics_path;
  std::vector<train::TrainResult> runs;
  std::vector<TensorD> probes;
  const TensorD probe = random({2, 3, 64, 64}, 8);
  for (int run = 0; run < 2; ++run) {
    const auto start = std::chrono::steady_clock::now();
    model::Model m(cfg);
    runs.push_back(train::train(m, tc, opt.progress));
    probes.push_back(m.infer(probe));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.details.push_back(fmt("run %d: %lld iterations, batch %lld, final loss %.4f, held-out mIoU %.4f "
                            "(%.0f s)",
                            run + 1, static_cast<long long>(tc.max_iters),
                            static_cast<long long>(tc.batch), runs.back().rows.back().loss,
                            runs.back().final_miou, secs));
    tc.metrics_path.clear();
  }
  bool same = runs[0].rows.size() == runs[1].rows.size() && same_bits(probes[0], probes[1]);
  for (std::size_t i = 0; same && i < runs[0].rows.size(); ++i)
    same = train::format_metric(runs[0].rows[i]) == train::format_metric(runs[1].rows[i]);
  double best = 0;
  for (const auto& r : runs[0].rows) best = std::max(best, r.miou);
  o.details.push_back(fmt("best evaluated mIoU %.4f; threshold 0.85 on the final evaluation", best));
  o.details.push_back(std::string("metrics log and trained outputs bitwise identical across runs: ") +
                      (same ? "yes" : "NO"));
  o.pass = runs[0].final_miou > 0.85 && same;
  return o;
}

// ---- 9: ablation matrix ---------------------------------------------------

Outcome ablation_criterion() {
  Outcome o;
  struct Attn { const char* name; AttnKind low, high; };
  const Attn attns[] = {{"SA", AttnKind::sa, AttnKind::sa},
                        {"EA", AttnKind::ea, AttnKind::ea},
                        {"MHEA", AttnKind::mhea, AttnKind::mhea},
                        {"GFA", AttnKind::gfa, AttnKind::gfa},
                        {"GFA+CA", AttnKind::gfa, AttnKind::ca}};
  const model::Dual groups[] = {{1, 1}, {1, 4}, {2, 8}};
  int done = 0, failed = 0;
  for (const Attn& a : attns)
    for (FfnKind ffn : {FfnKind::conv, FfnKind::mlp_dw})
      for (const model::Dual& g : groups)
        for (std::int64_t side : {6, 8, 12}) {
          auto cfg = model::tiny();
          cfg.low_attn = a.low;
          cfg.high_attn = a.high;
          cfg.ffn = ffn;
          cfg.groups = g;
          cfg.heads = g;
          cfg.cross_side = side;
          const std::string label = fmt("%s ffn=%s groups=%lld/%lld s=%lld", a.name,
                                        std::string(to_string(ffn)).c_str(), static_cast<long long>(g.low),
                                        static_cast<long long>(g.high),
                                        static_cast<long long>(side));
          try {
            model::Model m(cfg);
            const auto batch = data::generate_dataset(side, 2, cfg.num_classes, 64, 64);
            Tape t;
            Ctx ctx{t, true};
            Var loss = train::cross_entropy(m(ctx, t.constant(data::stack_images(batch))),
                                            data::stack_labels(batch));
            t.backward(loss);
            double g2 = 0;
            for (auto* p : m.registry().parameters())
              for (double v : p->grad.data()) g2 += v * v;
            if (!std::isfinite(loss.value()[0]) || !std::isfinite(g2) || g2 <= 0)
              throw NumericError("non-finite or vanishing gradient");
            ++done;
          } catch (const std::exception& e) {
            ++failed;
            o.details.push_back(label + ": " + e.what());
          }
        }
  o.details.push_back(fmt("%d of %d configurations completed forward + backward", done,
                          done + failed));
  o.pass = failed == 0;
  return o;
}

}  // namespace

std::string title(int id) {
  switch (id) {
    case 1: return "parameter counts";
    case 2: return "FLOP counts";
    case 3: return "degeneracy equivalences";
    case 4: return "normalization invariants";
    case 5: return "gradient checks";
    case 6: return "structural efficiency (MHEA vs GFA)";
    case 7: return "stepped-layout causality";
    case 8: return "toy training";
    case 9: return "ablation-axis smoke matrix";
    default: throw ConfigError("no criterion " + std::to_string(id) + " (valid: 1-" +
                               std::to_string(kNumCriteria) + ")");
  }
}

Outcome run_criterion(int id, const Options& opt) {
  const std::string name = title(id);
  Outcome o;
  switch (id) {
    case 1: o = params_criterion(); break;
    case 2: o = flops_criterion(); break;
    case 3: o = degeneracy_criterion(); break;
    case 4: o = normalization_criterion(); break;
    case 5: o = gradient_criterion(); break;
    case 6: o = efficiency_criterion(opt); break;
    case 7: o = causality_criterion(); break;
    case 8: o = training_criterion(opt); break;
    case 9: o = ablation_criterion(); break;
  }
  o.criterion = id;
  o.title = name;
  return o;
}

std::vector<int> invariant_suite() { return {1, 3, 4, 5, 7, 9}; }

void print(std::ostream& os, const Outcome& o) {
  os << "criterion " << o.criterion << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.title
     << '\n';
  for (const auto& line : o.details) os << "    " << line << '\n';
}

}  // namespace rtf::acceptance
