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

#include "rtf/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rtf/attention.hpp"
#include "rtf/count.hpp"
#include "rtf/rng.hpp"

namespace rtf::bench {
namespace {

using TF = Tensor<float>;

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

/// Grid with h * w = n, as square as possible.
std::pair<std::int64_t, std::int64_t> grid_of(std::int64_t n) {
  std::int64_t h = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
  while (h > 1 && n % h) --h;
  return {h, n / h};
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
T parse_num(const std::string& s, const std::string& line) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("bad number '" + s + "' in report line: " + line);
  return v;
}

}  // namespace

Stats summarize(std::span<const double> xs) {
  Stats st;
  if (xs.empty()) return st;
  const double n = static_cast<double>(xs.size());
  st.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  const std::size_t k = s.size();
  st.median = k % 2 ? s[k / 2] : 0.5 * (s[k / 2 - 1] + s[k / 2]);
  if (k > 1 && st.mean > 0) {
    double ss = 0;
    for (double x : xs) ss += (x - st.mean) * (x - st.mean);
    st.cv = std::sqrt(ss / (n - 1)) / st.mean;
  }
  return st;
}

BenchRecord measure(const std::function<void()>& fn, const MeasureOptions& opt) {
  if (opt.trials < kMinTrials)
    throw ConfigError("need at least " + std::to_string(kMinTrials) + " trials");
  if (opt.warmup < kMinWarmup)
    throw ConfigError("need at least " + std::to_string(kMinWarmup) + " warmup runs");
  const auto clock = opt.clock ? opt.clock : steady_ns;
  auto run = [&](std::int64_t reps) {
    const std::int64_t t0 = clock();
    for (std::int64_t i = 0; i < reps; ++i) fn();
    return clock() - t0;
  };
  // Calibration: grow the inner repetition count until a trial is long
  // enough for the clock to resolve it comfortably.
  std::int64_t reps = 1;
  while (run(reps) < opt.min_trial_ns && reps < (1 << 20)) reps *= 2;
  for (int i = 0; i < opt.warmup; ++i) run(reps);

  BenchRecord r;
  r.inner_reps = reps;
  for (int i = 0; i < opt.trials; ++i)
    r.trial_ns.push_back(static_cast<double>(run(reps)) / static_cast<double>(reps));
  const Stats st = summarize(r.trial_ns);
  r.mean_ns = st.mean;
  r.median_ns = st.median;
  r.cv = st.cv;
  return r;
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::gfa, Variant::mhea, Variant::ea, Variant::sa, Variant::ca})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown bench variant '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::gfa: return "gfa";
    case Variant::mhea: return "mhea";
    case Variant::ea: return "ea";
    case Variant::sa: return "sa";
    case Variant::ca: return "ca";
  }
  return "?";
}

BenchRecord describe_attention(Variant v, const AttentionShape& s) {
  if (s.n < 1 || s.d < 1 || s.m < 1 || s.heads < 1)
    throw ConfigError("bench shape entries must be >= 1");
  BenchRecord r;
  r.variant = to_string(v);
  attn::Macs m;
  switch (v) {
    case Variant::gfa:
      if (s.m % s.heads) throw ConfigError("gfa: groups must divide M_g");
      m = attn::gfa_macs(s.n, s.d, s.m);
      r.shape = {s.n, s.d, s.m, s.heads, 0};
      break;
    case Variant::mhea:
      if (s.d % s.heads) throw ConfigError("mhea: heads must divide d");
      m = attn::mhea_macs(s.n, s.d, s.m, s.heads);
      r.shape = {s.n, s.d, s.m, s.heads, 0};
      break;
    case Variant::ea:
      m = attn::ea_macs(s.n, s.d, s.m);
      r.shape = {s.n, s.d, s.m, 1, 0};
      break;
    case Variant::sa: {
      const auto [h, w] = grid_of(s.n);
      if (s.d % s.heads || s.sigma < 1 || h % s.sigma || w % s.sigma)
        throw ConfigError("sa: heads must divide d and sigma the token grid");
      m = attn::sa_macs(s.n, s.d, s.heads, s.sigma);
      r.shape = {s.n, s.d, s.n / (s.sigma * s.sigma), s.heads, s.sigma};
      break;
    }
    case Variant::ca:
      if (s.side < 1) throw ConfigError("ca: cross-feature side must be >= 1");
      m = attn::ca_macs(s.n, s.d, s.side);
      r.shape = {s.n, s.d, s.side * s.side, 1, s.side};
      break;
  }
  r.flops = m.flops();
  r.matmul_calls = m.matmul_calls;
  return r;
}

BenchRecord bench_attention(Variant v, const AttentionShape& s, const MeasureOptions& opt,
                            std::uint64_t seed) {
  BenchRecord desc = describe_attention(v, s);
  Rng rng(seed);
  const TF x = uniform_tensor<float>({s.n, s.d}, rng, -1, 1);
  auto bank = [&](std::int64_t rows, std::int64_t cols) {
    const double b = 1.0 / std::sqrt(static_cast<double>(cols));
    return uniform_tensor<float>({rows, cols}, rng, -b, b);
  };
  std::function<void()> fn;
  TF k, val, wq, wk, wv, wo;
  const auto [gh, gw] = grid_of(s.n);
  switch (v) {
    case Variant::gfa:
      k = bank(s.m, s.d), val = bank(s.m, s.d);
      fn = [&] { (void)attn::gpu_friendly_attention(x, k, val, s.heads); };
      break;
    case Variant::mhea:
      k = bank(s.m, s.d / s.heads), val = bank(s.m, s.d / s.heads);
      fn = [&] { (void)attn::multi_head_external_attention(x, k, val, s.heads); };
      break;
    case Variant::ea:
      k = bank(s.m, s.d), val = bank(s.m, s.d);
      fn = [&] { (void)attn::external_attention(x, k, val); };
      break;
    case Variant::sa:
      wq = bank(s.d, s.d), wk = bank(s.d, s.d), wv = bank(s.d, s.d), wo = bank(s.d, s.d);
      fn = [&, gh = gh, gw = gw] {
        (void)attn::reduced_self_attention(x, gh, gw, wq, wk, wv, wo, s.heads, s.sigma);
      };
      break;
    case Variant::ca:
      k = bank(s.side * s.side, s.d), val = bank(s.side * s.side, s.d);
      fn = [&] { (void)attn::cross_resolution_attention(x, k, val); };
      break;
  }
  reset_op_counters();
  fn();
  const std::int64_t calls = op_counters().matmul_calls;
  BenchRecord r = measure(fn, opt);
  r.variant = desc.variant;
  r.shape = desc.shape;
  r.flops = desc.flops;
  r.matmul_calls = calls;
  return r;
}

BenchRecord bench_model(const model::ModelConfig& cfg, std::int64_t h, std::int64_t w,
                        const MeasureOptions& opt) {
  const auto counts = model::count_flops(cfg, h, w);
  model::Model net(cfg);
  Rng rng(cfg.seed + 1);
  const auto x = uniform_tensor<double>({1, cfg.in_channels, h, w}, rng, 0, 1);
  auto fn = [&] { (void)net.infer(x); };
  reset_op_counters();
  fn();
  const std::int64_t calls = op_counters().matmul_calls;
  BenchRecord r = measure(fn, opt);
  r.variant = "model:" + cfg.name;
  r.shape = {h * w, cfg.d_h(), cfg.d_l(), 0, cfg.cross_side};
  r.flops = counts.total().flops();
  r.matmul_calls = calls;
  return r;
}

MatchedPair matched_pair(std::int64_t n, std::int64_t d, std::int64_t heads, std::int64_t m) {
  if (heads < 1 || d % heads || m % heads)
    throw ConfigError("matched pair needs H dividing both d and M");
  MatchedPair p;
  p.mhea = {n, d, m, heads};
  p.gfa = {n, d, m, heads};
  return p;
}

std::string emit_report(std::span<const BenchRecord> records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += r.variant + "," + std::to_string(r.shape.n) + "," + std::to_string(r.shape.d) + "," +
           std::to_string(r.shape.m) + "," + std::to_string(r.shape.heads) + "," +
           std::to_string(r.shape.s) + "," + std::to_string(r.flops) + "," + fmt(r.mean_ns) +
           "," + fmt(r.median_ns) + "," + fmt(r.cv) + "," + std::to_string(r.matmul_calls) +
           "\n";
  }
  return out;
}

std::vector<BenchRecord> parse_report(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw ConfigError("bench report must start with the header line");
  std::vector<BenchRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw ConfigError("bench report line has wrong arity: " + line);
    BenchRecord r;
    r.variant = f[0];
    r.shape = {parse_num<std::int64_t>(f[1], line), parse_num<std::int64_t>(f[2], line),
               parse_num<std::int64_t>(f[3], line), parse_num<std::int64_t>(f[4], line),
               parse_num<std::int64_t>(f[5], line)};
    r.flops = parse_num<std::int64_t>(f[6], line);
    r.mean_ns = parse_num<double>(f[7], line);
    r.median_ns = parse_num<double>(f[8], line);
    r.cv = parse_num<double>(f[9], line);
    r.matmul_calls = parse_num<std::int64_t>(f[10], line);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rtf::bench
