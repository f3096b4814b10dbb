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

// Microbenchmarks: f32 attention variants at fixed shapes and eval-mode
// model forwards, with warmup, adaptive inner repetition and summary stats.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rtf/model.hpp"

namespace rtf::bench {

/// Shape columns. For attention: tokens N, width d, bank rows M (M_g for
/// GFA, s^2 for CA, kept keys N/sigma^2 for SA), heads or groups H, and s
/// (cross-feature side for CA, sigma for SA). For models: N = input pixels,
/// d = d_h, M = d_l, H = 0, s = cross-feature side.
struct BenchShape {
  std::int64_t n = 0, d = 0, m = 0, heads = 1, s = 0;
  bool operator==(const BenchShape&) const = default;
};

struct BenchRecord {
  std::string variant;
  BenchShape shape;
  std::int64_t flops = 0;
  std::int64_t matmul_calls = 0;
  /// Post-warmup trial times, each the per-run mean over `inner_reps` runs.
  std::vector<double> trial_ns;
  std::int64_t inner_reps = 1;
  double mean_ns = 0, median_ns = 0, cv = 0;
};

struct Stats {
  double mean = 0, median = 0, cv = 0;
};
/// cv is the sample standard deviation over the mean.
Stats summarize(std::span<const double> xs);

struct MeasureOptions {
  int trials = 30;
  int warmup = 3;
  /// Trials shorter than this get more inner repetitions.
  std::int64_t min_trial_ns = 2'000'000;
  /// Monotonic nanosecond clock; replaceable for tests.
  std::function<std::int64_t()> clock;
};

inline constexpr int kMinTrials = 10;
inline constexpr int kMinWarmup = 3;

/// Times fn. Throws ConfigError below kMinTrials trials or kMinWarmup warmups.
BenchRecord measure(const std::function<void()>& fn, const MeasureOptions& opt);

enum class Variant { gfa, mhea, ea, sa, ca };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);

struct AttentionShape {
  std::int64_t n = 4096, d = 256, m = 256, heads = 8;
  std::int64_t sigma = 1;
  std::int64_t side = 8;
};

/// Analytic shape/flops/matmul_calls for a variant (no timing).
BenchRecord describe_attention(Variant v, const AttentionShape& s);
BenchRecord bench_attention(Variant v, const AttentionShape& s, const MeasureOptions& opt,
                            std::uint64_t seed = 0);
BenchRecord bench_model(const model::ModelConfig& cfg, std::int64_t h, std::int64_t w,
                        const MeasureOptions& opt);

/// The FLOPs-matched pair for one shape: MHEA with H heads of width d/H
/// sharing an M-row bank, and GFA with an M-row bank of width d in H
/// normalization groups.
struct MatchedPair {
  AttentionShape mhea, gfa;
};
MatchedPair matched_pair(std::int64_t n, std::int64_t d, std::int64_t heads, std::int64_t m);

inline constexpr const char* kCsvHeader =
    "variant,N,d,M,H,s,flops,mean_ns,median_ns,cv,matmul_calls";
std::string emit_report(std::span<const BenchRecord> records);
/// Inverse of emit_report (trial lists are not part of the CSV).
std::vector<BenchRecord> parse_report(const std::string& csv);

}  // namespace rtf::bench
