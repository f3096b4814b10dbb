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

// rtformer: train, evaluate, count, benchmark and self-check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rtf/acceptance.hpp"
#include "rtf/bench.hpp"
#include "rtf/checkpoint.hpp"
#include "rtf/count.hpp"
#include "rtf/train.hpp"

namespace {

using namespace rtf;

constexpr int kUsageError = 2;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

model::ModelConfig resolve(const std::string& name, std::optional<std::uint64_t> seed) {
  auto cfg = model::load_config(name);
  if (seed) cfg.seed = *seed;
  return cfg;
}

struct TrainArgs {
  std::string config = "tiny";
  std::optional<std::uint64_t> seed;
  std::string out = "rtformer.ckpt";
  std::string metrics;
  train::TrainConfig tc;
};

int run_train(const TrainArgs& a) {
  const auto cfg = resolve(a.config, a.seed);
  auto tc = a.tc;
  if (a.seed) tc.seed = *a.seed;
  tc.checkpoint_path = a.out;
  tc.metrics_path = a.metrics.empty()
                        ? std::filesystem::path(a.out).replace_extension(".csv").string()
                        : a.metrics;
  model::Model m(cfg);
  const auto r = train::train(m, tc, &std::cout);
  std::printf("final held-out mIoU %.4f\ncheckpoint %s\nmetrics %s\n", r.final_miou,
              tc.checkpoint_path.c_str(), tc.metrics_path.c_str());
  return 0;
}

struct EvalArgs {
  std::string config = "tiny";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::int64_t count = 64;
  std::int64_t size = 64;
};

int run_eval(const EvalArgs& a) {
  const auto cfg = resolve(a.config, {});
  model::Model m(cfg);
  load_checkpoint(m.registry(), a.checkpoint);
  const auto data_seed = train::heldout_seed(a.seed.value_or(0));
  std::printf("held-out mIoU %.4f over %lld images\n",
              train::evaluate(m, data_seed, a.count, a.size), static_cast<long long>(a.count));
  return 0;
}

int run_check(const std::vector<int>& ids) {
  const auto list = ids.empty() ? acceptance::invariant_suite() : ids;
  bool ok = true;
  for (int id : list) {
    const auto o = acceptance::run_criterion(id, {});
    acceptance::print(std::cout, o);
    ok = ok && o.pass;
  }
  std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? 0 : 1;
}

struct CountArgs {
  std::string config = "slim";
  std::int64_t height = 512, width = 2048;
  std::string out;
};

int run_count(const CountArgs& a) {
  const auto cfg = resolve(a.config, {});
  auto rep = model::count_flops(cfg, a.height, a.width);
  std::printf("%s at %lldx%lld\n%-8s %12s %16s\n", cfg.name.c_str(),
              static_cast<long long>(a.height), static_cast<long long>(a.width), "module",
              "params", "flops");
  for (const auto& r : rep.rows)
    std::printf("%-8s %12lld %16lld\n", r.module.c_str(), static_cast<long long>(r.params),
                static_cast<long long>(r.flops()));
  const auto t = rep.total();
  std::printf("%-8s %12lld %16lld\ntotal: %.3fM params, %.2fG flops (%.2fG multiply-adds)\n",
              "total", static_cast<long long>(t.params), static_cast<long long>(t.flops()),
              t.params / 1e6, t.flops() / 1e9, t.macs() / 1e9);
  if (!a.out.empty()) write_text(a.out, rep.to_csv());
  return 0;
}

struct BenchArgs {
  std::string variant = "gfa";
  bench::AttentionShape shape;
  std::string config;
  std::int64_t height = 128, width = 256;
  int trials = 30, warmup = 3;
  std::uint64_t seed = 0;
  std::string out;
};

int run_bench(const BenchArgs& a) {
  bench::MeasureOptions mo;
  mo.trials = a.trials;
  mo.warmup = a.warmup;
  bench::BenchRecord rec;
  if (a.variant == "model") {
    if (a.config.empty()) throw ConfigError("bench --variant model needs --config");
    rec = bench::bench_model(resolve(a.config, {}), a.height, a.width, mo);
  } else {
    rec = bench::bench_attention(bench::parse_variant(a.variant), a.shape, mo, a.seed);
  }
  const std::vector<bench::BenchRecord> recs{rec};
  const auto csv = bench::emit_report(recs);
  std::cout << csv;
  std::printf("# median %.3f ms, cv %.3f, %lld inner reps\n", rec.median_ns / 1e6, rec.cv,
              static_cast<long long>(rec.inner_reps));
  if (!a.out.empty()) write_text(a.out, csv);
  return 0;
}

struct ExportArgs {
  std::uint64_t seed = 0;
  std::int64_t count = 4, classes = 4, size = 64;
  std::string out = ".";
};

int run_export(const ExportArgs& a) {
  std::filesystem::create_directories(a.out);
  const auto samples = data::generate_dataset(a.seed, a.count, static_cast<std::int32_t>(a.classes),
                                              a.size, a.size);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto stem = (std::filesystem::path(a.out) / ("sample_" + std::to_string(i))).string();
    data::write_ppm(stem + ".ppm", samples[i]);
    data::write_pgm(stem + ".pgm", samples[i], static_cast<std::int32_t>(a.classes));
  }
  std::printf("wrote %zu image/label pairs to %s\n", samples.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RTFormer on the CPU: training, evaluation, counting, benchmarks, checks"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train on synthetic shapes");
  train_cmd->add_option("--config", ta.config, "preset (tiny, slim, base) or config file");
  train_cmd->add_option("--seed", ta.seed, "seed for initialization and data");
  train_cmd->add_option("--out", ta.out, "checkpoint path");
  train_cmd->add_option("--metrics", ta.metrics, "metrics CSV (default: checkpoint path with .csv)");
  train_cmd->add_option("--max-iters", ta.tc.max_iters)->capture_default_str();
  train_cmd->add_option("--batch", ta.tc.batch)->capture_default_str();
  train_cmd->add_option("--lr", ta.tc.base_lr)->capture_default_str();
  train_cmd->add_option("--weight-decay", ta.tc.weight_decay)->capture_default_str();
  train_cmd->add_option("--image-size", ta.tc.image_size)->capture_default_str();
  train_cmd->add_option("--eval-interval", ta.tc.eval_interval)->capture_default_str();
  train_cmd->add_option("--eval-count", ta.tc.eval_count)->capture_default_str();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "held-out mIoU of a checkpoint");
  eval_cmd->add_option("--config", ea.config, "preset or config file");
  eval_cmd->add_option("--seed", ea.seed, "training seed whose held-out set to use");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required();
  eval_cmd->add_option("--count", ea.count)->capture_default_str();
  eval_cmd->add_option("--image-size", ea.size)->capture_default_str();

  std::vector<int> criteria;
  auto* check_cmd = app.add_subcommand("check", "run the invariant suite");
  check_cmd->add_option("--criterion", criteria, "acceptance criteria to run instead")
      ->check(CLI::Range(1, rtf::acceptance::kNumCriteria));

  CountArgs ca;
  auto* count_cmd = app.add_subcommand("count", "parameter and FLOP report");
  count_cmd->add_option("--config", ca.config, "preset or config file")->capture_default_str();
  count_cmd->add_option("--height", ca.height)->capture_default_str();
  count_cmd->add_option("--width", ca.width)->capture_default_str();
  count_cmd->add_option("--out", ca.out, "write module,params,flops CSV");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "time an attention variant or a model");
  bench_cmd->add_option("--variant", ba.variant, "gfa, mhea, ea, sa, ca or model")
      ->check(CLI::IsMember({"gfa", "mhea", "ea", "sa", "ca", "model"}))
      ->capture_default_str();
  bench_cmd->add_option("--n", ba.shape.n, "tokens")->capture_default_str();
  bench_cmd->add_option("--d", ba.shape.d, "width")->capture_default_str();
  bench_cmd->add_option("--m", ba.shape.m, "bank rows")->capture_default_str();
  bench_cmd->add_option("--heads", ba.shape.heads, "heads or groups")->capture_default_str();
  bench_cmd->add_option("--sigma", ba.shape.sigma, "SA key stride")->capture_default_str();
  bench_cmd->add_option("--side", ba.shape.side, "CA cross-feature side")->capture_default_str();
  bench_cmd->add_option("--config", ba.config, "model preset (variant model)");
  bench_cmd->add_option("--height", ba.height)->capture_default_str();
  bench_cmd->add_option("--width", ba.width)->capture_default_str();
  bench_cmd->add_option("--trials", ba.trials)->capture_default_str();
  bench_cmd->add_option("--warmup", ba.warmup)->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed)->capture_default_str();
  bench_cmd->add_option("--out", ba.out, "write the CSV report");

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export", "write synthetic samples as PPM/PGM");
  export_cmd->add_option("--seed", xa.seed)->capture_default_str();
  export_cmd->add_option("--count", xa.count)->capture_default_str();
  export_cmd->add_option("--classes", xa.classes)->capture_default_str();
  export_cmd->add_option("--image-size", xa.size)->capture_default_str();
  export_cmd->add_option("--out", xa.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*check_cmd) return run_check(criteria);
    if (*count_cmd) return run_count(ca);
    if (*bench_cmd) return run_bench(ba);
    if (*export_cmd) return run_export(xa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
