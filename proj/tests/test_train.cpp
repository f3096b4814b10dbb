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
#include <fstream>
#include <iterator>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "rtf/checkpoint.hpp"
#include "rtf/train.hpp"

using namespace rtf;
using namespace rtf::train;
using data::SyntheticSample;

namespace {

bool same_bits(const ad::TensorD& a, const ad::TensorD& b) {
  return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), sizeof(double) * a.size()) == 0;
}

double ce_value(const ad::TensorD& logits, const std::vector<std::int32_t>& labels) {
  Tape t;
  return cross_entropy(t.constant(logits), labels).value()[0];
}

std::string temp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("synthetic data") {
  CHECK(data::generate_dataset(0, 0, 4, 64, 64).empty());
  const auto a = data::generate_sample(3, 17, 4, 64, 64);
  const auto b = data::generate_sample(3, 17, 4, 64, 64);
  const auto c = data::generate_sample(3, 18, 4, 64, 64);
  CHECK(same_bits(a.image, b.image));
  CHECK(a.label == b.label);
  CHECK_FALSE(a.label == c.label);
  CHECK(a.image.shape() == Shape{3, 64, 64});

  std::int64_t background = 0, fg = 0;
  double sum = 0, ss = 0;
  std::int64_t n = 0;
  for (const auto& s : data::generate_dataset(0, 50, 4, 64, 64)) {
    for (double v : s.image.data()) CHECK((v >= 0.0 && v <= 1.0));
    for (std::size_t i = 0; i < s.label.size(); ++i) {
      const auto l = s.label[i];
      CHECK((l >= 0 && l < 4));
      if (l == 0) {
        ++background;
        const double r = s.image[static_cast<std::int64_t>(i)] - 0.5;  // red channel
        sum += r;
        ss += r * r;
        ++n;
      } else {
        ++fg;
      }
    }
  }
  CHECK(background > 0);
  CHECK(fg > 0);
  const double mean = sum / n, sd = std::sqrt(ss / n - mean * mean);
  CHECK(std::abs(mean) < 0.002);
  CHECK(std::abs(sd / data::kNoiseSigma - 1) < 0.05);
  CHECK_THROWS_AS(data::generate_sample(0, 0, 1, 64, 64), ConfigError);

  // class colors are distinct
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const auto ci = data::class_color(i, 4), cj = data::class_color(j, 4);
      double d = 0;
      for (int k = 0; k < 3; ++k) d += std::abs(ci[k] - cj[k]);
      CHECK(d > 0.5);
    }
}

TEST_CASE("PPM/PGM export") {
  const auto s = data::generate_sample(1, 2, 4, 64, 64);
  const auto ppm = temp("rtf_sample.ppm"), pgm = temp("rtf_sample.pgm");
  data::write_ppm(ppm, s);
  data::write_pgm(pgm, s, 4);
  std::ifstream a(ppm, std::ios::binary), b(pgm, std::ios::binary);
  const std::string pa((std::istreambuf_iterator<char>(a)), {});
  const std::string pb((std::istreambuf_iterator<char>(b)), {});
  CHECK(pa.starts_with("P6\n64 64\n255\n"));
  CHECK(pa.size() == 13 + 64 * 64 * 3);
  CHECK(pb.starts_with("P5\n64 64\n255\n"));
  CHECK(pb.size() == 13 + 64 * 64);
  std::filesystem::remove(ppm);
  std::filesystem::remove(pgm);
}

TEST_CASE("cross entropy") {
  // uniform logits give ln C
  CHECK(ce_value(ad::TensorD(Shape{2, 5, 2, 2}), std::vector<std::int32_t>(8, 3)) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-15));
  CHECK(ce_value(ad::TensorD(Shape{1, 3, 1, 2}, 7.25), {0, 2}) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-15));
  // large correct margin
  ad::TensorD big(Shape{1, 2, 1, 1}, std::vector<double>{50, -50});
  CHECK(ce_value(big, {0}) < 1e-40);
  // two pixels by hand: logits (1, 0) label 0 and (0, 2) label 0
  ad::TensorD two(Shape{1, 2, 1, 2}, std::vector<double>{1, 0, 0, 2});
  const double hand = 0.5 * (std::log(1 + std::exp(-1.0)) + std::log(1 + std::exp(2.0)));
  CHECK(ce_value(two, {0, 0}) == doctest::Approx(hand).epsilon(1e-14));
  // ignored pixels drop out of the mean
  CHECK(ce_value(two, {0, data::kIgnoreIndex}) == doctest::Approx(std::log(1 + std::exp(-1.0))));
  {
    Tape t;
    const std::vector<std::int32_t> ignored{255, 255}, short_labels{0}, out_of_range{0, 2};
    CHECK_THROWS_AS(cross_entropy(t.constant(two), ignored), NumericError);
    CHECK_THROWS_AS(cross_entropy(t.constant(two), short_labels), ShapeError);
    CHECK_THROWS_AS(cross_entropy(t.constant(two), out_of_range), ShapeError);
  }
  // nonnegative, and differentiable
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = oracle::random({2, 3, 2, 2}, 50 + trial, -5, 5);
    std::vector<std::int32_t> lab(8);
    for (int i = 0; i < 8; ++i) lab[i] = (trial + i) % 3;
    CHECK(ce_value(x, lab) >= 0);
  }
  std::vector<std::int32_t> lab{0, 1, 2, 255, 1, 1, 0, 2};
  auto r = ad::grad_check([&](Tape&, Var v) { return cross_entropy(v, lab); },
                          oracle::random({2, 3, 2, 2}, 9), 1e-4);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("miou") {
  const std::vector<std::int32_t> l{0, 1, 2, 2, 1, 0};
  CHECK(miou(l, l, 3).mean == 1.0);
  const std::vector<std::int32_t> a{0, 0, 1, 1}, na{1, 1, 0, 0};
  CHECK(miou(na, a, 2).mean == 0.0);
  // one mismatched pixel in a 2x2 map
  const auto r = miou(std::vector<std::int32_t>{0, 1, 1, 1}, std::vector<std::int32_t>{0, 0, 1, 1}, 2);
  CHECK(r.per_class[0] == 0.5);
  CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0));
  // the same with the fourth pixel ignored: IoU = [1/2, 1/2]
  const auto q = miou(std::vector<std::int32_t>{0, 1, 1, 0}, std::vector<std::int32_t>{0, 0, 1, 255}, 2);
  CHECK(q.per_class[0] == 0.5);
  CHECK(q.per_class[1] == 0.5);
  CHECK(q.mean == 0.5);
  // absent classes are excluded
  const auto e = miou(std::vector<std::int32_t>{0, 1}, std::vector<std::int32_t>{0, 1}, 4);
  CHECK(std::isnan(e.per_class[3]));
  CHECK(e.mean == 1.0);
  // permutation equivariance
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(trial);
    std::vector<std::int32_t> p(50), t(50);
    for (int i = 0; i < 50; ++i) {
      p[i] = static_cast<std::int32_t>(rng.below(4));
      t[i] = static_cast<std::int32_t>(rng.below(4));
    }
    const std::int32_t perm[] = {2, 0, 3, 1};
    auto pp = p, tt = t;
    for (auto& v : pp) v = perm[v];
    for (auto& v : tt) v = perm[v];
    const auto base = miou(p, t, 4), moved = miou(pp, tt, 4);
    CHECK(base.mean == doctest::Approx(moved.mean).epsilon(1e-15));
    for (int k = 0; k < 4; ++k) CHECK(base.per_class[k] == moved.per_class[perm[k]]);
  }
}

TEST_CASE("AdamW") {
  ad::Parameter p{"w", ad::TensorD(Shape{3}, std::vector<double>{1, -2, 3}), {}};
  ad::Parameter* ps[] = {&p};
  {
    AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.0});
    p.zero_grad();
    opt.step(ps, 0.1);
    CHECK(p.value[0] == 1.0);
    CHECK(p.value[1] == -2.0);
  }
  {
    AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.0});
    p.grad = ad::TensorD(Shape{3}, std::vector<double>{0.3, -5, 1e-3});
    const auto before = p.value;
    opt.step(ps, 0.01);
    CHECK(p.value[0] - before[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value[1] - before[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p.value[2] - before[2] == doctest::Approx(-0.01).epsilon(1e-4));
  }
  {
    // two steps on a scalar, by hand
    ad::Parameter s{"s", ad::TensorD(Shape{1}, 2.0), {}};
    ad::Parameter* sp[] = {&s};
    AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, 0.1});
    const double lr = 0.5;
    double w = 2.0, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      const double g = t == 1 ? 1.0 : -3.0;
      s.grad = ad::TensorD(Shape{1}, g);
      opt.step(sp, lr);
      w -= lr * 0.1 * w;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      w -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(s.value[0] == doctest::Approx(w).epsilon(1e-14));
    }
    // t=1: w = 2 - 0.1 - 0.5; t=2 done above
    CHECK(opt.steps() == 2);
  }
}

TEST_CASE("poly learning rate") {
  CHECK(poly_lr(0, 100, 0.01) == 0.01);
  CHECK(poly_lr(100, 100, 0.01) == 0.0);
  CHECK(poly_lr(50, 100, 1.0) == doctest::Approx(std::pow(0.5, 0.9)));
  CHECK(poly_lr(50, 100, 1.0) == doctest::Approx(0.5359).epsilon(1e-4));
  for (std::int64_t i = 0; i < 100; ++i) CHECK(poly_lr(i + 1, 100, 1.0) < poly_lr(i, 100, 1.0));
  CHECK_THROWS_AS(poly_lr(101, 100, 1.0), ConfigError);
  CHECK_THROWS_AS(poly_lr(-1, 100, 1.0), ConfigError);
}

TEST_CASE("gradient clipping") {
  ad::Parameter a{"a", ad::TensorD(Shape{2}), {}}, b{"b", ad::TensorD(Shape{1}), {}};
  a.grad = ad::TensorD(Shape{2}, std::vector<double>{3, 0});
  b.grad = ad::TensorD(Shape{1}, 4.0);
  ad::Parameter* ps[] = {&a, &b};
  CHECK(clip_grad_norm(ps, 10) == 5);
  CHECK(a.grad[0] == 3);
  CHECK(clip_grad_norm(ps, 1) == 5);
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
}

TEST_CASE("training: smoke, determinism, checkpoint") {
  TrainConfig cfg;
  cfg.max_iters = 1;
  cfg.batch = 2;
  cfg.eval_count = 4;
  cfg.checkpoint_path = temp("rtf_train_test.ckpt");
  cfg.metrics_path = temp("rtf_train_test.csv");
  model::Model m(model::tiny());
  const auto r = train::train(m, cfg);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].miou >= 0);
  CHECK(std::isfinite(r.rows[0].loss));
  model::Model back(model::tiny());
  load_checkpoint(back.registry(), cfg.checkpoint_path);
  const auto x = oracle::random({1, 3, 64, 64}, 5, 0, 1);
  CHECK(same_bits(m.infer(x), back.infer(x)));
  std::ifstream csv(cfg.metrics_path);
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "iter,lr,loss,miou");
  CHECK(row == format_metric(r.rows[0]));
  std::filesystem::remove(cfg.checkpoint_path);
  std::filesystem::remove(manifest_path(cfg.checkpoint_path));
  std::filesystem::remove(cfg.metrics_path);

  TrainConfig d;
  d.max_iters = 6;
  d.batch = 2;
  d.eval_interval = 3;
  d.eval_count = 4;
  model::Model m1(model::tiny()), m2(model::tiny());
  const auto r1 = train::train(m1, d), r2 = train::train(m2, d);
  REQUIRE(r1.rows.size() == r2.rows.size());
  for (std::size_t i = 0; i < r1.rows.size(); ++i) CHECK(format_metric(r1.rows[i]) == format_metric(r2.rows[i]));
  CHECK(same_bits(m1.infer(x), m2.infer(x)));

  TrainConfig bad;
  bad.batch = 0;
  CHECK_THROWS_AS(train::train(m1, bad), ConfigError);
}

TEST_CASE("training makes progress") {
  TrainConfig cfg;
  cfg.max_iters = 200;
  cfg.eval_interval = 200;
  cfg.eval_count = 8;
  model::Model m(model::tiny());
  const auto r = train::train(m, cfg);
  double first = 0;
  for (int i = 0; i < 10; ++i) first += r.rows[i].loss / 10;
  INFO("first-10 mean " << first << ", at 200: " << r.rows.back().loss);
  CHECK(r.rows.back().loss < first);
}
