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
#include <fstream>
#include <ostream>

#include "rtf/checkpoint.hpp"
#include "rtf/train.hpp"

namespace rtf::train {

void AdamW::step(std::span<ad::Parameter* const> params, double lr) {
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(zeros_like(p->value));
      v_.push_back(zeros_like(p->value));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("AdamW state does not match the parameters");
  ++t_;
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    if (m_[i].shape() != p.value.shape())
      throw ShapeError("AdamW state shape differs for " + p.name);
    if (p.grad.empty()) p.zero_grad();
    if (p.grad.shape() != p.value.shape()) throw ShapeError("gradient shape differs for " + p.name);
    auto w = p.value.data();
    const auto g = p.grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= lr * opt_.weight_decay * w[j];
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
    }
  }
}

double poly_lr(std::int64_t iter, std::int64_t max_iters, double base, double power) {
  if (max_iters < 1) throw ConfigError("poly_lr needs max_iters >= 1");
  if (iter < 0 || iter > max_iters)
    throw ConfigError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(max_iters) + "]");
  if (!(power > 0)) throw ConfigError("poly_lr needs power > 0");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iters), power);
}

double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm) {
  double ss = 0;
  for (const auto* p : params)
    for (double g : p->grad.data()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (auto& g : p->grad.data()) g *= s;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(power > 0)) throw ConfigError("power must be > 0");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (eval_count < 1) throw ConfigError("eval_count must be >= 1");
  model::check_input_size(image_size, image_size);
}

std::uint64_t heldout_seed(std::uint64_t seed) { return Rng::mix(seed, 0x68656C646F7574ULL); }

double evaluate(const model::Model& m, std::uint64_t seed, std::int64_t count,
                std::int64_t size) {
  const auto classes = static_cast<std::int32_t>(m.config().num_classes);
  Confusion conf(classes);
  constexpr std::int64_t kChunk = 8;
  for (std::int64_t i = 0; i < count; i += kChunk) {
    const auto samples =
        data::generate_dataset(heldout_seed(seed), std::min(kChunk, count - i), classes, size,
                               size, i);
    const auto pred = argmax_channels(m.infer(data::stack_images(samples)));
    conf.add(pred, data::stack_labels(samples));
  }
  return miou(conf).mean;
}

std::string metrics_header() { return "iter,lr,loss,miou"; }

std::string format_metric(const MetricRow& r) {
  char buf[160];
  if (r.miou >= 0)
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g", static_cast<long long>(r.iter), r.lr,
                  r.loss, r.miou);
  else
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,", static_cast<long long>(r.iter), r.lr,
                  r.loss);
  return buf;
}

TrainResult train(model::Model& m, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto classes = static_cast<std::int32_t>(m.config().num_classes);
  if (classes < 2) throw ConfigError("training needs at least 2 classes");
  auto params = m.registry().parameters();
  AdamW opt(AdamWOptions{0.9, 0.999, 1e-8, cfg.weight_decay});

  std::ofstream csv;
  if (!cfg.metrics_path.empty()) {
    csv.open(cfg.metrics_path);
    if (!csv) throw std::runtime_error("cannot write " + cfg.metrics_path);
    csv << metrics_header() << "\n";
  }

  TrainResult res;
  for (std::int64_t it = 0; it < cfg.max_iters; ++it) {
    const double lr = poly_lr(it, cfg.max_iters, cfg.base_lr, cfg.power);
    const auto batch = data::generate_dataset(cfg.seed, cfg.batch, classes, cfg.image_size,
                                              cfg.image_size, it * cfg.batch);
    const auto labels = data::stack_labels(batch);
    m.registry().zero_grad();
    double loss_value = 0;
    {
      Tape tape;
      nn::Ctx ctx{tape, true};
      Var logits = m(ctx, tape.constant(data::stack_images(batch)));
      Var loss = cross_entropy(logits, labels);
      loss_value = loss.value()[0];
      if (!std::isfinite(loss_value))
        throw NumericError("non-finite loss " + std::to_string(loss_value) + " at iteration " +
                           std::to_string(it) + " (lr " + std::to_string(lr) + ")");
      tape.backward(loss);
    }
    clip_grad_norm(params, cfg.clip_norm);
    opt.step(params, lr);

    MetricRow row{it, lr, loss_value, -1};
    const bool last = it + 1 == cfg.max_iters;
    if ((it + 1) % cfg.eval_interval == 0 || last) {
      row.miou = evaluate(m, cfg.seed, cfg.eval_count, cfg.image_size);
      res.final_miou = row.miou;
    }
    res.rows.push_back(row);
    if (csv.is_open()) {
      csv << format_metric(row) << "\n";
      if (row.miou >= 0) csv.flush();
    }
    if (log && row.miou >= 0)
      *log << "iter " << it + 1 << "/" << cfg.max_iters << "  lr " << lr << "  loss "
           << loss_value << "  held-out mIoU " << row.miou << std::endl;
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(m.registry(), cfg.checkpoint_path);
  return res;
}

}  // namespace rtf::train
