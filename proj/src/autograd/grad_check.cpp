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

#include <algorithm>
#include <cmath>

#include "rtf/autograd.hpp"

namespace rtf::ad {
namespace {

struct Eval {
  double value;
  std::uint64_t kinks;
};

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double scalar_of(Var out) {
  const TensorD& v = out.value();
  if (v.size() != 1)
    throw ShapeError("grad_check needs a scalar function, got " + to_string(v.shape()));
  if (!std::isfinite(v[0])) throw NumericError("grad_check: non-finite function value");
  return v[0];
}

// Central difference at one coordinate, shrinking the step while the ReLU
// pattern at either probe differs from the pattern at the base point.
template <typename Probe>
bool central_difference(Probe probe, std::uint64_t base_kinks, double step, double& fd,
                        bool& refined) {
  refined = false;
  for (double h = step; h >= kMinKinkStep; h *= 0.1) {
    const Eval plus = probe(h);
    const Eval minus = probe(-h);
    if (plus.kinks == base_kinks && minus.kinks == base_kinks) {
      fd = (plus.value - minus.value) / (2 * h);
      return true;
    }
    refined = true;
  }
  return false;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& f, const TensorD& x,
                           double step) {
  GradCheckResult r;
  Tape tape;
  Var in = tape.leaf(x);
  Var out = f(tape, in);
  scalar_of(out);
  const std::uint64_t base = tape.kink_signature();
  tape.backward(out);
  TensorD ad = in.grad().empty() ? zeros_like(x) : in.grad();

  TensorD probe_x = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    auto probe = [&](double h) {
      probe_x[i] = x[i] + h;
      Tape t(false);
      Var v = f(t, t.constant(probe_x));
      Eval e{scalar_of(v), t.kink_signature()};
      probe_x[i] = x[i];
      return e;
    };
    double fd = 0;
    bool refined = false;
    ++r.coords;
    if (!central_difference(probe, base, step, fd, refined)) {
      ++r.skipped;
      continue;
    }
    if (refined) ++r.refined;
    r.max_rel_error = std::max(r.max_rel_error, rel_error(ad[i], fd));
  }
  return r;
}

GradCheckResult grad_check_params(const std::function<Var(Tape&)>& f,
                                  std::span<Parameter* const> params, double step,
                                  std::int64_t max_coords) {
  GradCheckResult r;
  for (Parameter* p : params) p->zero_grad();
  std::uint64_t base = 0;
  {
    Tape tape;
    Var out = f(tape);
    scalar_of(out);
    base = tape.kink_signature();
    tape.backward(out);
  }
  for (Parameter* p : params) {
    const TensorD ad = p->grad;
    const std::int64_t n = p->value.size();
    const std::int64_t stride = std::max<std::int64_t>(1, n / std::max<std::int64_t>(1, max_coords));
    for (std::int64_t i = 0; i < n; i += stride) {
      const double orig = p->value[i];
      auto probe = [&](double h) {
        p->value[i] = orig + h;
        Tape t(false);
        Var v = f(t);
        Eval e{scalar_of(v), t.kink_signature()};
        p->value[i] = orig;
        return e;
      };
      double fd = 0;
      bool refined = false;
      ++r.coords;
      if (!central_difference(probe, base, step, fd, refined)) {
        ++r.skipped;
        continue;
      }
      if (refined) ++r.refined;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(ad[i], fd));
    }
  }
  return r;
}

}  // namespace rtf::ad
