// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/tensor.hpp"

namespace dsp {

inline void sgd_step(std::span<double> x, std::span<const double> g, double lr) {
  if (x.size() != g.size()) throw DimensionError("sgd_step: parameter and gradient lengths differ");
  ensure_finite(g, "sgd_step gradient");
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] - lr * g[i];
}

/// Auxiliary vectors of stochastic unified momentum. `ys` starts equal to the
/// initial parameters so the first momentum correction is zero.
struct SumState {
  std::vector<double> y;
  std::vector<double> ys;
  std::size_t steps = 0;

  static SumState at_rest(std::span<const double> x0) {
    return {std::vector<double>(x0.begin(), x0.end()), std::vector<double>(x0.begin(), x0.end()), 0};
  }
};

/// y' = x - lr g;  ys' = x - s lr g;  x' = y' + beta (ys' - ys).
/// s = 0 gives heavy-ball momentum, s = 1 Nesterov.
inline void sum_step(SumState& state, std::span<double> x, std::span<const double> g, double lr, double beta,
                     double s) {
  if (state.ys.size() != x.size() || state.y.size() != x.size()) {
    throw ValueError("sum_step: momentum state not initialised for this parameter vector");
  }
  if (x.size() != g.size()) throw DimensionError("sum_step: parameter and gradient lengths differ");
  ensure_finite(g, "sum_step gradient");
  const double slr = s * lr;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y_next = x[i] - lr * g[i];
    const double ys_next = x[i] - slr * g[i];
    x[i] = y_next + beta * (ys_next - state.ys[i]);
    state.y[i] = y_next;
    state.ys[i] = ys_next;
  }
  ++state.steps;
}

/// Piecewise-constant learning rate: base multiplied by every factor whose
/// step has been reached.
struct LrSchedule {
  double base = 0.1;
  std::vector<std::pair<std::size_t, double>> decays;

  static LrSchedule constant(double lr) { return {lr, {}}; }

  void validate() const {
    if (!(base > 0.0) || !std::isfinite(base)) throw ValueError("learning rate must be positive");
    for (const auto& [step, factor] : decays) {
      if (!(factor > 0.0) || !std::isfinite(factor)) throw ValueError("decay factors must be positive");
    }
  }
};

inline double lr_at(const LrSchedule& schedule, std::size_t step) {
  std::vector<std::pair<std::size_t, double>> decays = schedule.decays;
  std::stable_sort(decays.begin(), decays.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double lr = schedule.base;
  for (const auto& [at, factor] : decays) {
    if (step < at) break;
    lr *= factor;
  }
  return lr;
}

enum class OptimizerRule { sgd, sum };

struct OptimizerSpec {
  OptimizerRule rule = OptimizerRule::sgd;
  double beta = 0.0;
  double s = 0.0;
  LrSchedule schedule;
  double weight_decay = 0.0;

  void validate() const {
    schedule.validate();
    if (rule == OptimizerRule::sum) {
      if (!(beta >= 0.0 && beta < 1.0)) throw ValueError("momentum beta must lie in [0, 1)");
      if (!(s >= 0.0)) throw ValueError("momentum slack s must be non-negative");
    }
    if (!(weight_decay >= 0.0)) throw ValueError("weight decay must be non-negative");
  }
};

/// Per-block optimizer. Weight decay is added to the gradient (coupled form)
/// before the rule is applied.
class OptimizerState {
 public:
  OptimizerState(OptimizerSpec spec, std::span<const double> x0) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.rule == OptimizerRule::sum) momentum_ = SumState::at_rest(x0);
  }

  const OptimizerSpec& spec() const noexcept { return spec_; }
  bool has_momentum() const noexcept { return spec_.rule == OptimizerRule::sum; }
  const SumState& momentum() const noexcept { return momentum_; }
  SumState& momentum() noexcept { return momentum_; }
  std::size_t steps() const noexcept { return steps_; }

  void apply(std::span<double> x, std::span<const double> grad, std::size_t step) {
    const double lr = lr_at(spec_.schedule, step);
    std::span<const double> g = grad;
    if (spec_.weight_decay != 0.0) {
      decayed_.resize(grad.size());
      for (std::size_t i = 0; i < grad.size(); ++i) decayed_[i] = grad[i] + spec_.weight_decay * x[i];
      g = decayed_;
    }
    if (spec_.rule == OptimizerRule::sgd) {
      sgd_step(x, g, lr);
    } else {
      sum_step(momentum_, x, g, lr, spec_.beta, spec_.s);
    }
    ++steps_;
  }

 private:
  OptimizerSpec spec_;
  SumState momentum_;
  std::vector<double> decayed_;
  std::size_t steps_ = 0;
};

}  // namespace dsp
