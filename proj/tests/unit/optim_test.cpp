// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dsp/optim.hpp"

namespace dsp {
namespace {

// Gradient of f(x) = 0.5 * sum_i c_i x_i^2 + x_i x_{i+1} / 4.
std::vector<double> quad_grad(const std::vector<double>& x) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = (1.0 + static_cast<double>(i)) * x[i];
    if (i + 1 < x.size()) g[i] += 0.25 * x[i + 1];
    if (i > 0) g[i] += 0.25 * x[i - 1];
  }
  return g;
}

const std::vector<double> kStart{1.0, -2.0, 0.5, 3.0};

TEST(Sgd, SingleStepByHand) {
  std::vector<double> x{1.0, 2.0};
  sgd_step(x, std::vector<double>{0.5, -1.0}, 0.1);
  EXPECT_DOUBLE_EQ(x[0], 0.95);
  EXPECT_DOUBLE_EQ(x[1], 2.1);
  EXPECT_THROW(sgd_step(x, std::vector<double>{1.0}, 0.1), DimensionError);
  EXPECT_THROW(sgd_step(x, std::vector<double>{1.0, std::nan("")}, 0.1), NonFiniteError);
}

TEST(UnifiedMomentum, ZeroBetaIsSgd) {
  std::vector<double> a = kStart, b = kStart;
  SumState st = SumState::at_rest(a);
  for (int n = 0; n < 25; ++n) {
    sum_step(st, a, quad_grad(a), 0.05, 0.0, 0.7);
    sgd_step(b, quad_grad(b), 0.05);
  }
  EXPECT_EQ(a, b);
}

TEST(UnifiedMomentum, SZeroIsHeavyBall) {
  const double lr = 0.05, beta = 0.9;
  std::vector<double> x = kStart;
  SumState st = SumState::at_rest(x);
  std::vector<double> hb = kStart, prev = kStart;
  for (int n = 0; n < 40; ++n) {
    sum_step(st, x, quad_grad(x), lr, beta, 0.0);
    const auto g = quad_grad(hb);
    std::vector<double> next(hb.size());
    for (std::size_t i = 0; i < hb.size(); ++i) next[i] = hb[i] - lr * g[i] + beta * (hb[i] - prev[i]);
    prev = hb;
    hb = next;
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], hb[i], 1e-12);
}

TEST(UnifiedMomentum, SOneIsNesterov) {
  const double lr = 0.05, beta = 0.9;
  std::vector<double> x = kStart;
  SumState st = SumState::at_rest(x);
  // Nesterov in velocity form: v' = beta v - lr g(x + beta v); z' = z + v'.
  std::vector<double> z = kStart, v(kStart.size(), 0.0);
  for (int n = 0; n < 40; ++n) {
    sum_step(st, x, quad_grad(x), lr, beta, 1.0);
    std::vector<double> look(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) look[i] = z[i] + beta * v[i];
    const auto g = quad_grad(look);
    for (std::size_t i = 0; i < z.size(); ++i) {
      v[i] = beta * v[i] - lr * g[i];
      z[i] += v[i];
    }
    // The unified iterate x_n is the look-ahead point z_n + beta v_n.
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(x[i], z[i] + beta * v[i], 1e-12) << "step " << n;
  }
}

TEST(UnifiedMomentum, RequiresInitialisedState) {
  std::vector<double> x{1.0, 2.0};
  SumState empty;
  EXPECT_THROW(sum_step(empty, x, std::vector<double>{0.0, 0.0}, 0.1, 0.9, 0.0), ValueError);
}

TEST(LrSchedule, PiecewiseConstantDecays) {
  const LrSchedule s{0.1, {{200, 0.5}, {100, 0.1}}};
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 99), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 100), 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 250), 0.1 * 0.1 * 0.5);
  EXPECT_THROW((LrSchedule{0.0, {}}.validate()), ValueError);
  EXPECT_THROW((LrSchedule{0.1, {{5, -1.0}}}.validate()), ValueError);
}

TEST(OptimizerState, AppliesScheduleAndWeightDecay) {
  OptimizerSpec spec;
  spec.rule = OptimizerRule::sgd;
  spec.schedule = LrSchedule{0.1, {{1, 0.5}}};
  spec.weight_decay = 0.01;
  std::vector<double> x{1.0};
  OptimizerState st(spec, x);
  EXPECT_FALSE(st.has_momentum());
  st.apply(x, std::vector<double>{1.0}, 0);
  EXPECT_DOUBLE_EQ(x[0], 1.0 - 0.1 * (1.0 + 0.01));
  const double before = x[0];
  st.apply(x, std::vector<double>{0.0}, 1);
  EXPECT_DOUBLE_EQ(x[0], before - 0.05 * 0.01 * before);
  EXPECT_EQ(st.steps(), 2u);
}

TEST(OptimizerState, ValidatesSpec) {
  std::vector<double> x{0.0};
  OptimizerSpec bad_beta{OptimizerRule::sum, 1.0, 0.0, LrSchedule::constant(0.1), 0.0};
  EXPECT_THROW(OptimizerState(bad_beta, x), ValueError);
  OptimizerSpec bad_s{OptimizerRule::sum, 0.5, -1.0, LrSchedule::constant(0.1), 0.0};
  EXPECT_THROW(OptimizerState(bad_s, x), ValueError);
  OptimizerSpec bad_wd{OptimizerRule::sgd, 0.0, 0.0, LrSchedule::constant(0.1), -0.1};
  EXPECT_THROW(OptimizerState(bad_wd, x), ValueError);
  OptimizerSpec ok{OptimizerRule::sum, 0.9, 1.0, LrSchedule::constant(0.1), 0.0};
  OptimizerState st(ok, x);
  EXPECT_TRUE(st.has_momentum());
  EXPECT_EQ(st.momentum().ys, x);
}

}  // namespace
}  // namespace dsp
