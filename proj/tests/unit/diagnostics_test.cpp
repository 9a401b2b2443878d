// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "dsp/diagnostics.hpp"
#include "test_support.hpp"

namespace dsp {
namespace {

TEST(LipschitzRatio, ZeroForIdenticalParameters) {
  const Model m = testing::small_model(1);
  const Batch b = testing::random_batch(5, 6, 3, 2);
  EXPECT_EQ(lipschitz_ratio(m, m.snapshot(), m.snapshot(), b), 0.0);
}

TEST(LipschitzRatio, PositiveAndFiniteForSmallSteps) {
  const Model m = testing::small_model(1);
  const Batch b = testing::random_batch(5, 6, 3, 2);
  const double r = lipschitz_ratio(m, m.snapshot(), testing::perturbed(m.snapshot(), 3, 1e-3), b);
  EXPECT_GT(r, 0.0);
  EXPECT_TRUE(std::isfinite(r));
}

TEST(DeviationBoundCheck, CountsHeldRows) {
  DeviationSample tight;
  tight.snapshot_diffs = {1.0, 0.0};
  tight.bound_lhs = {0.5, 0.0};
  tight.lipschitz = 1.0;
  DeviationSample loose = tight;
  loose.bound_lhs = {5.0, 0.0};
  const DeviationBoundCheck c = deviation_bound_check({tight, loose}, 1.0);
  EXPECT_EQ(c.L, 1.0);
  EXPECT_EQ(c.steps, 2u);
  EXPECT_EQ(c.steps_held, 1u);
  EXPECT_EQ(c.rows, 4u);
  EXPECT_EQ(c.rows_held, 3u);
  EXPECT_DOUBLE_EQ(c.step_fraction(), 0.5);
  EXPECT_EQ(DeviationBoundCheck{}.row_fraction(), 1.0);
}

TEST(DeviationRecorder, AttachesDeviationsToLog) {
  TrainLog log;
  log.records = {{4, 0, 0, std::nullopt, 1.0, std::nullopt, 0}, {4, 1, 2, std::nullopt, 1.0, std::nullopt, 0}};
  DeviationSample s;
  s.batch_index = 0;
  s.deviation = {0.25, 0.5};
  attach_deviations(log, {s});
  EXPECT_EQ(log.records[0].grad_deviation, std::optional<double>{0.25});
  EXPECT_FALSE(log.records[1].grad_deviation.has_value());
}

}  // namespace
}  // namespace dsp
