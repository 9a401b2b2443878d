// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dsp/errors.hpp"

namespace dsp {

// Learning-rate bounds under layer-wise staleness. L is the Lipschitz
// constant of the block outputs' and loss gradients, M bounds the error
// gradient any block receives, dt is the maximum layer-wise staleness.

struct SgdBound {
  double c0 = 0.0;
  double c1 = 0.0;
  double alpha_max = 0.0;
};

/// c0 = M^2 K (K+1)^2
/// c1 = -(dt^2 + 2) + sqrt((dt^2 + 2)^2 + 2 c0 dt^2)
/// alpha_max = c1 / (L c0 dt^2)
///
/// c1 and alpha_max are evaluated in the rationalised form
///   c1 = 2 c0 dt^2 / ((dt^2 + 2) + sqrt(...)),  alpha_max = 2 / (L ((dt^2 + 2) + sqrt(...)))
/// which avoids cancellation and is finite at dt = 0 (alpha_max = 1 / (2L)).
inline SgdBound sgd_lr_bound(double L, double M, std::size_t K, double dt) {
  if (!(L > 0.0) || !(M > 0.0) || K == 0 || !(dt >= 0.0)) {
    throw ValueError("sgd_lr_bound needs L > 0, M > 0, K >= 1 and dt >= 0");
  }
  const double k = static_cast<double>(K);
  const double dt2 = dt * dt;
  SgdBound b;
  b.c0 = M * M * k * (k + 1.0) * (k + 1.0);
  const double root = std::sqrt((dt2 + 2.0) * (dt2 + 2.0) + 2.0 * b.c0 * dt2);
  b.c1 = 2.0 * b.c0 * dt2 / ((dt2 + 2.0) + root);
  b.alpha_max = 2.0 / (L * ((dt2 + 2.0) + root));
  return b;
}

struct MomentumBound {
  double c2 = 0.0;
  double c3 = 0.0;
  double c4 = 0.0;
  double c5 = 0.0;
  double alpha_max = 0.0;
};

/// c2 = ((1-b) s - 1)^2 / (1-b)^2
/// c3 = M^2 K (K+1)^2 dt^2 (c2 + s^2)
/// c4 = 3 + b^2 c2 + 2 (1-b)^2 dt^2 (c2 + s^2)
/// r  = (-c4 + sqrt(c4^2 + 4 (1-b)^2 c3)) / (2 (1-b))
/// c5 = (2 + b^2 c2) / (1-b) + 2 (1-b) dt^2 (c2 + s^2) + r
/// alpha_max = r / (c3 L)
/// r is evaluated as 2 (1-b) c3 / (c4 + sqrt(...)).
inline MomentumBound momentum_lr_bound(double L, double M, std::size_t K, double dt, double beta, double s) {
  if (!(L > 0.0) || !(M > 0.0) || K == 0 || !(dt >= 0.0)) {
    throw ValueError("momentum_lr_bound needs L > 0, M > 0, K >= 1 and dt >= 0");
  }
  if (!(beta >= 0.0 && beta < 1.0)) throw ValueError("momentum_lr_bound needs beta in [0, 1)");
  if (!(s >= 0.0)) throw ValueError("momentum_lr_bound needs s >= 0");
  const double k = static_cast<double>(K);
  const double ob = 1.0 - beta;
  const double dt2 = dt * dt;
  MomentumBound b;
  const double lead = ob * s - 1.0;
  b.c2 = lead * lead / (ob * ob);
  const double spread = b.c2 + s * s;
  b.c3 = M * M * k * (k + 1.0) * (k + 1.0) * dt2 * spread;
  b.c4 = 3.0 + beta * beta * b.c2 + 2.0 * ob * ob * dt2 * spread;
  const double root = std::sqrt(b.c4 * b.c4 + 4.0 * ob * ob * b.c3);
  const double r = 2.0 * ob * b.c3 / (b.c4 + root);
  b.c5 = (2.0 + beta * beta * b.c2) / ob + 2.0 * ob * dt2 * spread + r;
  // r / c3 in closed form so that c3 = 0 (no staleness) stays finite.
  b.alpha_max = 2.0 * ob / (L * (b.c4 + root));
  return b;
}

/// Right-hand side of the SGD convergence bound:
///   2 (f0 - f*) / sum(a) + L sigma^2 (2 + K dt^2 + K c1 / 4) sum(a^2) / sum(a)
inline double sgd_convergence_rhs(double gap, double L, double sigma2, std::size_t K, double dt, double c1,
                                  double sum_alpha, double sum_alpha_sq) {
  if (!(sum_alpha > 0.0)) throw ValueError("sum of learning rates must be positive");
  const double k = static_cast<double>(K);
  return 2.0 * gap / sum_alpha + L * sigma2 * (2.0 + k * dt * dt + 0.25 * k * c1) * sum_alpha_sq / sum_alpha;
}

/// Right-hand side of the momentum convergence bound:
///   2 (1 - beta) (f0 - f*) / (N alpha) + c5 sigma^2 L alpha
inline double momentum_convergence_rhs(double gap, double beta, std::size_t N, double alpha, double c5,
                                       double sigma2, double L) {
  if (N == 0 || !(alpha > 0.0)) throw ValueError("momentum bound needs N >= 1 and alpha > 0");
  return 2.0 * (1.0 - beta) * gap / (static_cast<double>(N) * alpha) + c5 * sigma2 * L * alpha;
}

struct DeviationBoundRow {
  std::size_t block = 0;
  double measured = 0.0;  // ||grad_bp,k - grad_dsp,k||
  double bound = 0.0;     // L M sum_{i >= k} ||x_i^bwd - x_i^fwd||
  bool exceeded = false;  // measured > bound: L or M were underestimated
};

/// Tabulates the per-block deviation bound  L M sum_{i >= k} diff_i  next to
/// the measured deviations. Exceeding the bound is reported, not raised.
inline std::vector<DeviationBoundRow> deviation_bound_report(const std::vector<double>& snapshot_diffs, double L, double M,
                                            const std::vector<double>& measured) {
  if (snapshot_diffs.size() != measured.size()) throw DimensionError("deviation_bound_report: per-block lengths differ");
  std::vector<DeviationBoundRow> rows(measured.size());
  double tail = 0.0;
  for (std::size_t k = measured.size(); k-- > 0;) {
    tail += snapshot_diffs[k];
    rows[k].block = k;
    rows[k].measured = measured[k];
    rows[k].bound = L * M * tail;
    rows[k].exceeded = measured[k] > rows[k].bound;
  }
  return rows;
}

}  // namespace dsp
