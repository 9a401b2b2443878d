// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dsp/data.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/pipeline.hpp"
#include "dsp/theory.hpp"

namespace dsp {

/// Everything measured for one fully backpropagated batch.
struct DeviationSample {
  std::int64_t batch_index = 0;
  std::size_t step = 0;  // step at which block 0 finished the batch
  // ||G_dsp,k - G_bp,k|| / d_k with G_bp at the backward-time parameters.
  std::vector<double> deviation;
  // ||G_bp,k(forward-time parameters) - G_dsp,k||, unnormalised.
  std::vector<double> bound_lhs;
  // ||x_k^bwd - x_k^fwd||.
  std::vector<double> snapshot_diffs;
  // Largest observed Lipschitz ratio for this batch, see lipschitz_ratio().
  double lipschitz = 0.0;
  // max |runtime gradient - dsp_gradient(fwd, bwd)| over all coordinates.
  std::optional<double> operator_mismatch;
};

namespace detail {

inline double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

// Error gradients dL/dh_{k+1} at the output of every block k, top one first
// in the recursion but returned in block order.
inline std::vector<Tensor> output_error_gradients(const Model& model, const ParamSnapshot& params, const Batch& batch,
                                                  LossKind loss) {
  const std::size_t K = model.num_blocks();
  std::vector<ForwardTape> tapes;
  Tensor h = batch.inputs;
  for (std::size_t k = 0; k < K; ++k) {
    ForwardResult fr = block_forward(model.blocks[k], params[k], h, true);
    tapes.push_back(std::move(*fr.tape));
    h = std::move(fr.output);
  }
  std::vector<Tensor> out(K);
  Tensor g = compute_loss(loss, h, batch).grad;
  for (std::size_t k = K; k-- > 0;) {
    out[k] = g;
    g = block_backward(model.blocks[k], params[k], std::move(tapes[k]), g).grad_input;
  }
  return out;
}

// Parameter VJP of the partial model made of blocks 0..top against `u`,
// concatenated over blocks.
inline std::vector<double> prefix_vjp(const Model& model, const ParamSnapshot& params, const Tensor& input,
                                      std::size_t top, const Tensor& u) {
  std::vector<ForwardTape> tapes;
  Tensor h = input;
  for (std::size_t k = 0; k <= top; ++k) {
    ForwardResult fr = block_forward(model.blocks[k], params[k], h, true);
    tapes.push_back(std::move(*fr.tape));
    h = std::move(fr.output);
  }
  std::vector<std::vector<double>> grads(top + 1);
  Tensor g = u;
  for (std::size_t k = top + 1; k-- > 0;) {
    BackwardResult br = block_backward(model.blocks[k], params[k], std::move(tapes[k]), g);
    grads[k] = std::move(br.grad_params);
    g = std::move(br.grad_input);
  }
  std::vector<double> flat;
  for (const auto& v : grads) flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

inline std::vector<double> flatten_prefix(const ParamSnapshot& params, std::size_t top) {
  std::vector<double> flat;
  for (std::size_t k = 0; k <= top; ++k) flat.insert(flat.end(), params[k].begin(), params[k].end());
  return flat;
}

}  // namespace detail

/// Empirical Lipschitz constant between two parameter points, measured the
/// way the smoothness assumption is stated: for every partial model made of
/// blocks 0..k, the change of its parameter Jacobian acting on the unit error
/// gradient direction at block k's output, divided by the parameter distance;
/// and for the full loss, the change of its gradient over the distance.
/// Returns the maximum ratio (0 when the points coincide).
inline double lipschitz_ratio(const Model& model, const ParamSnapshot& a, const ParamSnapshot& b, const Batch& batch,
                              LossKind loss = LossKind::softmax_xent) {
  const std::size_t K = model.num_blocks();
  double best = 0.0;
  const auto directions = detail::output_error_gradients(model, b, batch, loss);
  for (std::size_t k = 0; k < K; ++k) {
    const double dx = detail::distance(detail::flatten_prefix(a, k), detail::flatten_prefix(b, k));
    const double un = l2_norm(directions[k].values());
    if (dx == 0.0 || un == 0.0) continue;
    Tensor u = directions[k];
    for (double& v : u.values()) v /= un;
    const auto ja = detail::prefix_vjp(model, a, batch.inputs, k, u);
    const auto jb = detail::prefix_vjp(model, b, batch.inputs, k, u);
    best = std::max(best, detail::distance(ja, jb) / dx);
  }
  const double dx = detail::distance(detail::flatten_prefix(a, K - 1), detail::flatten_prefix(b, K - 1));
  if (dx > 0.0) {
    std::vector<double> ga, gb;
    for (auto& v : bp_gradient(model, a, batch, loss).grads) ga.insert(ga.end(), v.begin(), v.end());
    for (auto& v : bp_gradient(model, b, batch, loss).grads) gb.insert(gb.end(), v.begin(), v.end());
    best = std::max(best, detail::distance(ga, gb) / dx);
  }
  return best;
}

/// Observer that rebuilds, for sampled batches, the forward- and
/// backward-time parameters of every block and compares the runtime gradient
/// with plain backpropagation. A batch is complete when block 0 has
/// backpropagated it, which happens after every other block.
class DeviationRecorder : public StepObserver {
 public:
  DeviationRecorder(const Model& model, BatchSource source, LossKind loss = LossKind::softmax_xent,
                    std::size_t sample_every = 1, bool verify_operator = false)
      : model_(model), source_(std::move(source)), loss_(loss), every_(std::max<std::size_t>(1, sample_every)),
        verify_operator_(verify_operator) {}

  void on_forward(const ForwardEvent& e) override {
    if (!sampled(e.batch_index)) return;
    auto& p = pending(e.batch_index);
    p.forward[e.block].assign(e.params.begin(), e.params.end());
  }

  void on_backward(const BackwardEvent& e) override {
    if (e.batch_index < 0) return;
    max_upstream_norm_ = std::max(max_upstream_norm_, e.upstream_norm);
    if (!sampled(e.batch_index)) return;
    auto& p = pending(e.batch_index);
    p.backward[e.block].assign(e.params.begin(), e.params.end());
    p.grads[e.block].assign(e.grads.begin(), e.grads.end());
    if (e.block == 0) {
      finish(e.batch_index, e.step, p);
      pending_.erase(e.batch_index);
    }
  }

  const std::vector<DeviationSample>& samples() const noexcept { return samples_; }

  /// Largest error-gradient norm received by any block on real batches.
  double max_upstream_norm() const noexcept { return max_upstream_norm_; }

 private:
  struct Pending {
    ParamSnapshot forward;
    ParamSnapshot backward;
    std::vector<std::vector<double>> grads;
  };

  bool sampled(std::int64_t batch) const { return batch >= 0 && batch % static_cast<std::int64_t>(every_) == 0; }

  Pending& pending(std::int64_t batch) {
    auto [it, inserted] = pending_.try_emplace(batch);
    if (inserted) {
      const std::size_t K = model_.num_blocks();
      it->second.forward.resize(K);
      it->second.backward.resize(K);
      it->second.grads.resize(K);
    }
    return it->second;
  }

  void finish(std::int64_t batch_index, std::size_t step, const Pending& p) {
    const Batch batch = source_(static_cast<std::size_t>(batch_index));
    const std::size_t K = model_.num_blocks();
    DeviationSample s;
    s.batch_index = batch_index;
    s.step = step;
    s.deviation = grad_deviation(model_, p.backward, batch, p.grads, loss_);
    const GradientResult bp_fwd = bp_gradient(model_, p.forward, batch, loss_);
    s.bound_lhs.resize(K);
    s.snapshot_diffs.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      s.bound_lhs[k] = detail::distance(bp_fwd.grads[k], p.grads[k]);
      s.snapshot_diffs[k] = detail::distance(p.backward[k], p.forward[k]);
    }
    s.lipschitz = lipschitz_ratio(model_, p.forward, p.backward, batch, loss_);
    if (verify_operator_) {
      const GradientResult op = dsp_gradient(model_, p.forward, p.backward, batch, loss_);
      double worst = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < op.grads[k].size(); ++i)
          worst = std::max(worst, std::abs(op.grads[k][i] - p.grads[k][i]));
      s.operator_mismatch = worst;
    }
    samples_.push_back(std::move(s));
  }

  Model model_;
  BatchSource source_;
  LossKind loss_;
  std::size_t every_;
  bool verify_operator_;
  std::map<std::int64_t, Pending> pending_;
  std::vector<DeviationSample> samples_;
  double max_upstream_norm_ = 0.0;
};

/// Copies per-block deviations into the matching (block, batch) records.
inline void attach_deviations(TrainLog& log, const std::vector<DeviationSample>& samples) {
  std::map<std::int64_t, const DeviationSample*> by_batch;
  for (const auto& s : samples) by_batch[s.batch_index] = &s;
  for (auto& rec : log.records) {
    auto it = by_batch.find(rec.batch_index);
    if (it != by_batch.end()) rec.grad_deviation = it->second->deviation[rec.block];
  }
}

struct DeviationBoundCheck {
  double L = 0.0;
  double M = 0.0;
  std::size_t steps = 0;       // sampled steps evaluated
  std::size_t steps_held = 0;  // steps where every block satisfied the bound
  std::size_t rows = 0;        // (step, block) pairs evaluated
  std::size_t rows_held = 0;

  double step_fraction() const { return steps ? static_cast<double>(steps_held) / static_cast<double>(steps) : 1.0; }
  double row_fraction() const { return rows ? static_cast<double>(rows_held) / static_cast<double>(rows) : 1.0; }
};

/// Evaluates the deviation bound on every sample with L and M set to their
/// empirical maxima over the run: M is the largest error-gradient norm any
/// block received, L the largest Lipschitz ratio observed between forward-
/// and backward-time parameters. Neither is fitted to the bound's left side.
inline DeviationBoundCheck deviation_bound_check(const std::vector<DeviationSample>& samples, double max_error_norm) {
  DeviationBoundCheck out;
  out.M = max_error_norm;
  for (const auto& s : samples) out.L = std::max(out.L, s.lipschitz);
  for (const auto& s : samples) {
    const auto rows = deviation_bound_report(s.snapshot_diffs, out.L, out.M, s.bound_lhs);
    bool all = true;
    for (const auto& row : rows) {
      ++out.rows;
      if (row.exceeded) {
        all = false;
      } else {
        ++out.rows_held;
      }
    }
    ++out.steps;
    if (all) ++out.steps_held;
  }
  return out;
}

}  // namespace dsp
