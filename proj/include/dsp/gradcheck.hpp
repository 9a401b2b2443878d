// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dsp/data.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/rng.hpp"

namespace dsp {

struct GradcheckCase {
  Model model;
  Batch batch;
};

/// A seeded MLP with 1..max_blocks blocks and widths in [1, max_units],
/// mixing relu and tanh, initialised and paired with a random labelled batch.
inline GradcheckCase random_gradcheck_case(std::uint64_t seed, std::size_t max_blocks = 3,
                                           std::size_t max_units = 64, std::size_t batch_size = 4) {
  SeededRng rng(derive_seed(seed, {0x67636b}));
  const std::size_t blocks = 1 + rng.below(max_blocks);
  const std::size_t dense_layers = blocks + rng.below(2);
  std::vector<std::size_t> widths;
  for (std::size_t i = 0; i <= dense_layers; ++i) widths.push_back(1 + rng.below(max_units));
  widths.back() = std::max<std::size_t>(2, widths.back());
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < dense_layers; ++i) {
    layers.push_back(LayerSpec::dense(widths[i], widths[i + 1], rng.below(4) != 0));
    if (i + 1 < dense_layers) layers.push_back(rng.below(2) ? LayerSpec::tanh() : LayerSpec::relu());
  }
  GradcheckCase c{build_model(layers, suggest_boundaries(layers, blocks)), {}};
  init_params(c.model, derive_seed(seed, {1}));
  // Non-zero biases so that tests do not only probe the zero-bias point.
  for (auto& block : c.model.blocks) {
    for (double& v : block.params) v += 0.05 * rng.normal();
  }
  c.batch.inputs = Tensor({batch_size, widths.front()});
  for (double& v : c.batch.inputs.values()) v = rng.normal();
  for (std::size_t i = 0; i < batch_size; ++i) c.batch.labels.push_back(rng.below(widths.back()));
  return c;
}

/// Largest per-block relative error ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||)
/// between backpropagated and central-difference parameter gradients.
inline double gradcheck_max_rel_error(const Model& model, const ParamSnapshot& params, const Batch& batch,
                                      LossKind loss = LossKind::softmax_xent, double step = 1e-6) {
  const GradientResult analytic = bp_gradient(model, params, batch, loss);
  double worst = 0.0;
  ParamSnapshot probe = params;
  for (std::size_t k = 0; k < model.num_blocks(); ++k) {
    const auto& x = params[k];
    if (x.empty()) continue;
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& xk) {
          probe[k].assign(xk.values().begin(), xk.values().end());
          return compute_loss(loss, model_forward(model, probe, batch.inputs), batch).loss;
        },
        Tensor({x.size()}, x), step);
    probe[k] = x;
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      diff += (analytic.grads[k][i] - fd[i]) * (analytic.grads[k][i] - fd[i]);
      na += analytic.grads[k][i] * analytic.grads[k][i];
      nf += fd[i] * fd[i];
    }
    const double scale = std::sqrt(std::max(na, nf));
    if (scale > 0.0) worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

}  // namespace dsp
