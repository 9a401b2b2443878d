// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "dsp/data.hpp"
#include "dsp/errors.hpp"
#include "dsp/model.hpp"
#include "dsp/tensor.hpp"

namespace dsp {

enum class LossKind { softmax_xent, half_mse };

inline std::string_view to_string(LossKind kind) {
  return kind == LossKind::softmax_xent ? "softmax_xent" : "half_mse";
}

inline LossResult compute_loss(LossKind kind, const Tensor& outputs, const Batch& batch) {
  if (kind == LossKind::softmax_xent) return softmax_xent(outputs, batch.labels);
  if (!batch.targets) throw ValueError("half_mse loss needs regression targets");
  return half_mse(outputs, *batch.targets);
}

struct GradientResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // one vector per block
};

inline void check_snapshot(const Model& model, const ParamSnapshot& params) {
  if (params.size() != model.num_blocks()) throw DimensionError("snapshot block count does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != model.blocks[k].param_count()) {
      throw DimensionError("snapshot of block " + std::to_string(k) + " has wrong length");
    }
  }
}

/// Plain backpropagation: forward with tapes, loss, then chained block
/// backward passes from the top block down.
inline GradientResult bp_gradient(const Model& model, const ParamSnapshot& params, const Batch& batch,
                                  LossKind loss = LossKind::softmax_xent) {
  check_snapshot(model, params);
  const std::size_t num_blocks = model.num_blocks();
  std::vector<ForwardTape> tapes;
  tapes.reserve(num_blocks);
  Tensor h = batch.inputs;
  for (std::size_t k = 0; k < num_blocks; ++k) {
    ForwardResult fr = block_forward(model.blocks[k], params[k], h, true);
    tapes.push_back(std::move(*fr.tape));
    h = std::move(fr.output);
  }
  LossResult lr = compute_loss(loss, h, batch);
  GradientResult out;
  out.loss = lr.loss;
  out.grads.resize(num_blocks);
  Tensor g = std::move(lr.grad);
  for (std::size_t k = num_blocks; k-- > 0;) {
    BackwardResult br = block_backward(model.blocks[k], params[k], std::move(tapes[k]), g);
    out.grads[k] = std::move(br.grad_params);
    g = std::move(br.grad_input);
  }
  return out;
}

/// Gradient with layer-wise stale parameters. Block inputs h_k come from a
/// forward pass with the forward snapshots; each block then recomputes
/// f_k(h_k; x_k^bwd) and backpropagates the error gradient arriving from the
/// block above through it. The loss gradient is taken at the recomputed top
/// output, which is the forward-snapshot output whenever the last block's two
/// snapshots coincide.
inline GradientResult dsp_gradient(const Model& model, const ParamSnapshot& forward_params,
                                   const ParamSnapshot& backward_params, const Batch& batch,
                                   LossKind loss = LossKind::softmax_xent) {
  check_snapshot(model, forward_params);
  check_snapshot(model, backward_params);
  const std::size_t num_blocks = model.num_blocks();
  std::vector<Tensor> inputs;
  inputs.reserve(num_blocks);
  inputs.push_back(batch.inputs);
  for (std::size_t k = 0; k + 1 < num_blocks; ++k) {
    inputs.push_back(block_forward(model.blocks[k], forward_params[k], inputs.back(), false).output);
  }

  GradientResult out;
  out.grads.resize(num_blocks);
  Tensor g;
  for (std::size_t k = num_blocks; k-- > 0;) {
    ForwardResult fr = block_forward(model.blocks[k], backward_params[k], inputs[k], true);
    if (k + 1 == num_blocks) {
      LossResult lr = compute_loss(loss, fr.output, batch);
      out.loss = lr.loss;
      g = std::move(lr.grad);
    }
    BackwardResult br = block_backward(model.blocks[k], backward_params[k], std::move(*fr.tape), g);
    out.grads[k] = std::move(br.grad_params);
    g = std::move(br.grad_input);
  }
  return out;
}

/// Per-block ||G_dsp,k - G_bp,k||_2 / d_k, with G_bp taken at `snapshot`.
inline std::vector<double> grad_deviation(const Model& model, const ParamSnapshot& snapshot, const Batch& batch,
                                          const std::vector<std::vector<double>>& dsp_grads,
                                          LossKind loss = LossKind::softmax_xent) {
  const GradientResult bp = bp_gradient(model, snapshot, batch, loss);
  if (dsp_grads.size() != bp.grads.size()) throw DimensionError("gradient block count mismatch");
  std::vector<double> out(bp.grads.size(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (dsp_grads[k].size() != bp.grads[k].size()) throw DimensionError("gradient length mismatch");
    if (bp.grads[k].empty()) continue;
    double acc = 0.0;
    for (std::size_t i = 0; i < bp.grads[k].size(); ++i) {
      const double d = dsp_grads[k][i] - bp.grads[k][i];
      acc += d * d;
    }
    out[k] = std::sqrt(acc) / static_cast<double>(bp.grads[k].size());
  }
  return out;
}

struct Evaluation {
  double loss = 0.0;
  std::optional<double> accuracy;  // classification only
};

/// Full-dataset loss (and accuracy for classification) at `params`.
inline Evaluation evaluate(const Model& model, const ParamSnapshot& params, const Dataset& data,
                           LossKind loss = LossKind::softmax_xent) {
  check_snapshot(model, params);
  const Tensor outputs = model_forward(model, params, data.inputs);
  Evaluation e;
  if (loss == LossKind::softmax_xent) {
    e.loss = softmax_xent(outputs, data.labels).loss;
    const auto predicted = argmax_rows(outputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i] ? 1 : 0;
    e.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
  } else {
    if (!data.targets) throw ValueError("half_mse evaluation needs regression targets");
    e.loss = half_mse(outputs, *data.targets).loss;
  }
  return e;
}

}  // namespace dsp
