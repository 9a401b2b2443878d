// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/tensor.hpp"

namespace dsp {

struct LayerSpec {
  enum class Kind { dense, relu, tanh };

  Kind kind = Kind::dense;
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;

  static LayerSpec dense(std::size_t in, std::size_t out, bool bias = true) {
    if (in == 0 || out == 0) throw ValueError("dense layer extents must be positive");
    return {Kind::dense, in, out, bias};
  }
  static LayerSpec relu() { return {Kind::relu, 0, 0, false}; }
  static LayerSpec tanh() { return {Kind::tanh, 0, 0, false}; }

  bool is_dense() const noexcept { return kind == Kind::dense; }

  std::size_t param_count() const noexcept { return is_dense() ? in * out + (bias ? out : 0) : 0; }

  Activation activation() const { return kind == Kind::relu ? Activation::relu : Activation::tanh; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// One pipeline stage: a run of consecutive layers owning the flat parameter
/// vector x_k. Dense parameters are stored as W (in x out, row-major) followed
/// by the bias, layer by layer.
struct Block {
  std::size_t index = 0;
  std::vector<LayerSpec> layers;
  std::vector<double> params;
  std::size_t input_width = 0;
  std::size_t output_width = 0;

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.param_count();
    return n;
  }
};

/// Inputs of every layer seen during one recorded forward pass. Move-only so
/// that a tape feeds at most one backward pass.
struct ForwardTape {
  std::int64_t batch_index = 0;
  std::vector<Tensor> inputs;

  ForwardTape() = default;
  ForwardTape(ForwardTape&&) noexcept = default;
  ForwardTape& operator=(ForwardTape&&) noexcept = default;
  ForwardTape(const ForwardTape&) = delete;
  ForwardTape& operator=(const ForwardTape&) = delete;
};

struct ForwardResult {
  Tensor output;
  std::optional<ForwardTape> tape;
};

struct BackwardResult {
  std::vector<double> grad_params;
  Tensor grad_input;
};

struct Model {
  std::vector<Block> blocks;

  std::size_t num_blocks() const noexcept { return blocks.size(); }
  std::size_t input_width() const { return blocks.front().input_width; }
  std::size_t output_width() const { return blocks.back().output_width; }

  std::size_t param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.params.size();
    return n;
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) out.push_back(b.params);
    return out;
  }
};

using ParamSnapshot = std::vector<std::vector<double>>;

namespace detail {

inline Tensor dense_weight(const LayerSpec& layer, std::span<const double> params) {
  return Tensor({layer.in, layer.out}, std::vector<double>(params.begin(), params.begin() + layer.in * layer.out));
}

inline void check_block_input(const Block& block, std::span<const double> params, const Tensor& h_in) {
  if (params.size() != block.param_count()) {
    throw DimensionError("block " + std::to_string(block.index) + " expects " + std::to_string(block.param_count()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  h_in.require_rank(2);
  if (h_in.cols() != block.input_width) {
    throw DimensionError("block " + std::to_string(block.index) + " expects input width " +
                         std::to_string(block.input_width) + ", got " + h_in.shape_string());
  }
}

}  // namespace detail

/// Dense layer forward: y = x W + b.
inline Tensor dense_forward(const LayerSpec& layer, std::span<const double> params, const Tensor& x) {
  Tensor y = matmul(x, detail::dense_weight(layer, params));
  if (layer.bias) {
    const double* b = params.data() + layer.in * layer.out;
    for (std::size_t i = 0; i < y.rows(); ++i)
      for (std::size_t j = 0; j < layer.out; ++j) y(i, j) += b[j];
  }
  return y;
}

inline Tensor layer_forward(const LayerSpec& layer, std::span<const double> params, const Tensor& x) {
  return layer.is_dense() ? dense_forward(layer, params, x) : activation_forward(layer.activation(), x);
}

inline ForwardResult block_forward(const Block& block, std::span<const double> params, const Tensor& h_in,
                                   bool record, std::int64_t batch_index = 0) {
  detail::check_block_input(block, params, h_in);
  ForwardResult result;
  if (record) {
    result.tape.emplace();
    result.tape->batch_index = batch_index;
    result.tape->inputs.reserve(block.layers.size());
  }
  Tensor h = h_in;
  std::size_t offset = 0;
  for (const auto& layer : block.layers) {
    const std::size_t n = layer.param_count();
    Tensor next = layer_forward(layer, params.subspan(offset, n), h);
    if (record) result.tape->inputs.push_back(std::move(h));
    h = std::move(next);
    offset += n;
  }
  ensure_finite(h, "block_forward");
  result.output = std::move(h);
  return result;
}

inline ForwardResult block_forward(const Block& block, const Tensor& h_in, bool record, std::int64_t batch_index = 0) {
  return block_forward(block, block.params, h_in, record, batch_index);
}

/// Reverse pass through one block: returns (d f_k / d x_k) u and (d f_k / d h_k) u.
inline BackwardResult block_backward(const Block& block, std::span<const double> params, ForwardTape&& tape,
                                     const Tensor& upstream) {
  if (tape.inputs.size() != block.layers.size()) {
    throw DimensionError("tape of length " + std::to_string(tape.inputs.size()) + " does not match block " +
                         std::to_string(block.index) + " with " + std::to_string(block.layers.size()) + " layers");
  }
  if (params.size() != block.param_count()) throw DimensionError("parameter span does not match block");
  upstream.require_rank(2);
  if (upstream.cols() != block.output_width ||
      (!tape.inputs.empty() && upstream.rows() != tape.inputs.front().rows())) {
    throw DimensionError("upstream gradient " + upstream.shape_string() + " does not match block " +
                         std::to_string(block.index) + " output");
  }

  BackwardResult result;
  result.grad_params.assign(params.size(), 0.0);
  Tensor g = upstream;
  std::size_t offset = params.size();
  for (std::size_t li = block.layers.size(); li-- > 0;) {
    const LayerSpec& layer = block.layers[li];
    const Tensor& x = tape.inputs[li];
    offset -= layer.param_count();
    if (!layer.is_dense()) {
      g = activation_vjp(layer.activation(), x, g);
      continue;
    }
    if (g.cols() != layer.out || x.cols() != layer.in) throw DimensionError("tape does not match dense layer");
    const auto layer_params = params.subspan(offset, layer.param_count());
    const Tensor grad_w = matmul(transpose(x), g);
    std::copy(grad_w.values().begin(), grad_w.values().end(), result.grad_params.begin() + offset);
    if (layer.bias) {
      double* gb = result.grad_params.data() + offset + layer.in * layer.out;
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < layer.out; ++j) gb[j] += g(i, j);
    }
    g = matmul(g, transpose(detail::dense_weight(layer, layer_params)));
  }
  ensure_finite(result.grad_params, "block_backward");
  result.grad_input = std::move(g);
  return result;
}

inline BackwardResult block_backward(const Block& block, ForwardTape&& tape, const Tensor& upstream) {
  return block_backward(block, block.params, std::move(tape), upstream);
}

/// Split `layers` into consecutive blocks at the given indices. An empty
/// boundary list yields a single block.
inline Model build_model(const std::vector<LayerSpec>& layers, const std::vector<std::size_t>& boundaries) {
  if (layers.empty()) throw ValueError("model needs at least one layer");
  if (!layers.front().is_dense()) throw ValueError("first layer must be dense so the input width is known");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] == 0 || boundaries[i] >= layers.size()) {
      throw ValueError("boundary " + std::to_string(boundaries[i]) + " outside (0, " + std::to_string(layers.size()) +
                       ")");
    }
    if (i > 0 && boundaries[i] <= boundaries[i - 1]) throw ValueError("boundaries must be strictly increasing");
  }

  Model model;
  std::size_t width = layers.front().in;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= boundaries.size(); ++k) {
    const std::size_t stop = k < boundaries.size() ? boundaries[k] : layers.size();
    Block block;
    block.index = k;
    block.input_width = width;
    for (std::size_t i = start; i < stop; ++i) {
      const LayerSpec& layer = layers[i];
      if (layer.is_dense()) {
        if (layer.in != width) {
          throw DimensionError("layer " + std::to_string(i) + " expects width " + std::to_string(layer.in) +
                               " but receives " + std::to_string(width));
        }
        width = layer.out;
      }
      block.layers.push_back(layer);
    }
    block.output_width = width;
    block.params.assign(block.param_count(), 0.0);
    model.blocks.push_back(std::move(block));
    start = stop;
  }
  return model;
}

/// He-uniform for dense weights whose output feeds a relu, Glorot-uniform
/// otherwise, zero biases. Draws are taken in block, layer, row-major order.
inline void init_params(Model& model, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<std::pair<Block*, std::size_t>> flat;
  for (auto& block : model.blocks)
    for (std::size_t i = 0; i < block.layers.size(); ++i) flat.emplace_back(&block, i);

  std::vector<std::size_t> offsets(model.blocks.size(), 0);
  for (std::size_t f = 0; f < flat.size(); ++f) {
    auto [block, li] = flat[f];
    const LayerSpec& layer = block->layers[li];
    std::size_t& offset = offsets[block->index];
    if (!layer.is_dense()) continue;
    const bool feeds_relu = f + 1 < flat.size() &&
                            flat[f + 1].first->layers[flat[f + 1].second].kind == LayerSpec::Kind::relu;
    const double limit = feeds_relu ? std::sqrt(6.0 / static_cast<double>(layer.in))
                                    : std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.in * layer.out; ++i) block->params[offset + i] = rng.uniform(-limit, limit);
    for (std::size_t i = layer.in * layer.out; i < layer.param_count(); ++i) block->params[offset + i] = 0.0;
    offset += layer.param_count();
  }
}

/// Forward through every block with the given per-block parameters.
inline Tensor model_forward(const Model& model, const ParamSnapshot& params, const Tensor& input) {
  Tensor h = input;
  for (std::size_t k = 0; k < model.blocks.size(); ++k) h = block_forward(model.blocks[k], params[k], h, false).output;
  return h;
}

inline Tensor model_forward(const Model& model, const Tensor& input) {
  Tensor h = input;
  for (const auto& block : model.blocks) h = block_forward(block, h, false).output;
  return h;
}

/// Boundaries that minimise the largest per-block parameter count. Advisory
/// only; run configs carry the authoritative split.
inline std::vector<std::size_t> suggest_boundaries(const std::vector<LayerSpec>& layers, std::size_t num_blocks) {
  const std::size_t n = layers.size();
  if (num_blocks == 0 || num_blocks > n) throw ValueError("cannot split " + std::to_string(n) + " layers into " +
                                                          std::to_string(num_blocks) + " blocks");
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + layers[i].param_count();

  constexpr std::size_t inf = std::numeric_limits<std::size_t>::max();
  // cost[j][i]: best max-block size covering the first i layers with j blocks.
  std::vector<std::vector<std::size_t>> cost(num_blocks + 1, std::vector<std::size_t>(n + 1, inf));
  std::vector<std::vector<std::size_t>> cut(num_blocks + 1, std::vector<std::size_t>(n + 1, 0));
  cost[0][0] = 0;
  for (std::size_t j = 1; j <= num_blocks; ++j) {
    for (std::size_t i = j; i <= n; ++i) {
      for (std::size_t s = j - 1; s < i; ++s) {
        if (cost[j - 1][s] == inf) continue;
        const std::size_t c = std::max(cost[j - 1][s], prefix[i] - prefix[s]);
        if (c < cost[j][i]) {
          cost[j][i] = c;
          cut[j][i] = s;
        }
      }
    }
  }
  std::vector<std::size_t> bounds;
  for (std::size_t j = num_blocks, i = n; j > 1; --j) {
    i = cut[j][i];
    bounds.push_back(i);
  }
  std::reverse(bounds.begin(), bounds.end());
  return bounds;
}

}  // namespace dsp
