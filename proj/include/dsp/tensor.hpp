// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsp/errors.hpp"

namespace dsp {

/// Dense row-major array of 64-bit floats. The shape is a list of positive
/// extents and the data length always equals their product.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(element_count(shape_), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != element_count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape product " + std::to_string(element_count(shape_)));
    }
  }

  // Row-major matrix from nested initializer lists, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    if (rows.size() == 0) throw DimensionError("matrix needs at least one row");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
      if (row.size() != cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  std::string shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ']';
    return os.str();
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + " tensor, got shape " + shape_string());
    }
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  void check_shape() const {
    for (std::size_t extent : shape_) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void ensure_finite(std::span<const double> values, std::string_view where) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by " + std::string(where));
  }
}

inline void ensure_finite(const Tensor& t, std::string_view where) { ensure_finite(t.values(), where); }

inline double l2_norm(std::span<const double> values) {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

// Accumulation for c(i, j) runs over the inner index in increasing order,
// starting from 0.0, so the result is bit-identical to the textbook loop.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  a.require_rank(2);
  b.require_rank(2);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul inner dimensions disagree: " + a.shape_string() + " x " + b.shape_string());
  }
  Tensor c({m, n});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

inline Tensor transpose(const Tensor& a) {
  a.require_rank(2);
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation kind) { return kind == Activation::relu ? "relu" : "tanh"; }

inline Tensor activation_forward(Activation kind, const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = kind == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
  return y;
}

// relu uses the subgradient 0 at x == 0.
inline Tensor activation_vjp(Activation kind, const Tensor& x, const Tensor& upstream) {
  if (!x.same_shape(upstream)) {
    throw DimensionError("activation vjp shape mismatch: " + x.shape_string() + " vs " + upstream.shape_string());
  }
  Tensor g = upstream;
  auto xs = x.values();
  auto gs = g.values();
  for (std::size_t i = 0; i < gs.size(); ++i) {
    if (kind == Activation::relu) {
      gs[i] = xs[i] > 0.0 ? gs[i] : 0.0;
    } else {
      const double t = std::tanh(xs[i]);
      gs[i] = gs[i] * (1.0 - t * t);
    }
  }
  ensure_finite(g, "activation_vjp");
  return g;
}

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch. The gradient is
/// (softmax - onehot) / B; rows are shifted by their maximum first.
inline LossResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels) {
  logits.require_rank(2);
  const std::size_t batch = logits.rows(), classes = logits.cols();
  if (labels.size() != batch) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match batch " +
                         std::to_string(batch));
  }
  LossResult out{0.0, Tensor({batch, classes})};
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw ValueError("label " + std::to_string(labels[i]) + " out of range [0, " + std::to_string(classes) + ")");
    }
    double row_max = logits(i, 0);
    for (std::size_t j = 1; j < classes; ++j) row_max = std::max(row_max, logits(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(logits(i, j) - row_max);
    const double log_denom = std::log(denom);
    total += log_denom - (logits(i, labels[i]) - row_max);
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits(i, j) - row_max - log_denom);
      out.grad(i, j) = (p - (j == labels[i] ? 1.0 : 0.0)) * inv_batch;
    }
  }
  out.loss = total * inv_batch;
  if (!std::isfinite(out.loss)) throw NonFiniteError("non-finite loss in softmax_xent");
  ensure_finite(out.grad, "softmax_xent");
  return out;
}

/// Half mean squared error: loss = sum((y - t)^2) / (2B), grad = (y - t) / B.
inline LossResult half_mse(const Tensor& outputs, const Tensor& targets) {
  outputs.require_rank(2);
  if (!outputs.same_shape(targets)) {
    throw DimensionError("mse shape mismatch: " + outputs.shape_string() + " vs " + targets.shape_string());
  }
  const double inv_batch = 1.0 / static_cast<double>(outputs.rows());
  LossResult out{0.0, Tensor(outputs.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double diff = outputs[i] - targets[i];
    total += diff * diff;
    out.grad[i] = diff * inv_batch;
  }
  out.loss = 0.5 * total * inv_batch;
  if (!std::isfinite(out.loss)) throw NonFiniteError("non-finite loss in half_mse");
  return out;
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ValueError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("non-finite function value during finite differencing");
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace dsp
