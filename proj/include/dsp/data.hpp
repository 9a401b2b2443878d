// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/rng.hpp"
#include "dsp/tensor.hpp"

namespace dsp {

/// One training batch. Inputs are [B x D]; labels index classes for
/// classification, `targets` is set for regression losses.
struct Batch {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::optional<Tensor> targets;

  std::size_t size() const { return inputs.rows(); }
};

using BatchSource = std::function<Batch(std::size_t step)>;

struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::optional<Tensor> targets;
  std::size_t num_classes = 0;

  std::size_t size() const { return inputs.rows(); }
};

struct SyntheticSpec {
  // Teacher widths: input dim, hidden widths..., class count.
  std::vector<std::size_t> dims{16, 32, 4};
  std::uint64_t seed = 42;
  std::size_t samples = 1000;
  Activation hidden = Activation::tanh;

  void validate() const {
    if (dims.size() < 2) throw ValueError("teacher needs at least input and output widths");
    for (auto d : dims) {
      if (d == 0) throw ValueError("teacher widths must be positive");
    }
    if (samples == 0) throw ValueError("sample count must be positive");
  }
};

// Bias-free teacher: h <- act(h W) for hidden layers, logits = h W_last.
inline Tensor teacher_forward(const std::vector<Tensor>& weights, const Tensor& inputs, Activation hidden) {
  Tensor h = inputs;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = matmul(h, weights[i]);
    if (i + 1 < weights.size()) h = activation_forward(hidden, h);
  }
  return h;
}

// First index of the row maximum.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out(logits.rows(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, out[i])) out[i] = j;
    }
  }
  return out;
}

/// Teacher weights ~ N(0, 1/fan_in) drawn first, then inputs ~ N(0, 1), all
/// from one stream seeded by `spec.seed`. Labels are the teacher's argmax.
inline Dataset gen_teacher_dataset(const SyntheticSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  std::vector<Tensor> weights;
  for (std::size_t i = 0; i + 1 < spec.dims.size(); ++i) {
    Tensor w({spec.dims[i], spec.dims[i + 1]});
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.dims[i]));
    for (double& v : w.values()) v = rng.normal() * scale;
    weights.push_back(std::move(w));
  }
  Tensor inputs({spec.samples, spec.dims.front()});
  for (double& v : inputs.values()) v = rng.normal();

  Dataset ds;
  ds.labels = argmax_rows(teacher_forward(weights, inputs, spec.hidden));
  ds.inputs = std::move(inputs);
  ds.num_classes = spec.dims.back();
  return ds;
}

/// Rows [begin, end) of a dataset.
inline Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end) {
  if (begin >= end || end > ds.size()) throw ValueError("invalid dataset slice");
  const std::size_t width = ds.inputs.cols();
  Dataset out;
  out.num_classes = ds.num_classes;
  out.inputs = Tensor({end - begin, width}, std::vector<double>(ds.inputs.values().begin() + begin * width,
                                                                ds.inputs.values().begin() + end * width));
  if (!ds.labels.empty()) out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
  if (ds.targets) {
    const std::size_t tw = ds.targets->cols();
    out.targets = Tensor({end - begin, tw}, std::vector<double>(ds.targets->values().begin() + begin * tw,
                                                                ds.targets->values().begin() + end * tw));
  }
  return out;
}

struct Standardization {
  double mean = 0.0;
  double stddev = 1.0;
};

inline Standardization compute_standardization(const Tensor& inputs) {
  const double n = static_cast<double>(inputs.size());
  double mean = 0.0;
  for (double v : inputs.values()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : inputs.values()) var += (v - mean) * (v - mean);
  var /= n;
  return {mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

inline void standardize(Tensor& inputs, const Standardization& s) {
  if (!(s.stddev > 0.0)) throw ValueError("standardization stddev must be positive");
  for (double& v : inputs.values()) v = (v - s.mean) / s.stddev;
}

// ---------------------------------------------------------------------------
// IDX files: two zero bytes, an element-type byte, a rank byte, then one
// big-endian u32 extent per dimension, then the payload.

struct IdxArray {
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;
};

inline constexpr std::uint8_t kIdxUnsignedByte = 0x08;

inline IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file " + path);
  std::uint8_t header[4];
  if (!in.read(reinterpret_cast<char*>(header), 4)) throw IoError("truncated IDX header in " + path);
  if (header[0] != 0 || header[1] != 0) throw IoError("bad IDX magic in " + path);
  if (header[2] != kIdxUnsignedByte) {
    throw IoError("unsupported IDX element type 0x" + std::to_string(header[2]) + " in " + path);
  }
  const std::size_t rank = header[3];
  if (rank == 0) throw IoError("IDX file " + path + " has rank 0");
  IdxArray arr;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint8_t d[4];
    if (!in.read(reinterpret_cast<char*>(d), 4)) throw IoError("truncated IDX dimensions in " + path);
    const std::size_t extent = (std::size_t{d[0]} << 24) | (std::size_t{d[1]} << 16) | (std::size_t{d[2]} << 8) | d[3];
    if (extent == 0) throw IoError("IDX file " + path + " has a zero extent");
    arr.shape.push_back(extent);
    count *= extent;
  }
  arr.bytes.resize(count);
  in.read(reinterpret_cast<char*>(arr.bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw IoError("truncated IDX payload in " + path + ": expected " + std::to_string(count) + " bytes, got " +
                  std::to_string(in.gcount()));
  }
  return arr;
}

inline void write_idx(const std::string& path, const std::vector<std::size_t>& shape,
                      std::span<const std::uint8_t> bytes) {
  if (shape.empty() || shape.size() > 255) throw ValueError("IDX rank must lie in [1, 255]");
  if (Tensor::element_count(shape) != bytes.size()) throw DimensionError("IDX payload does not match shape");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create IDX file " + path);
  const std::uint8_t header[4] = {0, 0, kIdxUnsignedByte, static_cast<std::uint8_t>(shape.size())};
  out.write(reinterpret_cast<const char*>(header), 4);
  for (std::size_t extent : shape) {
    const std::uint8_t d[4] = {static_cast<std::uint8_t>(extent >> 24), static_cast<std::uint8_t>(extent >> 16),
                               static_cast<std::uint8_t>(extent >> 8), static_cast<std::uint8_t>(extent)};
    out.write(reinterpret_cast<const char*>(d), 4);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing IDX file " + path);
}

/// Unsigned-byte IDX payload as floats scaled to [0, 1].
inline Tensor load_idx(const std::string& path) {
  IdxArray arr = read_idx(path);
  std::vector<double> data(arr.bytes.size());
  std::transform(arr.bytes.begin(), arr.bytes.end(), data.begin(),
                 [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  return Tensor(arr.shape, std::move(data));
}

inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
  IdxArray arr = read_idx(path);
  if (arr.shape.size() != 1) throw IoError("IDX label file " + path + " must be rank 1");
  return {arr.bytes.begin(), arr.bytes.end()};
}

/// Images (N x ...) flattened to N x D rows plus a rank-1 label file.
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  Tensor images = load_idx(images_path);
  const std::size_t n = images.shape().front();
  const std::size_t width = images.size() / n;
  Dataset ds;
  ds.inputs = Tensor({n, width}, std::vector<double>(images.values().begin(), images.values().end()));
  ds.labels = load_idx_labels(labels_path);
  if (ds.labels.size() != n) throw IoError("image and label counts differ");
  ds.num_classes = 1 + *std::max_element(ds.labels.begin(), ds.labels.end());
  return ds;
}

// ---------------------------------------------------------------------------
// Batching

/// Fisher-Yates permutation of [0, n) seeded by (seed, epoch).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SeededRng rng(derive_seed(seed, {epoch}));
  for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
  return perm;
}

/// Index batches of one epoch; the trailing partial batch is dropped.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  if (batch_size == 0 || batch_size > n) throw ValueError("batch size must lie in [1, N]");
  const auto perm = epoch_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + batch_size <= n; b += batch_size) {
    batches.emplace_back(perm.begin() + b, perm.begin() + b + batch_size);
  }
  return batches;
}

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t width = ds.inputs.cols();
  Batch batch;
  batch.inputs = Tensor({indices.size(), width});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(ds.inputs.values().begin() + indices[r] * width, width, batch.inputs.values().begin() + r * width);
  }
  if (!ds.labels.empty()) {
    for (std::size_t i : indices) batch.labels.push_back(ds.labels[i]);
  }
  if (ds.targets) {
    const std::size_t tw = ds.targets->cols();
    Tensor t({indices.size(), tw});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy_n(ds.targets->values().begin() + indices[r] * tw, tw, t.values().begin() + r * tw);
    }
    batch.targets = std::move(t);
  }
  return batch;
}

/// Step-indexed view over shuffled epochs: step n reads batch n % bpe of
/// epoch n / bpe. Stateless, so any number of readers see the same stream.
class EpochBatchStream {
 public:
  EpochBatchStream(const Dataset& dataset, std::size_t batch_size, std::uint64_t shuffle_seed)
      : dataset_(&dataset), batch_size_(batch_size), seed_(shuffle_seed) {
    if (batch_size == 0 || batch_size > dataset.size()) throw ValueError("batch size must lie in [1, N]");
  }

  std::size_t batches_per_epoch() const { return dataset_->size() / batch_size_; }

  std::vector<std::size_t> indices(std::size_t step) const {
    const std::size_t epoch = step / batches_per_epoch();
    const std::size_t b = step % batches_per_epoch();
    const auto perm = epoch_permutation(dataset_->size(), seed_, epoch);
    return {perm.begin() + b * batch_size_, perm.begin() + (b + 1) * batch_size_};
  }

  Batch operator()(std::size_t step) const { return make_batch(*dataset_, indices(step)); }

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

}  // namespace dsp
