// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dsp/data.hpp"

namespace dsp {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("dsp_data_test_" + name); }

TEST(Teacher, Deterministic) {
  const SyntheticSpec spec{{8, 12, 5}, 9, 300, Activation::tanh};
  const Dataset a = gen_teacher_dataset(spec), b = gen_teacher_dataset(spec);
  EXPECT_TRUE(std::ranges::equal(a.inputs.values(), b.inputs.values()));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.num_classes, 5u);
  SyntheticSpec other = spec;
  other.seed = 10;
  EXPECT_NE(gen_teacher_dataset(other).labels, a.labels);
}

// Labels re-derived with scalar loops from the same random stream.
TEST(Teacher, LabelsMatchScalarTeacher) {
  const SyntheticSpec spec{{5, 7, 3}, 123, 200, Activation::relu};
  const Dataset ds = gen_teacher_dataset(spec);
  SeededRng rng(spec.seed);
  double w1[5][7], w2[7][3];
  for (auto& row : w1)
    for (double& v : row) v = rng.normal() / std::sqrt(5.0);
  for (auto& row : w2)
    for (double& v : row) v = rng.normal() / std::sqrt(7.0);
  for (std::size_t n = 0; n < spec.samples; ++n) {
    double x[5], h[7] = {}, o[3] = {};
    for (double& v : x) v = rng.normal();
    for (int j = 0; j < 7; ++j) {
      for (int i = 0; i < 5; ++i) h[j] += x[i] * w1[i][j];
      h[j] = std::max(h[j], 0.0);
    }
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < 7; ++j) o[c] += h[j] * w2[j][c];
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c)
      if (o[c] > o[best]) best = c;
    ASSERT_EQ(ds.labels[n], best) << "sample " << n;
    for (int i = 0; i < 5; ++i) ASSERT_EQ(ds.inputs(n, i), x[i]);
  }
}

TEST(Teacher, GoldenClassHistogram) {
  const Dataset ds = gen_teacher_dataset(SyntheticSpec{{16, 32, 4}, 42, 2000, Activation::tanh});
  std::vector<std::size_t> hist(4, 0);
  for (auto l : ds.labels) ++hist[l];
  EXPECT_EQ(hist, (std::vector<std::size_t>{529, 459, 579, 433}));
}

TEST(Teacher, RejectsBadSpecs) {
  EXPECT_THROW(gen_teacher_dataset(SyntheticSpec{{4}, 1, 10, Activation::tanh}), ValueError);
  EXPECT_THROW(gen_teacher_dataset(SyntheticSpec{{4, 0, 2}, 1, 10, Activation::tanh}), ValueError);
  EXPECT_THROW(gen_teacher_dataset(SyntheticSpec{{4, 2}, 1, 0, Activation::tanh}), ValueError);
}

TEST(Batching, DropsPartialBatchAndCoversEpoch) {
  const auto batches = batch_iter(1000, 128, 3, 0);
  ASSERT_EQ(batches.size(), 7u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_EQ(b.size(), 128u);
    seen.insert(b.begin(), b.end());
  }
  EXPECT_EQ(seen.size(), 7u * 128u);
  EXPECT_LT(*seen.rbegin(), 1000u);
  EXPECT_NE(batch_iter(1000, 128, 3, 1), batches);
  EXPECT_EQ(batch_iter(1000, 128, 3, 0), batches);
  EXPECT_THROW(batch_iter(10, 0, 3, 0), ValueError);
  EXPECT_THROW(batch_iter(10, 11, 3, 0), ValueError);
}

TEST(Batching, StreamIndexesEpochs) {
  const Dataset ds = gen_teacher_dataset(SyntheticSpec{{4, 3}, 1, 100, Activation::tanh});
  EpochBatchStream stream(ds, 30, 5);
  EXPECT_EQ(stream.batches_per_epoch(), 3u);
  EXPECT_EQ(stream.indices(4), batch_iter(100, 30, 5, 1)[1]);
  const Batch b = stream(4);
  EXPECT_EQ(b.size(), 30u);
  EXPECT_EQ(b.labels[0], ds.labels[stream.indices(4)[0]]);
  EXPECT_EQ(b.inputs(0, 2), ds.inputs(stream.indices(4)[0], 2));
}

TEST(Dataset, SliceAndStandardize) {
  Dataset ds = gen_teacher_dataset(SyntheticSpec{{3, 2}, 4, 50, Activation::tanh});
  const Dataset part = slice(ds, 10, 20);
  EXPECT_EQ(part.size(), 10u);
  EXPECT_EQ(part.inputs(0, 1), ds.inputs(10, 1));
  EXPECT_THROW(slice(ds, 20, 20), ValueError);
  EXPECT_THROW(slice(ds, 0, 51), ValueError);

  const Standardization s = compute_standardization(ds.inputs);
  standardize(ds.inputs, s);
  const Standardization after = compute_standardization(ds.inputs);
  EXPECT_NEAR(after.mean, 0.0, 1e-12);
  EXPECT_NEAR(after.stddev, 1.0, 1e-12);
  EXPECT_THROW(standardize(ds.inputs, Standardization{0.0, 0.0}), ValueError);
}

TEST(Idx, RoundTripAndScaling) {
  const auto path = temp_file("images.idx");
  const std::vector<std::uint8_t> bytes{0, 255, 51, 102, 7, 9};
  write_idx(path.string(), {3, 2}, bytes);
  const IdxArray raw = read_idx(path.string());
  EXPECT_EQ(raw.shape, (std::vector<std::size_t>{3, 2}));
  EXPECT_EQ(raw.bytes, bytes);
  const Tensor t = load_idx(path.string());
  EXPECT_EQ(t(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(t(1, 0), 0.2);

  const auto labels = temp_file("labels.idx");
  write_idx(labels.string(), {3}, std::vector<std::uint8_t>{2, 0, 1});
  const Dataset ds = load_idx_dataset(path.string(), labels.string());
  EXPECT_EQ(ds.num_classes, 3u);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{2, 0, 1}));
  fs::remove(path);
  fs::remove(labels);
}

TEST(Idx, RejectsMalformedFiles) {
  const auto path = temp_file("bad.idx");
  {
    std::ofstream out(path, std::ios::binary);
    const char header[] = {1, 0, 8, 1, 0, 0, 0, 2, 5, 6};
    out.write(header, sizeof header);
  }
  EXPECT_THROW(read_idx(path.string()), IoError);
  {
    std::ofstream out(path, std::ios::binary);
    const char header[] = {0, 0, 8, 1, 0, 0, 0, 9, 5, 6};
    out.write(header, sizeof header);
  }
  try {
    read_idx(path.string());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  {
    std::ofstream out(path, std::ios::binary);
    const char header[] = {0, 0, 0x0d, 1, 0, 0, 0, 1, 5};
    out.write(header, sizeof header);
  }
  EXPECT_THROW(read_idx(path.string()), IoError);
  EXPECT_THROW(read_idx((path.string() + ".missing")), IoError);
  fs::remove(path);
}

}  // namespace
}  // namespace dsp
