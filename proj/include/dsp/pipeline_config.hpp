// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dsp/errors.hpp"

namespace dsp {

enum class WarmupPolicy {
  // Zero packets prefilled into the queues flow through the blocks and
  // produce updates like any other batch.
  faithful_zero_updates,
  // Updates computed from prefilled (negative-index) batches are skipped.
  discard_warmup_updates,
};

inline std::string_view to_string(WarmupPolicy policy) {
  return policy == WarmupPolicy::faithful_zero_updates ? "faithful_zero_updates" : "discard_warmup_updates";
}

/// Per-block layer-wise staleness. dt[k] = m_k.
struct StalenessProfile {
  std::vector<std::size_t> dt;
  std::size_t max = 0;
};

/// Queue sizing for K blocks. Block k owns an output queue P_k of capacity
/// 1 + p_k, an input queue M_k of capacity 1 + m_k and a gradient queue Q_k of
/// capacity 1 + q_k, each prefilled with p_k / m_k / q_k zero packets.
struct PipelineConfig {
  std::size_t num_blocks = 1;
  std::vector<std::size_t> p;
  std::vector<std::size_t> m;
  std::vector<std::size_t> q;
  WarmupPolicy warmup = WarmupPolicy::faithful_zero_updates;
  bool overlap_recompute = true;

  std::size_t output_capacity(std::size_t k) const { return 1 + p[k]; }
  std::size_t input_capacity(std::size_t k) const { return 1 + m[k]; }
  std::size_t grad_capacity(std::size_t k) const { return 1 + q[k]; }

  // Sum of p_i for i < k: how far block k's fresh batch index trails block 0's.
  std::int64_t forward_lag(std::size_t k) const {
    std::int64_t lag = 0;
    for (std::size_t i = 0; i < k; ++i) lag += static_cast<std::int64_t>(p[i]);
    return lag;
  }

  // Batch index block k forwards freshly at step n (negative: prefilled zeros).
  std::int64_t fresh_batch(std::size_t k, std::size_t n) const {
    return static_cast<std::int64_t>(n) - forward_lag(k);
  }

  // Batch index block k recomputes, backpropagates and updates with at step n.
  std::int64_t stale_batch(std::size_t k, std::size_t n) const {
    return fresh_batch(k, n) - static_cast<std::int64_t>(m[k]);
  }

  // Step at which block k backpropagates batch `batch`.
  std::int64_t backward_step(std::size_t k, std::int64_t batch) const {
    return batch + forward_lag(k) + static_cast<std::int64_t>(m[k]);
  }

  std::string label() const {
    std::string s = "DSP(";
    for (std::size_t k = 0; k < p.size(); ++k) s += (k ? "," : "") + std::to_string(p[k]);
    s += ";";
    for (std::size_t k = 0; k < m.size(); ++k) s += (k ? "," : "") + std::to_string(m[k]);
    return s + ")";
  }
};

/// Checks the queue constraints and derives q:
///   q_0 = 0,  q_k = m_{k-1} - p_{k-1} - m_k > 0   (k = 1..K-1)
///   m_k > 0  (k < K-1),  m_{K-1} >= 0
///   p_k > 0  (k < K-1),  p_{K-1} = 0
/// m_{K-1} = 0 is accepted: it is the setting every reported configuration
/// uses and lets the last block forward and backward in the same step.
inline PipelineConfig validate_config(std::size_t num_blocks, const std::vector<std::size_t>& p,
                                      const std::vector<std::size_t>& m,
                                      WarmupPolicy warmup = WarmupPolicy::faithful_zero_updates,
                                      bool overlap_recompute = true) {
  if (num_blocks == 0) throw ConstraintError("K>=1", 0, "pipeline needs at least one block");
  if (p.size() != num_blocks) {
    throw ConstraintError("len(p)=K", 0, "p has " + std::to_string(p.size()) + " entries, expected " +
                                             std::to_string(num_blocks));
  }
  if (m.size() != num_blocks) {
    throw ConstraintError("len(m)=K", 0, "m has " + std::to_string(m.size()) + " entries, expected " +
                                             std::to_string(num_blocks));
  }
  const std::size_t last = num_blocks - 1;
  for (std::size_t k = 0; k < last; ++k) {
    if (p[k] == 0) throw ConstraintError("p_k>0", k, "p_" + std::to_string(k) + " must be positive");
    if (m[k] == 0) throw ConstraintError("m_k>0", k, "m_" + std::to_string(k) + " must be positive");
  }
  if (p[last] != 0) {
    throw ConstraintError("p_{K-1}=0", last, "p_" + std::to_string(last) + " must be 0 for the last block");
  }

  PipelineConfig config;
  config.num_blocks = num_blocks;
  config.p = p;
  config.m = m;
  config.q.assign(num_blocks, 0);
  config.warmup = warmup;
  config.overlap_recompute = overlap_recompute;
  for (std::size_t k = 1; k < num_blocks; ++k) {
    const auto qk = static_cast<std::int64_t>(m[k - 1]) - static_cast<std::int64_t>(p[k - 1]) -
                    static_cast<std::int64_t>(m[k]);
    if (qk <= 0) {
      throw ConstraintError("q_k>0", k, "q_" + std::to_string(k) + " = m_" + std::to_string(k - 1) + " - p_" +
                                            std::to_string(k - 1) + " - m_" + std::to_string(k) + " = " +
                                            std::to_string(qk) + " must be positive");
    }
    config.q[k] = static_cast<std::size_t>(qk);
  }
  return config;
}

inline StalenessProfile staleness_of(const PipelineConfig& config) {
  StalenessProfile profile;
  profile.dt = config.m;
  profile.max = profile.dt.empty() ? 0 : *std::max_element(profile.dt.begin(), profile.dt.end());
  return profile;
}

}  // namespace dsp
