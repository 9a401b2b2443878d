// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dsp/errors.hpp"
#include "dsp/pipeline_config.hpp"
#include "dsp/rng.hpp"

namespace dsp::sim {

/// Per-block forward and backward costs in abstract time units. Without
/// overlap, a DSP block pays its recomputation inside the backward phase
/// (F_k + B_k) instead of alongside the fresh forward.
struct CostModel {
  std::vector<double> forward;
  std::vector<double> backward;
  bool overlap_recompute = true;
  double comm = 0.0;  // per-edge transfer latency

  static CostModel uniform(std::size_t num_blocks, double f, double b) {
    return {std::vector<double>(num_blocks, f), std::vector<double>(num_blocks, b), true, 0.0};
  }

  std::size_t num_blocks() const noexcept { return forward.size(); }
  double total_forward() const {
    double t = 0.0;
    for (double f : forward) t += f;
    return t;
  }
  double total_backward() const {
    double t = 0.0;
    for (double b : backward) t += b;
    return t;
  }

  void validate() const {
    if (forward.empty() || forward.size() != backward.size()) {
      throw ValueError("cost model needs matching, non-empty forward and backward cost lists");
    }
    for (std::size_t k = 0; k < forward.size(); ++k) {
      if (!(forward[k] > 0.0) || !(backward[k] > 0.0)) throw ValueError("phase costs must be positive");
    }
    if (!(comm >= 0.0)) throw ValueError("communication cost must be non-negative");
  }
};

enum class Phase : std::uint64_t { forward = 0, backward = 1 };

/// Each (block, step, phase) is independently slowed by a factor (1 + rho)
/// with the given probability. Draws are keyed on the triple, so two
/// schedules simulated with the same seed see the same straggler pattern.
struct StragglerModel {
  double probability = 1.0 / 3.0;
  double slowdown = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(probability >= 0.0 && probability <= 1.0)) throw ValueError("straggler probability must lie in [0, 1]");
    if (!(slowdown >= 0.0)) throw ValueError("straggler slowdown must be non-negative");
  }

  double multiplier(std::size_t block, std::size_t step, Phase phase) const {
    SeededRng rng(derive_seed(seed, {block, step, static_cast<std::uint64_t>(phase)}));
    return rng.uniform() < probability ? 1.0 + slowdown : 1.0;
  }
};

struct Schedule {
  enum class Kind { sync_bp, dsp };
  Kind kind = Kind::sync_bp;
  std::optional<PipelineConfig> config;

  static Schedule sync_bp() { return {Kind::sync_bp, std::nullopt}; }
  static Schedule dsp(PipelineConfig cfg) { return {Kind::dsp, std::move(cfg)}; }

  std::string name() const { return kind == Kind::sync_bp ? "sync_bp" : config->label(); }
};

enum class EventKind { forward_start, forward_end, backward_start, backward_end };

inline std::string_view to_string(EventKind e) {
  switch (e) {
    case EventKind::forward_start: return "forward_start";
    case EventKind::forward_end: return "forward_end";
    case EventKind::backward_start: return "backward_start";
    case EventKind::backward_end: return "backward_end";
  }
  return "?";
}

struct SimEvent {
  double time = 0.0;
  std::size_t block = 0;
  EventKind kind = EventKind::forward_start;
  std::int64_t batch_index = 0;
};

struct RunStats {
  double makespan = 0.0;
  double step_interval = 0.0;       // median of the last N/2 completion gaps at block K-1
  std::vector<double> completions;  // block K-1 backward completion per step
};

/// Push and pop instants of one queue, in FIFO item order. Prefilled items
/// have no push instant.
struct QueueTrace {
  std::string name;
  std::size_t capacity = 0;
  std::size_t prefill = 0;
  std::vector<double> push_times;  // items prefill, prefill+1, ...
  std::vector<double> pop_times;   // items 0, 1, ...
};

struct SimResult {
  RunStats stats;
  std::vector<SimEvent> trace;
  std::vector<QueueTrace> queues;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double steady_interval(const std::vector<double>& completions) {
  if (completions.size() < 2) return 0.0;
  std::vector<double> gaps;
  for (std::size_t i = 1; i < completions.size(); ++i) gaps.push_back(completions[i] - completions[i - 1]);
  const std::size_t keep = std::max<std::size_t>(1, completions.size() / 2);
  const std::size_t from = gaps.size() > keep ? gaps.size() - keep : 0;
  return median(std::vector<double>(gaps.begin() + static_cast<std::ptrdiff_t>(from), gaps.end()));
}

inline double stretch(const std::optional<StragglerModel>& s, std::size_t block, std::size_t step, Phase phase) {
  return s ? s->multiplier(block, step, phase) : 1.0;
}

inline SimResult simulate_sync(const CostModel& cost, const std::optional<StragglerModel>& straggler,
                               std::size_t steps) {
  const std::size_t K = cost.num_blocks();
  SimResult r;
  double t = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const auto batch = static_cast<std::int64_t>(n);
    for (std::size_t k = 0; k < K; ++k) {
      r.trace.push_back({t, k, EventKind::forward_start, batch});
      t += cost.forward[k] * stretch(straggler, k, n, Phase::forward) + (k + 1 < K ? cost.comm : 0.0);
      r.trace.push_back({t, k, EventKind::forward_end, batch});
    }
    for (std::size_t k = K; k-- > 0;) {
      r.trace.push_back({t, k, EventKind::backward_start, batch});
      t += cost.backward[k] * stretch(straggler, k, n, Phase::backward);
      r.trace.push_back({t, k, EventKind::backward_end, batch});
      if (k + 1 == K) r.stats.completions.push_back(t);
      if (k > 0) t += cost.comm;
    }
  }
  r.stats.makespan = t;
  r.stats.step_interval = steady_interval(r.stats.completions);
  return r;
}

/// Blocking-queue semantics in continuous time. Every cross-block wait of
/// block k at step n refers to another block's step n - 1, n - p or n - q,
/// all strictly earlier, so the schedule is computed step by step.
inline SimResult simulate_dsp(const PipelineConfig& cfg, const CostModel& cost,
                              const std::optional<StragglerModel>& straggler, std::size_t steps) {
  const std::size_t K = cfg.num_blocks;
  if (cost.num_blocks() != K) throw ValueError("cost model and pipeline config disagree on block count");
  for (std::size_t k = 0; k + 1 < K; ++k) {
    if (cfg.p[k] == 0 || cfg.q[k + 1] == 0) throw ProtocolError("precedence cycle: zero-lag queue between blocks");
  }
  constexpr double unset = std::numeric_limits<double>::quiet_NaN();
  auto grid = [&] { return std::vector<std::vector<double>>(K, std::vector<double>(steps, unset)); };
  auto pop_in = grid(), push_out = grid(), pop_grad = grid(), push_grad = grid(), step_end = grid();

  auto earlier = [&](const std::vector<std::vector<double>>& g, std::size_t k, std::int64_t n) -> double {
    if (n < 0) return 0.0;
    const double v = g[k][static_cast<std::size_t>(n)];
    if (std::isnan(v)) throw ProtocolError("precedence cycle: event referenced before it was scheduled");
    return v;
  };

  SimResult r;
  std::vector<std::vector<SimEvent>> per_block(K);
  for (std::size_t n = 0; n < steps; ++n) {
    const auto sn = static_cast<std::int64_t>(n);
    for (std::size_t k = 0; k < K; ++k) {
      const bool last = k + 1 == K;
      const double ready = n == 0 ? 0.0 : step_end[k][n - 1];

      double t = ready;
      if (k > 0) {
        const std::int64_t src = sn - static_cast<std::int64_t>(cfg.p[k - 1]);
        t = std::max(t, src < 0 ? 0.0 : earlier(push_out, k - 1, src) + cost.comm);
      }
      pop_in[k][n] = t;

      double fwd = cost.forward[k];
      double bwd = cost.backward[k];
      if (!last && !cost.overlap_recompute) bwd += cost.forward[k];
      fwd *= stretch(straggler, k, n, Phase::forward);
      bwd *= stretch(straggler, k, n, Phase::backward);

      const std::int64_t fwd_batch = last ? cfg.stale_batch(k, n) : cfg.fresh_batch(k, n);
      const std::int64_t bwd_batch = cfg.stale_batch(k, n);
      per_block[k].push_back({t, k, EventKind::forward_start, fwd_batch});
      t += fwd;
      per_block[k].push_back({t, k, EventKind::forward_end, fwd_batch});

      if (!last) {
        // Room in P_k once block k+1 has taken its n-th item.
        t = std::max(t, earlier(pop_in, k + 1, sn - 1));
        push_out[k][n] = t;
        const std::int64_t src = sn - static_cast<std::int64_t>(cfg.q[k + 1]);
        t = std::max(t, src < 0 ? 0.0 : earlier(push_grad, k + 1, src) + cost.comm);
        pop_grad[k][n] = t;
      }

      per_block[k].push_back({t, k, EventKind::backward_start, bwd_batch});
      t += bwd;
      per_block[k].push_back({t, k, EventKind::backward_end, bwd_batch});
      if (last) r.stats.completions.push_back(t);

      if (k > 0) {
        // Room in Q_k once block k-1 has taken its n-th gradient.
        t = std::max(t, earlier(pop_grad, k - 1, sn - 1));
        push_grad[k][n] = t;
      }
      step_end[k][n] = t;
    }
  }

  for (auto& events : per_block) r.trace.insert(r.trace.end(), events.begin(), events.end());
  std::stable_sort(r.trace.begin(), r.trace.end(), [](const SimEvent& a, const SimEvent& b) { return a.time < b.time; });
  for (std::size_t k = 0; k < K; ++k) r.stats.makespan = std::max(r.stats.makespan, steps ? step_end[k][steps - 1] : 0.0);
  r.stats.step_interval = steady_interval(r.stats.completions);

  for (std::size_t k = 0; k + 1 < K; ++k) {
    QueueTrace q{"P_" + std::to_string(k), cfg.output_capacity(k), cfg.p[k], push_out[k], pop_in[k + 1]};
    r.queues.push_back(std::move(q));
  }
  for (std::size_t k = 1; k < K; ++k) {
    QueueTrace q{"Q_" + std::to_string(k), cfg.grad_capacity(k), cfg.q[k], push_grad[k], pop_grad[k - 1]};
    r.queues.push_back(std::move(q));
  }
  return r;
}

}  // namespace detail

inline SimResult simulate(const Schedule& schedule, const CostModel& cost,
                          const std::optional<StragglerModel>& straggler, std::size_t steps) {
  cost.validate();
  if (straggler) straggler->validate();
  if (schedule.kind == Schedule::Kind::sync_bp) return detail::simulate_sync(cost, straggler, steps);
  if (!schedule.config) throw ValueError("dsp schedule needs a pipeline config");
  return detail::simulate_dsp(*schedule.config, cost, straggler, steps);
}

/// Verifies a queue trace against bounded-FIFO semantics: item j leaves no
/// earlier than it arrived (plus transfer latency), and enters no earlier than
/// item j - capacity left. Returns a description of the first violation.
inline std::optional<std::string> check_queue_discipline(const QueueTrace& q, double comm = 0.0) {
  const std::size_t total = q.prefill + q.push_times.size();
  auto push_time = [&](std::size_t item) { return item < q.prefill ? 0.0 : q.push_times[item - q.prefill]; };
  for (std::size_t j = 0; j < q.pop_times.size(); ++j) {
    if (j >= total) return q.name + ": item " + std::to_string(j) + " popped but never pushed";
    if (j > 0 && q.pop_times[j] < q.pop_times[j - 1]) return q.name + ": pops out of order";
    const double arrival = j < q.prefill ? 0.0 : push_time(j) + comm;
    if (q.pop_times[j] < arrival) return q.name + ": item " + std::to_string(j) + " popped before it arrived";
  }
  for (std::size_t j = q.prefill; j < total; ++j) {
    if (j > q.prefill && push_time(j) < push_time(j - 1)) return q.name + ": pushes out of order";
    if (j >= q.capacity) {
      const std::size_t freed = j - q.capacity;
      if (freed >= q.pop_times.size() || push_time(j) < q.pop_times[freed]) {
        return q.name + ": item " + std::to_string(j) + " pushed into a full queue";
      }
    }
  }
  return std::nullopt;
}

/// Event times never decrease within a block.
inline bool per_block_monotone(const std::vector<SimEvent>& trace, std::size_t num_blocks) {
  std::vector<double> last(num_blocks, 0.0);
  for (const auto& e : trace) {
    if (e.time < last[e.block]) return false;
    last[e.block] = e.time;
  }
  return true;
}

inline void write_trace_csv(std::ostream& out, const std::vector<SimEvent>& trace) {
  out << "time,block,phase,batch_index\n";
  out.precision(17);
  for (const auto& e : trace) out << e.time << ',' << e.block << ',' << to_string(e.kind) << ',' << e.batch_index << '\n';
}

struct SlowdownRow {
  std::string schedule;
  double slowdown = 0.0;        // rho
  double median_percent = 0.0;  // median over seeds
  std::vector<double> per_seed_percent;
};

/// (perturbed makespan / clean makespan - 1) * 100 for every schedule and
/// slowdown, with the median taken over seeds.
inline std::vector<SlowdownRow> straggler_comparison(const std::vector<Schedule>& schedules, const CostModel& cost,
                                                     const std::vector<double>& slowdowns,
                                                     const std::vector<std::uint64_t>& seeds, std::size_t steps,
                                                     double probability = 1.0 / 3.0) {
  if (schedules.empty() || slowdowns.empty() || seeds.empty()) {
    throw ValueError("straggler comparison needs schedules, slowdowns and seeds");
  }
  std::vector<SlowdownRow> rows;
  for (const auto& schedule : schedules) {
    const double clean = simulate(schedule, cost, std::nullopt, steps).stats.makespan;
    for (double rho : slowdowns) {
      SlowdownRow row{schedule.name(), rho, 0.0, {}};
      for (std::uint64_t seed : seeds) {
        const StragglerModel s{probability, rho, seed};
        const double perturbed = simulate(schedule, cost, s, steps).stats.makespan;
        row.per_seed_percent.push_back((perturbed / clean - 1.0) * 100.0);
      }
      row.median_percent = detail::median(row.per_seed_percent);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace dsp::sim
