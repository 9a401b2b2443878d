// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "dsp/bounded_queue.hpp"
#include "dsp/data.hpp"
#include "dsp/errors.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/optim.hpp"
#include "dsp/pipeline_config.hpp"
#include "dsp/rng.hpp"
#include "dsp/tensor.hpp"

namespace dsp {

struct ActivationPacket {
  std::int64_t batch_index = 0;
  Tensor h;
  std::vector<std::size_t> labels;
  std::optional<Tensor> targets;
};

struct GradPacket {
  std::int64_t batch_index = 0;
  Tensor g;
};

/// One record per (step, block).
struct StepRecord {
  std::size_t step = 0;
  std::size_t block = 0;
  std::int64_t batch_index = 0;
  std::optional<double> loss;  // last block only
  double grad_norm = 0.0;
  std::optional<double> grad_deviation;
  std::int64_t wall_nanos = 0;
};

struct TrainLog {
  std::vector<StepRecord> records;

  // Equality of everything except wall-clock timestamps.
  bool same_trajectory(const TrainLog& other) const {
    if (records.size() != other.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& a = records[i];
      const auto& b = other.records[i];
      if (a.step != b.step || a.block != b.block || a.batch_index != b.batch_index || a.loss != b.loss ||
          a.grad_norm != b.grad_norm || a.grad_deviation != b.grad_deviation) {
        return false;
      }
    }
    return true;
  }
};

struct ForwardEvent {
  std::size_t step;
  std::size_t block;
  std::int64_t batch_index;
  std::span<const double> params;
};

struct BackwardEvent {
  std::size_t step;
  std::size_t block;
  std::int64_t batch_index;
  std::span<const double> params;  // before this step's update
  std::span<const double> grads;   // raw gradient, before weight decay
  double upstream_norm;            // norm of the error gradient the block received
  std::optional<double> loss;
};

/// Hooks into a run. Callbacks from the parallel backend are serialised, and
/// for any one batch arrive in causal order (forwards before the backward at
/// the same block, upper blocks' backwards before lower ones).
class StepObserver {
 public:
  virtual ~StepObserver() = default;
  virtual void on_forward(const ForwardEvent&) {}
  virtual void on_backward(const BackwardEvent&) {}
};

// Random sleeps before a worker's compute; changes timing only.
struct StragglerInjection {
  double probability = 1.0 / 3.0;
  std::chrono::microseconds max_delay{500};
  std::uint64_t seed = 0;
};

struct RunOptions {
  std::size_t steps = 0;
  LossKind loss = LossKind::softmax_xent;
  // Parameters are copied after these (0-based) steps complete.
  std::vector<std::size_t> checkpoint_steps;
  StepObserver* observer = nullptr;
  std::optional<StragglerInjection> straggler;  // parallel backend only
  std::chrono::milliseconds watchdog{60000};
};

struct ParamCheckpoint {
  std::size_t step = 0;
  ParamSnapshot params;
  std::int64_t wall_nanos = 0;
};

struct QueueStats {
  std::string name;
  std::size_t capacity = 0;
  std::size_t high_water = 0;
};

struct TrainResult {
  TrainLog log;
  std::vector<ParamCheckpoint> checkpoints;
  std::vector<QueueStats> queues;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline std::int64_t nanos_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

inline ActivationPacket zero_packet(std::int64_t batch_index, std::size_t batch, std::size_t width,
                                    std::optional<std::size_t> target_width) {
  ActivationPacket p;
  p.batch_index = batch_index;
  p.h = Tensor({batch, width});
  p.labels.assign(batch, 0);
  if (target_width) p.targets = Tensor({batch, *target_width});
  return p;
}

inline LossResult packet_loss(LossKind kind, const Tensor& outputs, const ActivationPacket& packet) {
  if (kind == LossKind::softmax_xent) return softmax_xent(outputs, packet.labels);
  if (!packet.targets) throw ValueError("half_mse loss needs regression targets");
  return half_mse(outputs, *packet.targets);
}

/// The queues of one pipeline, prefilled with zero packets whose batch
/// indices are the (negative) indices the consumer expects at steps 0, 1, ...
template <template <typename> class Q>
struct PipelineQueues {
  std::vector<std::unique_ptr<Q<ActivationPacket>>> out;    // P_k, k < K-1
  std::vector<std::unique_ptr<Q<ActivationPacket>>> input;  // M_k
  std::vector<std::unique_ptr<Q<GradPacket>>> grad;         // Q_k, k >= 1 (index 0 unused)

  template <typename... Extra>
  PipelineQueues(const Model& model, const PipelineConfig& cfg, std::size_t batch,
                 std::optional<std::size_t> target_width, Extra... extra) {
    const std::size_t num_blocks = cfg.num_blocks;
    out.resize(num_blocks);
    input.resize(num_blocks);
    grad.resize(num_blocks);
    for (std::size_t k = 0; k < num_blocks; ++k) {
      const std::size_t width = model.blocks[k].input_width;
      input[k] = std::make_unique<Q<ActivationPacket>>("M_" + std::to_string(k), cfg.input_capacity(k), extra...);
      for (std::size_t i = 0; i < cfg.m[k]; ++i) {
        input[k]->push(zero_packet(static_cast<std::int64_t>(i) - cfg.forward_lag(k) - static_cast<std::int64_t>(cfg.m[k]),
                                   batch, width, target_width));
      }
      if (k + 1 < num_blocks) {
        out[k] = std::make_unique<Q<ActivationPacket>>("P_" + std::to_string(k), cfg.output_capacity(k), extra...);
        for (std::size_t i = 0; i < cfg.p[k]; ++i) {
          out[k]->push(zero_packet(static_cast<std::int64_t>(i) - cfg.forward_lag(k + 1), batch,
                                   model.blocks[k].output_width, target_width));
        }
      }
      if (k > 0) {
        grad[k] = std::make_unique<Q<GradPacket>>("Q_" + std::to_string(k), cfg.grad_capacity(k), extra...);
        for (std::size_t i = 0; i < cfg.q[k]; ++i) {
          const std::int64_t consumer_batch = static_cast<std::int64_t>(i) - cfg.forward_lag(k - 1) -
                                              static_cast<std::int64_t>(cfg.m[k - 1]);
          grad[k]->push(GradPacket{consumer_batch, Tensor({batch, width})});
        }
      }
    }
  }

  std::vector<QueueStats> stats() const {
    std::vector<QueueStats> s;
    auto add = [&](const auto& q) {
      if (q) s.push_back({q->name(), q->capacity(), q->high_water()});
    };
    for (const auto& q : out) add(q);
    for (const auto& q : input) add(q);
    for (const auto& q : grad) add(q);
    return s;
  }
};

/// One block's share of the pipelined loop: pop input, refresh the stale
/// activation through M_k, forward the fresh one, recompute and backpropagate
/// the stale one, then update.
template <template <typename> class Q>
class BlockWorker {
 public:
  BlockWorker(Block& block, const PipelineConfig& cfg, const OptimizerSpec& opt, const BatchSource& source,
              PipelineQueues<Q>& queues, const RunOptions& options, std::mutex* observer_mutex)
      : block_(block),
        cfg_(cfg),
        k_(block.index),
        last_(block.index + 1 == cfg.num_blocks),
        optimizer_(opt, block.params),
        source_(source),
        queues_(queues),
        options_(options),
        observer_mutex_(observer_mutex),
        checkpoints_(options.checkpoint_steps.begin(), options.checkpoint_steps.end()) {
    if (options.straggler) straggler_rng_.emplace(derive_seed(options.straggler->seed, {k_}));
  }

  void step(std::size_t n, detail::Clock::time_point start, bool concurrent) {
    ActivationPacket fresh;
    if (k_ == 0) {
      Batch b = source_(n);
      fresh = ActivationPacket{static_cast<std::int64_t>(n), std::move(b.inputs), std::move(b.labels),
                               std::move(b.targets)};
    } else {
      fresh = queues_.out[k_ - 1]->pop();
    }
    if (fresh.batch_index != cfg_.fresh_batch(k_, n)) {
      throw ProtocolError("block " + std::to_string(k_) + " received batch " + std::to_string(fresh.batch_index) +
                          " at step " + std::to_string(n));
    }
    if (!last_) notify_forward(n, fresh.batch_index);

    queues_.input[k_]->push(fresh);
    ActivationPacket stale = queues_.input[k_]->pop();
    if (last_) notify_forward(n, stale.batch_index);

    maybe_straggle();

    // Fresh forward and recomputation read the same parameters and are
    // independent, so running them side by side leaves results unchanged.
    std::future<Tensor> fresh_out;
    std::optional<Tensor> fresh_serial;
    if (!last_) {
      auto fwd = [this, &fresh] { return block_forward(block_, fresh.h, false).output; };
      if (concurrent && cfg_.overlap_recompute) {
        fresh_out = std::async(std::launch::async, fwd);
      } else {
        fresh_serial = fwd();
      }
    }
    ForwardResult recomputed = block_forward(block_, stale.h, true, stale.batch_index);

    Tensor upstream;
    std::optional<double> loss;
    if (!last_) {
      Tensor out_h = fresh_serial ? std::move(*fresh_serial) : fresh_out.get();
      queues_.out[k_]->push(
          ActivationPacket{fresh.batch_index, std::move(out_h), std::move(fresh.labels), std::move(fresh.targets)});
      GradPacket gp = queues_.grad[k_ + 1]->pop();
      if (gp.batch_index != stale.batch_index) {
        throw ProtocolError("block " + std::to_string(k_) + " paired gradient of batch " +
                            std::to_string(gp.batch_index) + " with activation of batch " +
                            std::to_string(stale.batch_index));
      }
      upstream = std::move(gp.g);
    } else {
      LossResult lr = packet_loss(options_.loss, recomputed.output, stale);
      loss = lr.loss;
      upstream = std::move(lr.grad);
    }

    const double upstream_norm = l2_norm(upstream.values());
    BackwardResult br = block_backward(block_, std::move(*recomputed.tape), upstream);

    StepRecord rec;
    rec.step = n;
    rec.block = k_;
    rec.batch_index = stale.batch_index;
    rec.loss = loss;
    rec.grad_norm = l2_norm(br.grad_params);
    // Notify before handing the gradient down so lower blocks report later.
    if (options_.observer) {
      std::unique_lock lock = observer_lock();
      options_.observer->on_backward(
          BackwardEvent{n, k_, stale.batch_index, block_.params, br.grad_params, upstream_norm, loss});
    }
    if (k_ > 0) queues_.grad[k_]->push(GradPacket{stale.batch_index, std::move(br.grad_input)});

    const bool skip = cfg_.warmup == WarmupPolicy::discard_warmup_updates && stale.batch_index < 0;
    if (!skip) optimizer_.apply(block_.params, br.grad_params, n);

    rec.wall_nanos = nanos_since(start);
    log_.push_back(rec);
    if (checkpoints_.contains(n)) checkpoint_params_.push_back({n, block_.params, rec.wall_nanos});
  }

  std::vector<StepRecord>& log() noexcept { return log_; }

  struct LocalCheckpoint {
    std::size_t step;
    std::vector<double> params;
    std::int64_t wall_nanos;
  };
  std::vector<LocalCheckpoint>& checkpoints() noexcept { return checkpoint_params_; }

 private:
  std::unique_lock<std::mutex> observer_lock() {
    return observer_mutex_ ? std::unique_lock<std::mutex>(*observer_mutex_) : std::unique_lock<std::mutex>();
  }

  void notify_forward(std::size_t n, std::int64_t batch_index) {
    if (!options_.observer) return;
    std::unique_lock lock = observer_lock();
    options_.observer->on_forward(ForwardEvent{n, k_, batch_index, block_.params});
  }

  void maybe_straggle() {
    if (!straggler_rng_) return;
    const auto& s = *options_.straggler;
    if (straggler_rng_->uniform() < s.probability) {
      const auto micros = static_cast<std::int64_t>(straggler_rng_->uniform() * static_cast<double>(s.max_delay.count()));
      std::this_thread::sleep_for(std::chrono::microseconds(micros));
    }
  }

  Block& block_;
  const PipelineConfig& cfg_;
  std::size_t k_;
  bool last_;
  OptimizerState optimizer_;
  const BatchSource& source_;
  PipelineQueues<Q>& queues_;
  const RunOptions& options_;
  std::mutex* observer_mutex_;
  std::unordered_set<std::size_t> checkpoints_;
  std::optional<SeededRng> straggler_rng_;
  std::vector<StepRecord> log_;
  std::vector<LocalCheckpoint> checkpoint_params_;
};

inline void check_run(const Model& model, const PipelineConfig& cfg) {
  if (model.num_blocks() != cfg.num_blocks) {
    throw ValueError("model has " + std::to_string(model.num_blocks()) + " blocks but pipeline config has " +
                     std::to_string(cfg.num_blocks));
  }
  for (std::size_t k = 0; k < model.num_blocks(); ++k) {
    if (model.blocks[k].index != k) throw ValueError("block index does not match its position");
  }
  if (cfg.num_blocks > 1) {
    // Re-derive q so hand-built configs obey the same constraints.
    const PipelineConfig checked = validate_config(cfg.num_blocks, cfg.p, cfg.m);
    if (checked.q != cfg.q) throw ValueError("pipeline config q does not match m and p");
  } else if (cfg.p.size() != 1 || cfg.p[0] != 0 || cfg.m.size() != 1 || cfg.q.size() != 1 || cfg.q[0] != 0) {
    throw ValueError("single-block pipeline must have p = q = 0");
  }
}

template <template <typename> class Q>
TrainResult collect(std::vector<std::unique_ptr<BlockWorker<Q>>>& workers, const PipelineQueues<Q>& queues) {
  TrainResult result;
  for (auto& w : workers) {
    auto& log = w->log();
    result.log.records.insert(result.log.records.end(), log.begin(), log.end());
  }
  std::stable_sort(result.log.records.begin(), result.log.records.end(), [](const auto& a, const auto& b) {
    return a.step != b.step ? a.step < b.step : a.block < b.block;
  });
  if (!workers.empty()) {
    const std::size_t count = workers.front()->checkpoints().size();
    for (std::size_t i = 0; i < count; ++i) {
      ParamCheckpoint cp;
      cp.step = workers.front()->checkpoints()[i].step;
      for (auto& w : workers) {
        cp.params.push_back(std::move(w->checkpoints()[i].params));
        cp.wall_nanos = std::max(cp.wall_nanos, w->checkpoints()[i].wall_nanos);
      }
      result.checkpoints.push_back(std::move(cp));
    }
  }
  result.queues = queues.stats();
  return result;
}

inline std::optional<std::size_t> target_width_for(const Model& model, LossKind loss) {
  if (loss == LossKind::half_mse) return model.output_width();
  return std::nullopt;
}

}  // namespace detail

/// Single-context emulation of the pipelined loop: in every step the blocks
/// run their loop body in ascending order. Any push onto a full queue or pop
/// from an empty one raises ProtocolError, which a valid config rules out.
inline TrainResult run_serial(Model& model, const PipelineConfig& cfg, const BatchSource& source,
                              const OptimizerSpec& optimizer, const RunOptions& options) {
  detail::check_run(model, cfg);
  TrainResult empty;
  if (options.steps == 0) return empty;
  const std::size_t batch = source(0).size();
  detail::PipelineQueues<SerialQueue> queues(model, cfg, batch, detail::target_width_for(model, options.loss));
  std::vector<std::unique_ptr<detail::BlockWorker<SerialQueue>>> workers;
  for (auto& block : model.blocks) {
    workers.push_back(std::make_unique<detail::BlockWorker<SerialQueue>>(block, cfg, optimizer, source, queues,
                                                                         options, nullptr));
  }
  const auto start = detail::Clock::now();
  for (std::size_t n = 0; n < options.steps; ++n) {
    for (auto& w : workers) w->step(n, start, false);
  }
  return detail::collect(workers, queues);
}

/// One thread per block; blocks exchange packets only through bounded
/// blocking queues. Each block's gradient computation is sequential and sees
/// the same FIFO sequence as run_serial, so results match it bit for bit.
inline TrainResult run_parallel(Model& model, const PipelineConfig& cfg, const BatchSource& source,
                                const OptimizerSpec& optimizer, const RunOptions& options) {
  detail::check_run(model, cfg);
  TrainResult empty;
  if (options.steps == 0) return empty;
  const std::size_t batch = source(0).size();
  detail::PipelineQueues<BlockingQueue> queues(model, cfg, batch, detail::target_width_for(model, options.loss),
                                               options.watchdog);
  std::mutex observer_mutex;
  std::vector<std::unique_ptr<detail::BlockWorker<BlockingQueue>>> workers;
  for (auto& block : model.blocks) {
    workers.push_back(std::make_unique<detail::BlockWorker<BlockingQueue>>(block, cfg, optimizer, source, queues,
                                                                           options, &observer_mutex));
  }

  auto close_all = [&queues] {
    for (auto& q : queues.out)
      if (q) q->close();
    for (auto& q : queues.input)
      if (q) q->close();
    for (auto& q : queues.grad)
      if (q) q->close();
  };

  std::vector<std::exception_ptr> errors(workers.size());
  const auto start = detail::Clock::now();
  {
    std::vector<std::jthread> threads;
    for (std::size_t k = 0; k < workers.size(); ++k) {
      threads.emplace_back([&, k] {
        try {
          for (std::size_t n = 0; n < options.steps; ++n) workers[k]->step(n, start, true);
        } catch (...) {
          errors[k] = std::current_exception();
          close_all();
        }
      });
    }
  }

  // Report the root cause rather than the QueueClosed errors it triggered.
  std::exception_ptr closed;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const QueueClosed&) {
      closed = e;
    } catch (...) {
      throw;
    }
  }
  if (closed) std::rethrow_exception(closed);
  return detail::collect(workers, queues);
}

/// Synchronous backpropagation baseline: every step forwards the whole model,
/// backpropagates, then updates each block with its own optimizer state.
inline TrainResult train_bp(Model& model, const BatchSource& source, const OptimizerSpec& optimizer,
                            const RunOptions& options) {
  TrainResult result;
  std::vector<OptimizerState> states;
  for (const auto& block : model.blocks) states.emplace_back(optimizer, block.params);
  const std::unordered_set<std::size_t> checkpoints(options.checkpoint_steps.begin(), options.checkpoint_steps.end());
  const auto start = detail::Clock::now();
  for (std::size_t n = 0; n < options.steps; ++n) {
    const Batch batch = source(n);
    const GradientResult g = bp_gradient(model, model.snapshot(), batch, options.loss);
    const std::int64_t wall = detail::nanos_since(start);
    for (std::size_t k = 0; k < model.num_blocks(); ++k) {
      StepRecord rec;
      rec.step = n;
      rec.block = k;
      rec.batch_index = static_cast<std::int64_t>(n);
      if (k + 1 == model.num_blocks()) rec.loss = g.loss;
      rec.grad_norm = l2_norm(g.grads[k]);
      rec.wall_nanos = wall;
      result.log.records.push_back(rec);
      states[k].apply(model.blocks[k].params, g.grads[k], n);
    }
    if (checkpoints.contains(n)) result.checkpoints.push_back({n, model.snapshot(), detail::nanos_since(start)});
  }
  return result;
}

}  // namespace dsp
