// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsp/config.hpp"
#include "dsp/data.hpp"
#include "dsp/diagnostics.hpp"
#include "dsp/gradcheck.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/pipeline.hpp"
#include "dsp/pipeline_config.hpp"
#include "dsp/run_io.hpp"
#include "dsp/schedule_sim.hpp"

namespace dsp {

class CheckFailed : public Error {
 public:
  explicit CheckFailed(const std::string& message) : Error("check_failed", message) {}
};

namespace commands {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::filesystem::path prepare_output_dir(const RunConfig& config) {
  const std::filesystem::path dir(config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline void write_resolved_config(const std::filesystem::path& dir, const RunConfig& config) {
  auto out = open_output(dir / "resolved_config.txt");
  out << format_run_config(config);
}

struct TrainData {
  Dataset train;
  std::optional<Dataset> test;
};

inline void one_hot_targets(Dataset& ds) {
  if (ds.targets) return;
  Tensor t({ds.size(), ds.num_classes});
  for (std::size_t i = 0; i < ds.size(); ++i) t(i, ds.labels[i]) = 1.0;
  ds.targets = std::move(t);
}

/// Loads or generates the datasets and applies (and records) standardization.
inline TrainData load_data(RunConfig& config) {
  TrainData data;
  if (config.data.source == "synthetic") {
    SyntheticSpec spec = config.data.synthetic;
    spec.samples += config.data.test_samples;
    Dataset all = gen_teacher_dataset(spec);
    data.train = slice(all, 0, config.data.synthetic.samples);
    if (config.data.test_samples > 0) data.test = slice(all, config.data.synthetic.samples, all.size());
  } else if (config.data.source == "idx") {
    data.train = load_idx_dataset(config.data.idx_images, config.data.idx_labels);
    if (!config.data.idx_test_images.empty()) {
      data.test = load_idx_dataset(config.data.idx_test_images, config.data.idx_test_labels);
      data.test->num_classes = std::max(data.test->num_classes, data.train.num_classes);
      data.train.num_classes = data.test->num_classes;
    }
  } else {
    throw ConfigError("data.source: expected synthetic or idx, got '" + config.data.source + "'");
  }
  if (config.data.standardize) {
    if (!config.data.standardization) config.data.standardization = compute_standardization(data.train.inputs);
    standardize(data.train.inputs, *config.data.standardization);
    if (data.test) standardize(data.test->inputs, *config.data.standardization);
  }
  if (config.train.loss == LossKind::half_mse) {
    one_hot_targets(data.train);
    if (data.test) one_hot_targets(*data.test);
  }
  return data;
}

inline Model build_configured_model(const RunConfig& config) {
  const auto bounds = config.model.boundaries.empty() ? suggest_boundaries(config.model.layers, config.model.blocks)
                                                      : config.model.boundaries;
  Model model = build_model(config.model.layers, bounds);
  if (model.num_blocks() != config.model.blocks) {
    throw ConfigError("model.boundaries give " + std::to_string(model.num_blocks()) + " blocks but model.blocks = " +
                      std::to_string(config.model.blocks));
  }
  return model;
}

inline void write_deviation_csv(std::ostream& out, const std::vector<DeviationSample>& samples) {
  out.precision(17);
  out << "schema_version,batch_index,step,block,deviation,bound_lhs,snapshot_diff\n";
  for (const auto& s : samples) {
    for (std::size_t k = 0; k < s.deviation.size(); ++k) {
      out << kSchemaVersion << ',' << s.batch_index << ',' << s.step << ',' << k << ',' << s.deviation[k] << ','
          << s.bound_lhs[k] << ',' << s.snapshot_diffs[k] << '\n';
    }
  }
}

template <typename T>
std::string join_values(const std::vector<T>& v) {
  return cfg::join(v);
}

}  // namespace commands

/// Checks the queue constraints and prints the derived gradient-queue depths
/// and layer-wise staleness.
inline int cmd_validate(const RunConfig& config, std::ostream& out) {
  const PipelineConfig pc = validate_config(config.pipeline.p.size(), config.pipeline.p, config.pipeline.m,
                                            config.pipeline.warmup, config.pipeline.overlap);
  const StalenessProfile st = staleness_of(pc);
  out << "config=" << pc.label() << '\n';
  out << "q=" << commands::join_values(pc.q) << '\n';
  out << "dt=" << commands::join_values(st.dt) << '\n';
  out << "max_dt=" << st.max << '\n';
  return 0;
}

/// Finite-difference check of backpropagated gradients, plus the reduction
/// of the stale-parameter gradient to plain backpropagation when both
/// snapshots coincide.
inline int cmd_gradcheck(const RunConfig& config, std::ostream& out, double tolerance = 1e-5) {
  const auto dir = commands::prepare_output_dir(config);
  commands::write_resolved_config(dir, config);
  const auto& gc = config.gradcheck;
  Model model = build_model(gc.layers, suggest_boundaries(gc.layers, gc.blocks));
  double worst = 0.0;
  std::size_t bitwise = 0;
  for (std::size_t i = 0; i < gc.instances; ++i) {
    init_params(model, derive_seed(config.seed, {3, i}));
    SeededRng rng(derive_seed(config.seed, {4, i}));
    for (auto& block : model.blocks) {
      for (double& v : block.params) v += 0.05 * rng.normal();
    }
    Batch batch;
    batch.inputs = Tensor({gc.batch, model.input_width()});
    for (double& v : batch.inputs.values()) v = rng.normal();
    for (std::size_t r = 0; r < gc.batch; ++r) batch.labels.push_back(rng.below(model.output_width()));
    const ParamSnapshot x = model.snapshot();
    worst = std::max(worst, gradcheck_max_rel_error(model, x, batch, LossKind::softmax_xent, gc.step));
    const GradientResult bp = bp_gradient(model, x, batch);
    const GradientResult stale = dsp_gradient(model, x, x, batch);
    if (bp.grads == stale.grads && bp.loss == stale.loss) ++bitwise;
  }
  out.precision(6);
  out << "instances=" << gc.instances << '\n';
  out << "max_rel_error=" << worst << '\n';
  out << "stale_reduction_bitwise=" << bitwise << '/' << gc.instances << '\n';
  if (!(worst <= tolerance)) {
    throw CheckFailed("max relative error " + cfg::num(worst) + " exceeds " + cfg::num(tolerance));
  }
  if (bitwise != gc.instances) throw CheckFailed("stale-parameter gradient differs from backpropagation");
  return 0;
}

/// Clean runs of sync_bp and the configured DSP schedule, trace export, and
/// the straggler slowdown table.
inline int cmd_simulate(const RunConfig& config, std::ostream& out) {
  const auto dir = commands::prepare_output_dir(config);
  commands::write_resolved_config(dir, config);
  const std::size_t K = config.sim.forward.size();
  sim::CostModel cost{config.sim.forward, config.sim.backward, config.sim.overlap, config.sim.comm};
  cost.validate();
  const PipelineConfig pc =
      validate_config(K, config.pipeline.p, config.pipeline.m, config.pipeline.warmup, config.sim.overlap);
  const std::vector<sim::Schedule> schedules{sim::Schedule::sync_bp(), sim::Schedule::dsp(pc)};

  auto stats = commands::open_output(dir / "sim_stats.csv");
  stats.precision(17);
  stats << "schema_version,schedule,steps,makespan,step_interval\n";
  for (const auto& schedule : schedules) {
    const sim::SimResult r = sim::simulate(schedule, cost, std::nullopt, config.sim.steps);
    for (const auto& q : r.queues) {
      if (auto violation = sim::check_queue_discipline(q, cost.comm)) throw ProtocolError(*violation);
    }
    if (!sim::per_block_monotone(r.trace, K)) throw ProtocolError("event times decrease within a block");
    stats << kSchemaVersion << ",\"" << schedule.name() << "\"," << config.sim.steps << ',' << r.stats.makespan << ','
          << r.stats.step_interval << '\n';
    out << schedule.name() << " makespan=" << r.stats.makespan << " step_interval=" << r.stats.step_interval << '\n';
    if (config.sim.write_trace) {
      const std::string file = schedule.kind == sim::Schedule::Kind::sync_bp ? "trace_sync_bp.csv" : "trace_dsp.csv";
      auto trace = commands::open_output(dir / file);
      sim::write_trace_csv(trace, r.trace);
    }
  }

  if (!config.sim.slowdowns.empty() && config.sim.seeds > 0) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < config.sim.seeds; ++i) seeds.push_back(derive_seed(config.seed, {5, i}));
    const auto rows = sim::straggler_comparison(schedules, cost, config.sim.slowdowns, seeds, config.sim.steps,
                                                config.sim.straggler_probability);
    auto table = commands::open_output(dir / "straggler.csv");
    table.precision(17);
    table << "schema_version,schedule,slowdown,median_percent\n";
    for (const auto& row : rows) {
      table << kSchemaVersion << ",\"" << row.schedule << "\"," << row.slowdown << ',' << row.median_percent << '\n';
      out << row.schedule << " rho=" << row.slowdown << " median_slowdown_percent=" << row.median_percent << '\n';
    }
  }
  return 0;
}

/// Trains with the configured backend and writes train_log.jsonl,
/// summary.csv (one row per completed epoch) and resolved_config.txt.
inline int cmd_train(RunConfig config, std::ostream& out) {
  const auto dir = commands::prepare_output_dir(config);
  commands::TrainData data = commands::load_data(config);
  Model model = commands::build_configured_model(config);
  init_params(model, derive_seed(config.seed, {1}));

  const EpochBatchStream stream(data.train, config.train.batch_size, derive_seed(config.seed, {2}));
  const BatchSource source = [&stream](std::size_t n) { return stream(n); };
  const std::size_t per_epoch = stream.batches_per_epoch();
  const std::size_t steps = config.train.steps.value_or(config.train.epochs * per_epoch);
  const std::size_t epochs = steps / per_epoch;

  OptimizerSpec optimizer = config.optimizer;
  for (const auto& [epoch, factor] : config.lr_decay_epochs) optimizer.schedule.decays.emplace_back(epoch * per_epoch, factor);
  optimizer.validate();

  RunOptions options;
  options.steps = steps;
  options.loss = config.train.loss;
  for (std::size_t e = 0; e < epochs; ++e) options.checkpoint_steps.push_back((e + 1) * per_epoch - 1);
  if (config.train.straggler_probability > 0.0) {
    options.straggler = StragglerInjection{config.train.straggler_probability,
                                           std::chrono::microseconds(config.train.straggler_max_delay_us),
                                           derive_seed(config.seed, {6})};
  }
  std::optional<DeviationRecorder> recorder;
  if (config.train.deviation_every > 0 && config.train.backend != Backend::bp) {
    recorder.emplace(model, source, config.train.loss, config.train.deviation_every);
    options.observer = &*recorder;
  }

  TrainResult result;
  if (config.train.backend == Backend::bp) {
    result = train_bp(model, source, optimizer, options);
  } else {
    const PipelineConfig pc = validate_config(model.num_blocks(), config.pipeline.p, config.pipeline.m,
                                              config.pipeline.warmup, config.pipeline.overlap);
    result = config.train.backend == Backend::serial ? run_serial(model, pc, source, optimizer, options)
                                                     : run_parallel(model, pc, source, optimizer, options);
  }
  if (recorder) attach_deviations(result.log, recorder->samples());

  commands::write_resolved_config(dir, config);
  {
    auto log = commands::open_output(dir / "train_log.jsonl");
    write_train_log(log, result.log);
  }
  std::vector<SummaryRow> rows;
  for (std::size_t e = 0; e < result.checkpoints.size(); ++e) {
    const auto& cp = result.checkpoints[e];
    SummaryRow row;
    row.epoch = e + 1;
    const Evaluation tr = evaluate(model, cp.params, data.train, config.train.loss);
    row.train_loss = tr.loss;
    row.train_accuracy = tr.accuracy;
    if (data.test) {
      const Evaluation te = evaluate(model, cp.params, *data.test, config.train.loss);
      row.test_loss = te.loss;
      row.test_accuracy = te.accuracy;
    }
    row.wall_seconds = static_cast<double>(cp.wall_nanos) * 1e-9;
    rows.push_back(row);
    out << "epoch=" << row.epoch << " train_loss=" << row.train_loss;
    if (row.train_accuracy) out << " train_accuracy=" << *row.train_accuracy;
    if (data.test) out << " test_loss=" << row.test_loss;
    if (row.test_accuracy) out << " test_accuracy=" << *row.test_accuracy;
    out << '\n';
  }
  {
    auto summary = commands::open_output(dir / "summary.csv");
    write_summary_csv(summary, rows);
  }
  if (recorder) {
    auto dev = commands::open_output(dir / "deviation.csv");
    commands::write_deviation_csv(dev, recorder->samples());
    const DeviationBoundCheck check = deviation_bound_check(recorder->samples(), recorder->max_upstream_norm());
    out << "deviation_bound empirical_L=" << check.L << " empirical_M=" << check.M
        << " steps_held=" << check.steps_held << '/' << check.steps << '\n';
  }
  out << "steps=" << steps << " records=" << result.log.records.size() << '\n';
  return 0;
}

}  // namespace dsp
