// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dsp/dsp.hpp"

namespace {

using namespace dsp;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) { return sim::detail::median(std::move(v)); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Verdict finite_differences() {
  double worst = 0.0;
  constexpr std::size_t kCases = 100;
  for (std::size_t i = 0; i < kCases; ++i) {
    const GradcheckCase c = random_gradcheck_case(1000 + i);
    worst = std::max(worst, gradcheck_max_rel_error(c.model, c.model.snapshot(), c.batch));
  }
  return {worst <= 1e-5, std::to_string(kCases) + " models, max relative error " + fmt(worst, 3)};
}

Verdict stale_reduction() {
  std::size_t equal = 0;
  constexpr std::size_t kCases = 50;
  for (std::size_t i = 0; i < kCases; ++i) {
    const GradcheckCase c = random_gradcheck_case(5000 + i);
    const ParamSnapshot x = c.model.snapshot();
    const GradientResult bp = bp_gradient(c.model, x, c.batch);
    const GradientResult stale = dsp_gradient(c.model, x, x, c.batch);
    if (bp.grads == stale.grads && bp.loss == stale.loss) ++equal;
  }
  return {equal == kCases, std::to_string(equal) + "/" + std::to_string(kCases) + " bitwise equal"};
}

Verdict serial_parallel_equivalence() {
  const Dataset data = gen_teacher_dataset(SyntheticSpec{{16, 24, 4}, 42, 1024, Activation::tanh});
  const std::vector<LayerSpec> layers{LayerSpec::dense(16, 24), LayerSpec::relu(), LayerSpec::dense(24, 24),
                                      LayerSpec::tanh(), LayerSpec::dense(24, 4)};
  const OptimizerSpec opt{OptimizerRule::sum, 0.9, 0.0, LrSchedule::constant(0.02), 0.0};
  std::size_t equal = 0, runs = 0;
  for (const auto& cfg : {validate_config(3, {1, 1, 0}, {4, 2, 0}), validate_config(3, {2, 2, 0}, {6, 3, 0}),
                          validate_config(3, {3, 3, 0}, {10, 5, 0})}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const EpochBatchStream stream(data, 32, seed);
      const BatchSource source = [&stream](std::size_t n) { return stream(n); };
      Model a = build_model(layers, {2, 4});
      init_params(a, seed);
      Model b = a;
      RunOptions ro;
      ro.steps = 200;
      const TrainResult ra = run_serial(a, cfg, source, opt, ro);
      const TrainResult rb = run_parallel(b, cfg, source, opt, ro);
      ++runs;
      if (a.snapshot() == b.snapshot() && ra.log.same_trajectory(rb.log)) ++equal;
    }
  }
  return {equal == runs, std::to_string(equal) + "/" + std::to_string(runs) + " runs bitwise equal after 200 steps"};
}

Verdict config_validation() {
  bool ok = validate_config(3, {1, 1, 0}, {4, 2, 0}).q == std::vector<std::size_t>{0, 1, 1} &&
            validate_config(3, {2, 2, 0}, {6, 3, 0}).q == std::vector<std::size_t>{0, 1, 1} &&
            validate_config(3, {3, 3, 0}, {10, 5, 0}).q == std::vector<std::size_t>{0, 2, 2};

  // Random valid configs, one coordinate mutated; the named constraint must
  // be among those an independent check finds broken.
  SeededRng rng(77);
  std::size_t rejected = 0, named_right = 0, accepted_valid = 0, accepted_invalid = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t K = 2 + rng.below(4);
    std::vector<long> p(K, 0), m(K, 0);
    m[K - 1] = static_cast<long>(rng.below(3));
    for (std::size_t k = K - 1; k-- > 0;) {
      p[k] = 1 + static_cast<long>(rng.below(3));
      m[k] = 1 + static_cast<long>(rng.below(3)) + p[k] + m[k + 1];
    }
    auto& target = rng.below(2) ? p : m;
    const std::size_t idx = rng.below(K);
    target[idx] = std::max(0L, target[idx] + static_cast<long>(rng.below(7)) - 3);

    std::vector<std::pair<std::string, std::size_t>> broken;
    for (std::size_t k = 0; k + 1 < K; ++k) {
      if (p[k] <= 0) broken.emplace_back("p_k>0", k);
      if (m[k] <= 0) broken.emplace_back("m_k>0", k);
    }
    if (p[K - 1] != 0) broken.emplace_back("p_{K-1}=0", K - 1);
    for (std::size_t k = 1; k < K; ++k) {
      if (m[k - 1] - p[k - 1] - m[k] <= 0) broken.emplace_back("q_k>0", k);
    }
    try {
      validate_config(K, {p.begin(), p.end()}, {m.begin(), m.end()});
      (broken.empty() ? accepted_valid : accepted_invalid)++;
    } catch (const ConstraintError& e) {
      ++rejected;
      const std::pair<std::string, std::size_t> got{e.constraint(), e.block()};
      if (std::find(broken.begin(), broken.end(), got) != broken.end()) ++named_right;
    }
  }
  ok = ok && accepted_invalid == 0 && named_right == rejected && rejected > 0;
  return {ok, std::string(ok ? "reference configs q ok; " : "reference configs q WRONG; ") + std::to_string(rejected) + " mutations rejected, " + std::to_string(named_right) +
                  " with a broken constraint named, " + std::to_string(accepted_invalid) + " invalid accepted"};
}

// ---------------------------------------------------------------------------
// Criteria 5, 6 and 10 share one training setup.

constexpr std::size_t kEpochs = 30;
constexpr std::size_t kBatch = 64;
constexpr std::size_t kDecayEpoch = 20;
constexpr std::size_t kSampleEvery = 10;

struct SeedRun {
  std::uint64_t seed = 0;
  double bp_loss = 0.0, dsp_loss = 0.0;
  double bp_acc = 0.0, dsp_acc = 0.0;
  std::vector<double> block_median;  // per-parameter deviation, median over samples
  double before_decay = 0.0, after_decay = 0.0;
  DeviationBoundCheck bound;
  double seconds = 0.0;
};

std::vector<SeedRun> convergence_runs() {
  const Dataset all = gen_teacher_dataset(SyntheticSpec{{64, 32, 10}, 42, 5000, Activation::tanh});
  const Dataset train = slice(all, 0, 4000);
  const std::vector<LayerSpec> layers{LayerSpec::dense(64, 96), LayerSpec::relu(), LayerSpec::dense(96, 96),
                                      LayerSpec::relu(), LayerSpec::dense(96, 96), LayerSpec::relu(),
                                      LayerSpec::dense(96, 10)};
  const std::vector<std::size_t> boundaries = suggest_boundaries(layers, 3);
  const std::size_t per_epoch = train.size() / kBatch;
  const OptimizerSpec opt{OptimizerRule::sum, 0.9, 0.0, LrSchedule{0.01, {{kDecayEpoch * per_epoch, 0.1}}}, 0.0};
  const PipelineConfig cfg = validate_config(3, {1, 1, 0}, {4, 2, 0});

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto start = Clock::now();
    const EpochBatchStream stream(train, kBatch, seed);
    const BatchSource source = [&stream](std::size_t n) { return stream(n); };
    Model bp = build_model(layers, boundaries);
    init_params(bp, seed);
    Model dsp = bp;
    RunOptions ro;
    ro.steps = kEpochs * per_epoch;
    train_bp(bp, source, opt, ro);
    DeviationRecorder recorder(dsp, source, LossKind::softmax_xent, kSampleEvery);
    ro.observer = &recorder;
    run_serial(dsp, cfg, source, opt, ro);

    SeedRun r;
    r.seed = seed;
    const Evaluation eb = evaluate(bp, bp.snapshot(), train, LossKind::softmax_xent);
    const Evaluation ed = evaluate(dsp, dsp.snapshot(), train, LossKind::softmax_xent);
    r.bp_loss = eb.loss;
    r.dsp_loss = ed.loss;
    r.bp_acc = eb.accuracy.value_or(0.0);
    r.dsp_acc = ed.accuracy.value_or(0.0);

    std::vector<std::vector<double>> per_block(3);
    std::vector<double> before, after;
    for (const auto& s : recorder.samples()) {
      double total = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        per_block[k].push_back(s.deviation[k]);
        total += s.deviation[k];
      }
      const std::size_t epoch = static_cast<std::size_t>(s.batch_index) / per_epoch;
      if (epoch + 1 == kDecayEpoch) before.push_back(total);
      if (epoch == kDecayEpoch) after.push_back(total);
    }
    for (const auto& v : per_block) r.block_median.push_back(median(v));
    r.before_decay = median(before);
    r.after_decay = median(after);
    r.bound = deviation_bound_check(recorder.samples(), recorder.max_upstream_norm());
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    std::cout << "  seed " << seed << ": bp loss " << fmt(r.bp_loss) << " acc " << fmt(r.bp_acc) << ", dsp loss "
              << fmt(r.dsp_loss) << " acc " << fmt(r.dsp_acc) << ", deviation b0/b1/b2 " << fmt(r.block_median[0], 3)
              << "/" << fmt(r.block_median[1], 3) << "/" << fmt(r.block_median[2], 3) << ", epoch "
              << kDecayEpoch - 1 << "->" << kDecayEpoch << " " << fmt(r.before_decay, 3) << "->"
              << fmt(r.after_decay, 3) << " (" << fmt(r.seconds, 3) << " s)\n";
    runs.push_back(std::move(r));
  }
  return runs;
}

Verdict convergence_parity(const std::vector<SeedRun>& runs) {
  std::vector<double> bp_loss, dsp_loss, bp_acc, dsp_acc;
  for (const auto& r : runs) {
    bp_loss.push_back(r.bp_loss);
    dsp_loss.push_back(r.dsp_loss);
    bp_acc.push_back(r.bp_acc);
    dsp_acc.push_back(r.dsp_acc);
  }
  const double gap = std::abs(median(dsp_loss) - median(bp_loss)) / median(bp_loss);
  const bool ok = gap <= 0.10 && median(bp_acc) >= 0.95 && median(dsp_acc) >= 0.95;
  return {ok, "median loss bp " + fmt(median(bp_loss)) + " dsp " + fmt(median(dsp_loss)) + " (gap " +
                  fmt(100.0 * gap, 3) + "%), accuracy bp " + fmt(median(bp_acc)) + " dsp " + fmt(median(dsp_acc))};
}

Verdict deviation_structure(const std::vector<SeedRun>& runs) {
  std::vector<double> b0, b2, before, after;
  for (const auto& r : runs) {
    b0.push_back(r.block_median[0]);
    b2.push_back(r.block_median[2]);
    before.push_back(r.before_decay);
    after.push_back(r.after_decay);
  }
  const bool lower_blocks = median(b0) >= median(b2);
  const bool decay = median(after) < median(before);
  return {lower_blocks && decay, std::string("(a) ") + (lower_blocks ? "ok" : "FAIL") + " block0 " +
                                     fmt(median(b0), 3) + " vs block2 " + fmt(median(b2), 3) + "; (b) " +
                                     (decay ? "ok" : "FAIL") + " epoch before decay " + fmt(median(before), 3) +
                                     " vs after " + fmt(median(after), 3)};
}

Verdict deviation_bound(const std::vector<SeedRun>& runs) {
  // Zero snapshot difference: identical forward and backward parameters.
  bool zero = true;
  for (std::size_t i = 0; i < 20; ++i) {
    const GradcheckCase c = random_gradcheck_case(9000 + i);
    const ParamSnapshot x = c.model.snapshot();
    const GradientResult stale = dsp_gradient(c.model, x, x, c.batch);
    for (double d : grad_deviation(c.model, x, c.batch, stale.grads)) zero = zero && d == 0.0;
    const auto rows = deviation_bound_report(std::vector<double>(x.size(), 0.0), 1.0, 1.0,
                                    std::vector<double>(x.size(), 0.0));
    for (const auto& row : rows) zero = zero && row.measured == 0.0 && !row.exceeded;
  }
  double worst = 1.0;
  std::string per_seed;
  for (const auto& r : runs) {
    worst = std::min(worst, r.bound.step_fraction());
    per_seed += " seed " + std::to_string(r.seed) + ": " + std::to_string(r.bound.steps_held) + "/" +
                std::to_string(r.bound.steps) + " (L=" + fmt(r.bound.L, 3) + ", M=" + fmt(r.bound.M, 3) + ")";
  }
  return {zero && worst >= 0.99,
          std::string("zero-difference deviation ") + (zero ? "exactly 0" : "NONZERO") + ";" + per_seed};
}

// ---------------------------------------------------------------------------

Verdict ideal_throughput() {
  const PipelineConfig cfg = validate_config(4, {1, 1, 1, 0}, {6, 4, 2, 0});
  const sim::CostModel cost = sim::CostModel::uniform(4, 1.0, 1.0);
  const double dsp = sim::simulate(sim::Schedule::dsp(cfg), cost, std::nullopt, 1000).stats.step_interval;
  const double sync = sim::simulate(sim::Schedule::sync_bp(), cost, std::nullopt, 1000).stats.step_interval;
  return {std::abs(dsp - 2.0) <= 1.0 && sync == 8.0,
          cfg.label() + " interval " + fmt(dsp) + ", sync_bp interval " + fmt(sync)};
}

Verdict straggler_ordering() {
  sim::CostModel cost = sim::CostModel::uniform(3, 1.0, 2.0);
  const std::vector<double> rhos{0.2, 0.5, 1.0};
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 30; ++s) seeds.push_back(s);
  const auto short_q = validate_config(3, {1, 1, 0}, {4, 2, 0});
  const auto long_q = validate_config(3, {3, 3, 0}, {10, 5, 0});
  const auto rows = sim::straggler_comparison(
      {sim::Schedule::sync_bp(), sim::Schedule::dsp(short_q), sim::Schedule::dsp(validate_config(3, {2, 2, 0}, {6, 3, 0})),
       sim::Schedule::dsp(long_q)},
      cost, rhos, seeds, 1000);
  auto find = [&](const std::string& name, double rho) {
    for (const auto& r : rows)
      if (r.schedule == name && r.slowdown == rho) return r.median_percent;
    throw std::logic_error("missing straggler row");
  };
  bool below_sync = true;
  for (const auto& r : rows) {
    std::cout << "  " << std::left << std::setw(20) << r.schedule << " rho=" << r.slowdown << " median slowdown "
              << fmt(r.median_percent) << "%\n";
    if (r.schedule != "sync_bp" && !(r.median_percent < find("sync_bp", r.slowdown))) below_sync = false;
  }
  const bool longer = find(long_q.label(), 1.0) <= find(short_q.label(), 1.0);
  return {below_sync && longer, std::string("(a) DSP below sync_bp at every rho: ") + (below_sync ? "yes" : "no") +
                                    "; (b) longer queues at rho=1: " + fmt(find(long_q.label(), 1.0)) + "% vs " +
                                    fmt(find(short_q.label(), 1.0)) + "% " + (longer ? "ok" : "FAIL")};
}

Verdict theory_constants() {
  // 50-digit reference values.
  constexpr double kC1 = 25.127717305695649349467883598002369515370120663416;  // -18 + sqrt(1860)
  const SgdBound s = sgd_lr_bound(1.0, 1.0, 3, 4.0);
  const double beta = 0.9;
  const MomentumBound balanced = momentum_lr_bound(1.0, 1.0, 3, 4.0, beta, 1.0 / (1.0 - beta));
  const MomentumBound unit = momentum_lr_bound(1.0, 1.0, 3, 4.0, beta, 1.0);
  const bool ok = std::abs(s.c0 - 48.0) <= 1e-12 && std::abs(s.c1 - kC1) <= 1e-12 &&
                  std::abs(balanced.c2) <= 1e-12 && std::abs(unit.c2 - 81.0) <= 1e-12 * 81.0;
  std::ostringstream d;
  d << std::setprecision(17) << "c0=" << s.c0 << " c1=" << s.c1 << " c2(s=1/(1-b))=" << balanced.c2
    << " c2(s=1)=" << unit.c2;
  return {ok, d.str()};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&failed](int id, const char* name, const std::function<Verdict()>& check) {
    const auto start = Clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << v.detail << " ["
              << fmt(secs, 3) << " s]" << std::endl;
  };

  report(1, "finite-difference gradients", finite_differences);
  report(2, "stale gradient reduces to backprop", stale_reduction);
  report(3, "serial/parallel equivalence", serial_parallel_equivalence);
  report(4, "queue configuration validation", config_validation);

  std::cout << "training BP and DSP(1,1,0;4,2,0), " << kEpochs << " epochs x 3 seeds" << std::endl;
  std::vector<SeedRun> runs;
  std::string setup_error;
  try {
    runs = convergence_runs();
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto with_runs = [&](Verdict (*f)(const std::vector<SeedRun>&)) {
    return [&, f]() -> Verdict {
      if (!setup_error.empty()) return {false, "training failed: " + setup_error};
      return f(runs);
    };
  };
  report(5, "convergence parity", with_runs(convergence_parity));
  report(6, "gradient deviation structure", with_runs(deviation_structure));
  report(7, "ideal throughput", ideal_throughput);
  report(8, "straggler robustness", straggler_ordering);
  report(9, "learning-rate bound constants", theory_constants);
  report(10, "deviation bound", with_runs(deviation_bound));

  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
