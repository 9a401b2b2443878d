// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dsp/data.hpp"
#include "dsp/errors.hpp"
#include "dsp/gradient.hpp"
#include "dsp/model.hpp"
#include "dsp/optim.hpp"
#include "dsp/pipeline_config.hpp"

namespace dsp {

// Grammar, one entry per line:
//   key = value        # trailing comment
//   key = "value"      # quotes are optional and stripped
// Keys are dotted identifiers; blank lines and lines starting with '#' are
// ignored. A key may appear only once.
using KeyValues = std::map<std::string, std::string>;

namespace cfg {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto e = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, e == std::string_view::npos ? std::string_view::npos : e - pos)));
    if (e == std::string_view::npos) break;
    pos = e + 1;
  }
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  double out = 0.0;
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& part : split(v, ',')) out.push_back(static_cast<std::size_t>(to_u64(key, part)));
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& part : split(v, ',')) out.push_back(to_double(key, part));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

inline std::string num(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace cfg

inline KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    // Strip a trailing comment that is not inside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string body = cfg::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = cfg::trim(std::string_view(body).substr(0, eq));
    std::string value = cfg::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!kv.emplace(key, value).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + key);
  }
  return kv;
}

/// "dense:64:128,relu,tanh,dense:128:10" (append ":nobias" to drop a bias).
inline std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> layers;
  for (const auto& item : cfg::split(text, ',')) {
    const auto parts = cfg::split(item, ':');
    if (parts.empty()) throw ConfigError("model.layers: empty layer entry");
    if (parts[0] == "relu" && parts.size() == 1) {
      layers.push_back(LayerSpec::relu());
    } else if (parts[0] == "tanh" && parts.size() == 1) {
      layers.push_back(LayerSpec::tanh());
    } else if (parts[0] == "dense" && (parts.size() == 3 || (parts.size() == 4 && parts[3] == "nobias"))) {
      layers.push_back(LayerSpec::dense(cfg::to_u64("model.layers", parts[1]), cfg::to_u64("model.layers", parts[2]),
                                        parts.size() == 3));
    } else {
      throw ConfigError("model.layers: cannot parse layer '" + item + "'");
    }
  }
  if (layers.empty()) throw ConfigError("model.layers: no layers given");
  return layers;
}

inline std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ',';
    switch (l.kind) {
      case LayerSpec::Kind::dense:
        out += "dense:" + std::to_string(l.in) + ":" + std::to_string(l.out) + (l.bias ? "" : ":nobias");
        break;
      case LayerSpec::Kind::relu: out += "relu"; break;
      case LayerSpec::Kind::tanh: out += "tanh"; break;
    }
  }
  return out;
}

enum class Backend { serial, parallel, bp };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::serial: return "serial";
    case Backend::parallel: return "parallel";
    case Backend::bp: return "bp";
  }
  return "?";
}

struct RunConfig {
  std::uint64_t seed = 1;

  struct ModelSection {
    std::vector<LayerSpec> layers{LayerSpec::dense(16, 32), LayerSpec::relu(), LayerSpec::dense(32, 32),
                                  LayerSpec::relu(), LayerSpec::dense(32, 4)};
    std::size_t blocks = 3;
    std::vector<std::size_t> boundaries;  // empty: balanced split by parameter count
  } model;

  struct PipelineSection {
    std::vector<std::size_t> p{1, 1, 0};
    std::vector<std::size_t> m{4, 2, 0};
    WarmupPolicy warmup = WarmupPolicy::faithful_zero_updates;
    bool overlap = true;
  } pipeline;

  OptimizerSpec optimizer{OptimizerRule::sum, 0.9, 0.0, LrSchedule::constant(0.01), 0.0};
  // Decays given in epochs; converted to steps once the epoch length is known.
  std::vector<std::pair<std::size_t, double>> lr_decay_epochs;

  struct DataSection {
    std::string source = "synthetic";  // synthetic | idx
    SyntheticSpec synthetic;
    std::size_t test_samples = 500;
    std::string idx_images, idx_labels, idx_test_images, idx_test_labels;
    bool standardize = false;
    std::optional<Standardization> standardization;  // recorded once computed
  } data;

  struct TrainSection {
    Backend backend = Backend::serial;
    std::size_t epochs = 5;
    std::optional<std::size_t> steps;  // overrides epochs * batches_per_epoch
    std::size_t batch_size = 32;
    LossKind loss = LossKind::softmax_xent;
    std::size_t deviation_every = 0;  // 0 disables deviation sampling
    double straggler_probability = 0.0;
    std::size_t straggler_max_delay_us = 500;
  } train;

  struct SimSection {
    std::vector<double> forward{1.0, 1.0, 1.0};
    std::vector<double> backward{1.0, 1.0, 1.0};
    bool overlap = true;
    double comm = 0.0;
    std::size_t steps = 200;
    std::vector<double> slowdowns{0.2, 0.5, 1.0};
    std::size_t seeds = 30;
    double straggler_probability = 1.0 / 3.0;
    bool write_trace = true;
  } sim;

  struct GradcheckSection {
    std::vector<LayerSpec> layers{LayerSpec::dense(8, 16), LayerSpec::tanh(), LayerSpec::dense(16, 4)};
    std::size_t blocks = 2;
    std::size_t batch = 4;
    std::size_t instances = 20;
    double step = 1e-6;
  } gradcheck;

  std::string output_dir = "runs/latest";
};

namespace cfg {

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  const std::string* get(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  void check_all_used() const {
    for (const auto& [key, value] : kv_) {
      if (!used_.contains(key)) throw ConfigError("unknown config key " + key);
    }
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

inline WarmupPolicy to_warmup(const std::string& v) {
  if (v == "faithful") return WarmupPolicy::faithful_zero_updates;
  if (v == "discard") return WarmupPolicy::discard_warmup_updates;
  throw ConfigError("pipeline.warmup: expected faithful or discard, got '" + v + "'");
}

inline std::vector<std::pair<std::size_t, double>> to_decays(const std::string& key, const std::string& v) {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2) throw ConfigError(key + ": expected at:factor pairs, got '" + item + "'");
    out.emplace_back(static_cast<std::size_t>(to_u64(key, parts[0])), to_double(key, parts[1]));
  }
  return out;
}

inline std::string format_decays(const std::vector<std::pair<std::size_t, double>>& decays) {
  std::string out;
  for (const auto& [at, factor] : decays) out += (out.empty() ? "" : ",") + std::to_string(at) + ":" + num(factor);
  return out;
}

}  // namespace cfg

/// Builds a RunConfig from key-value pairs on top of the defaults. Unknown
/// keys are rejected so that typos never silently fall back to defaults.
inline RunConfig run_config_from(const KeyValues& kv) {
  using namespace cfg;
  RunConfig c;
  Reader r(kv);
  auto set_u = [&](const char* key, auto& field) {
    if (auto v = r.get(key)) field = static_cast<std::remove_reference_t<decltype(field)>>(to_u64(key, *v));
  };
  auto set_d = [&](const char* key, double& field) {
    if (auto v = r.get(key)) field = to_double(key, *v);
  };
  auto set_b = [&](const char* key, bool& field) {
    if (auto v = r.get(key)) field = to_bool(key, *v);
  };
  auto set_s = [&](const char* key, std::string& field) {
    if (auto v = r.get(key)) field = *v;
  };

  set_u("seed", c.seed);

  if (auto v = r.get("model.layers")) c.model.layers = parse_layers(*v);
  set_u("model.blocks", c.model.blocks);
  if (auto v = r.get("model.boundaries")) c.model.boundaries = *v == "auto" ? std::vector<std::size_t>{} : to_sizes("model.boundaries", *v);

  if (auto v = r.get("pipeline.p")) c.pipeline.p = to_sizes("pipeline.p", *v);
  if (auto v = r.get("pipeline.m")) c.pipeline.m = to_sizes("pipeline.m", *v);
  if (auto v = r.get("pipeline.warmup")) c.pipeline.warmup = to_warmup(*v);
  set_b("pipeline.overlap", c.pipeline.overlap);

  if (auto v = r.get("optimizer.rule")) {
    if (*v == "sgd") {
      c.optimizer.rule = OptimizerRule::sgd;
    } else if (*v == "sum") {
      c.optimizer.rule = OptimizerRule::sum;
    } else {
      throw ConfigError("optimizer.rule: expected sgd or sum, got '" + *v + "'");
    }
  }
  set_d("optimizer.beta", c.optimizer.beta);
  set_d("optimizer.s", c.optimizer.s);
  set_d("optimizer.lr", c.optimizer.schedule.base);
  if (auto v = r.get("optimizer.lr_decay_steps")) c.optimizer.schedule.decays = to_decays("optimizer.lr_decay_steps", *v);
  if (auto v = r.get("optimizer.lr_decay_epochs")) c.lr_decay_epochs = to_decays("optimizer.lr_decay_epochs", *v);
  set_d("optimizer.weight_decay", c.optimizer.weight_decay);

  set_s("data.source", c.data.source);
  if (auto v = r.get("data.dims")) c.data.synthetic.dims = to_sizes("data.dims", *v);
  set_u("data.samples", c.data.synthetic.samples);
  set_u("data.seed", c.data.synthetic.seed);
  if (auto v = r.get("data.hidden")) {
    if (*v == "tanh") {
      c.data.synthetic.hidden = Activation::tanh;
    } else if (*v == "relu") {
      c.data.synthetic.hidden = Activation::relu;
    } else {
      throw ConfigError("data.hidden: expected tanh or relu, got '" + *v + "'");
    }
  }
  set_u("data.test_samples", c.data.test_samples);
  set_s("data.idx_images", c.data.idx_images);
  set_s("data.idx_labels", c.data.idx_labels);
  set_s("data.idx_test_images", c.data.idx_test_images);
  set_s("data.idx_test_labels", c.data.idx_test_labels);
  set_b("data.standardize", c.data.standardize);
  {
    const std::string* mean = r.get("data.mean");
    const std::string* sd = r.get("data.stddev");
    if (mean || sd) {
      if (!mean || !sd) throw ConfigError("data.mean and data.stddev must be given together");
      c.data.standardization = Standardization{to_double("data.mean", *mean), to_double("data.stddev", *sd)};
    }
  }

  if (auto v = r.get("train.backend")) {
    if (*v == "serial") {
      c.train.backend = Backend::serial;
    } else if (*v == "parallel") {
      c.train.backend = Backend::parallel;
    } else if (*v == "bp") {
      c.train.backend = Backend::bp;
    } else {
      throw ConfigError("train.backend: expected serial, parallel or bp, got '" + *v + "'");
    }
  }
  set_u("train.epochs", c.train.epochs);
  if (auto v = r.get("train.steps")) c.train.steps = static_cast<std::size_t>(to_u64("train.steps", *v));
  set_u("train.batch_size", c.train.batch_size);
  if (auto v = r.get("train.loss")) {
    if (*v == "softmax_xent") {
      c.train.loss = LossKind::softmax_xent;
    } else if (*v == "half_mse") {
      c.train.loss = LossKind::half_mse;
    } else {
      throw ConfigError("train.loss: expected softmax_xent or half_mse, got '" + *v + "'");
    }
  }
  set_u("train.deviation_every", c.train.deviation_every);
  set_d("train.straggler_probability", c.train.straggler_probability);
  set_u("train.straggler_max_delay_us", c.train.straggler_max_delay_us);

  if (auto v = r.get("sim.forward")) c.sim.forward = to_doubles("sim.forward", *v);
  if (auto v = r.get("sim.backward")) c.sim.backward = to_doubles("sim.backward", *v);
  set_b("sim.overlap", c.sim.overlap);
  set_d("sim.comm", c.sim.comm);
  set_u("sim.steps", c.sim.steps);
  if (auto v = r.get("sim.slowdowns")) c.sim.slowdowns = to_doubles("sim.slowdowns", *v);
  set_u("sim.seeds", c.sim.seeds);
  set_d("sim.straggler_probability", c.sim.straggler_probability);
  set_b("sim.write_trace", c.sim.write_trace);

  if (auto v = r.get("gradcheck.layers")) c.gradcheck.layers = parse_layers(*v);
  set_u("gradcheck.blocks", c.gradcheck.blocks);
  set_u("gradcheck.batch", c.gradcheck.batch);
  set_u("gradcheck.instances", c.gradcheck.instances);
  set_d("gradcheck.step", c.gradcheck.step);

  set_s("output.dir", c.output_dir);
  r.check_all_used();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return run_config_from(parse_key_values(text.str()));
}

/// Every setting, one per line, in a form run_config_from accepts.
inline std::string format_run_config(const RunConfig& c) {
  using cfg::join;
  using cfg::num;
  std::ostringstream out;
  auto kv = [&out](const std::string& key, const std::string& value) { out << key << " = \"" << value << "\"\n"; };
  kv("seed", std::to_string(c.seed));
  kv("model.layers", format_layers(c.model.layers));
  kv("model.blocks", std::to_string(c.model.blocks));
  kv("model.boundaries", c.model.boundaries.empty() ? "auto" : join(c.model.boundaries));
  kv("pipeline.p", join(c.pipeline.p));
  kv("pipeline.m", join(c.pipeline.m));
  kv("pipeline.warmup", c.pipeline.warmup == WarmupPolicy::faithful_zero_updates ? "faithful" : "discard");
  kv("pipeline.overlap", c.pipeline.overlap ? "true" : "false");
  kv("optimizer.rule", c.optimizer.rule == OptimizerRule::sgd ? "sgd" : "sum");
  kv("optimizer.beta", num(c.optimizer.beta));
  kv("optimizer.s", num(c.optimizer.s));
  kv("optimizer.lr", num(c.optimizer.schedule.base));
  kv("optimizer.lr_decay_steps", cfg::format_decays(c.optimizer.schedule.decays));
  kv("optimizer.lr_decay_epochs", cfg::format_decays(c.lr_decay_epochs));
  kv("optimizer.weight_decay", num(c.optimizer.weight_decay));
  kv("data.source", c.data.source);
  kv("data.dims", join(c.data.synthetic.dims));
  kv("data.samples", std::to_string(c.data.synthetic.samples));
  kv("data.seed", std::to_string(c.data.synthetic.seed));
  kv("data.hidden", std::string(to_string(c.data.synthetic.hidden)));
  kv("data.test_samples", std::to_string(c.data.test_samples));
  kv("data.idx_images", c.data.idx_images);
  kv("data.idx_labels", c.data.idx_labels);
  kv("data.idx_test_images", c.data.idx_test_images);
  kv("data.idx_test_labels", c.data.idx_test_labels);
  kv("data.standardize", c.data.standardize ? "true" : "false");
  if (c.data.standardization) {
    kv("data.mean", num(c.data.standardization->mean));
    kv("data.stddev", num(c.data.standardization->stddev));
  }
  kv("train.backend", std::string(to_string(c.train.backend)));
  kv("train.epochs", std::to_string(c.train.epochs));
  if (c.train.steps) kv("train.steps", std::to_string(*c.train.steps));
  kv("train.batch_size", std::to_string(c.train.batch_size));
  kv("train.loss", std::string(to_string(c.train.loss)));
  kv("train.deviation_every", std::to_string(c.train.deviation_every));
  kv("train.straggler_probability", num(c.train.straggler_probability));
  kv("train.straggler_max_delay_us", std::to_string(c.train.straggler_max_delay_us));
  kv("sim.forward", join(c.sim.forward));
  kv("sim.backward", join(c.sim.backward));
  kv("sim.overlap", c.sim.overlap ? "true" : "false");
  kv("sim.comm", num(c.sim.comm));
  kv("sim.steps", std::to_string(c.sim.steps));
  kv("sim.slowdowns", join(c.sim.slowdowns));
  kv("sim.seeds", std::to_string(c.sim.seeds));
  kv("sim.straggler_probability", num(c.sim.straggler_probability));
  kv("sim.write_trace", c.sim.write_trace ? "true" : "false");
  kv("gradcheck.layers", format_layers(c.gradcheck.layers));
  kv("gradcheck.blocks", std::to_string(c.gradcheck.blocks));
  kv("gradcheck.batch", std::to_string(c.gradcheck.batch));
  kv("gradcheck.instances", std::to_string(c.gradcheck.instances));
  kv("gradcheck.step", num(c.gradcheck.step));
  kv("output.dir", c.output_dir);
  return out.str();
}

}  // namespace dsp
