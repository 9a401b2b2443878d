// SPDX-License-Identifier: Apache-2.0
// dsp: train, simulate, gradcheck and validate block-parallel runs.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsp/commands.hpp"
#include "dsp/config.hpp"
#include "dsp/errors.hpp"

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return 1;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend;
  std::vector<std::string> overrides;  // key=value
};

dsp::RunConfig resolve(const Options& opt) {
  dsp::KeyValues kv;
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) throw dsp::IoError("cannot open config file " + opt.config_path);
    std::ostringstream text;
    text << in.rdbuf();
    kv = dsp::parse_key_values(text.str());
  }
  for (const auto& item : opt.overrides) {
    const auto parsed = dsp::parse_key_values(item);
    if (parsed.empty()) throw dsp::ConfigError("override '" + item + "' is not key=value");
    for (const auto& [k, v] : parsed) kv[k] = v;
  }
  if (opt.seed) kv["seed"] = std::to_string(*opt.seed);
  if (opt.out) kv["output.dir"] = *opt.out;
  if (opt.backend) kv["train.backend"] = *opt.backend;
  return dsp::run_config_from(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-parallel training with diversely stale parameters"};
  app.require_subcommand(1);

  Options opt;
  auto add_common = [&opt](CLI::App* cmd) {
    cmd->add_option("--config", opt.config_path, "Run config (flat dotted-key text)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "Master seed");
    cmd->add_option("--out", opt.out, "Output directory");
    cmd->add_option("overrides", opt.overrides, "Extra key=value settings");
  };

  auto* train = app.add_subcommand("train", "Train and write train_log.jsonl, summary.csv, resolved_config.txt");
  add_common(train);
  train->add_option("--backend", opt.backend, "serial | parallel | bp")
      ->check(CLI::IsMember({"serial", "parallel", "bp"}));
  auto* simulate = app.add_subcommand("simulate", "Discrete-event schedule simulation");
  add_common(simulate);
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_common(gradcheck);
  auto* validate = app.add_subcommand("validate", "Check a queue configuration");
  add_common(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what());
  }

  try {
    const dsp::RunConfig config = resolve(opt);
    if (*train) return dsp::cmd_train(config, std::cout);
    if (*simulate) return dsp::cmd_simulate(config, std::cout);
    if (*gradcheck) return dsp::cmd_gradcheck(config, std::cout);
    return dsp::cmd_validate(config, std::cout);
  } catch (const dsp::ConstraintError& e) {
    return fail(e.kind(), e.constraint() + " at block " + std::to_string(e.block()) + ": " + e.what());
  } catch (const dsp::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
}
