// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsp/errors.hpp"
#include "dsp/pipeline.hpp"

namespace dsp {

// Bumped whenever a JSONL field or CSV column changes meaning.
inline constexpr int kSchemaVersion = 1;

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["step"] = r.step;
  j["block"] = r.block;
  j["batch_index"] = r.batch_index;
  j["loss"] = r.loss ? nlohmann::json(*r.loss) : nlohmann::json(nullptr);
  j["grad_norm"] = r.grad_norm;
  j["grad_deviation"] = r.grad_deviation ? nlohmann::json(*r.grad_deviation) : nlohmann::json(nullptr);
  j["wall_nanos"] = r.wall_nanos;
  return j;
}

inline StepRecord step_record_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion) {
    throw IoError("train log record has an unsupported schema_version");
  }
  StepRecord r;
  r.step = j.at("step").get<std::size_t>();
  r.block = j.at("block").get<std::size_t>();
  r.batch_index = j.at("batch_index").get<std::int64_t>();
  if (!j.at("loss").is_null()) r.loss = j.at("loss").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  if (!j.at("grad_deviation").is_null()) r.grad_deviation = j.at("grad_deviation").get<double>();
  r.wall_nanos = j.at("wall_nanos").get<std::int64_t>();
  return r;
}

/// One JSON object per (step, block) record. Doubles are written with
/// round-trip precision.
inline void write_train_log(std::ostream& out, const TrainLog& log) {
  for (const auto& r : log.records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing train log");
}

inline TrainLog read_train_log(std::istream& in) {
  TrainLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      log.records.push_back(step_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("train log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

struct SummaryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> train_accuracy;
  double test_loss = 0.0;
  std::optional<double> test_accuracy;
  double wall_seconds = 0.0;
};

inline constexpr const char* kSummaryHeader =
    "schema_version,epoch,train_loss,train_accuracy,test_loss,test_accuracy,wall_seconds";

/// Empty cells stand for metrics that do not apply (accuracy under a
/// regression loss).
inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  const auto old_precision = out.precision(17);
  auto cell = [&out](const std::optional<double>& v) {
    if (v) out << *v;
  };
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << kSchemaVersion << ',' << r.epoch << ',' << r.train_loss << ',';
    cell(r.train_accuracy);
    out << ',' << r.test_loss << ',';
    cell(r.test_accuracy);
    out << ',' << r.wall_seconds << '\n';
  }
  out.precision(old_precision);
  if (!out) throw IoError("failed writing summary csv");
}

}  // namespace dsp
