// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "dsp/run_io.hpp"

namespace dsp {
namespace {

TEST(TrainLogIo, RoundTripsExactly) {
  TrainLog log;
  log.records.push_back({0, 2, -3, 0.1 + 0.2, 1.0 / 3.0, std::nullopt, 12});
  log.records.push_back({5, 0, 1, std::nullopt, 2.5e-300, 7e-9, 99});
  std::stringstream io;
  write_train_log(io, log);
  const TrainLog back = read_train_log(io);
  EXPECT_TRUE(back.same_trajectory(log));
  EXPECT_EQ(back.records[1].wall_nanos, 99);
}

TEST(TrainLogIo, RejectsBadLines) {
  std::istringstream garbage("{not json}\n");
  EXPECT_THROW(read_train_log(garbage), IoError);
  std::istringstream old_schema(R"({"schema_version":0,"step":0})" "\n");
  EXPECT_THROW(read_train_log(old_schema), IoError);
}

TEST(SummaryCsv, HeaderAndEmptyCells) {
  std::ostringstream out;
  write_summary_csv(out, {SummaryRow{1, 0.5, std::nullopt, 0.75, std::nullopt, 2.0},
                          SummaryRow{2, 0.25, 0.5, 0.5, 1.0, 3.0}});
  std::istringstream in(out.str());
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, kSummaryHeader);
  EXPECT_EQ(a, "1,1,0.5,,0.75,,2");
  EXPECT_EQ(b, "1,2,0.25,0.5,0.5,1,3");
}

}  // namespace
}  // namespace dsp
