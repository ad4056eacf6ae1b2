// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"
#include "clmoe/metrics.hpp"

namespace clmoe {
namespace {

PerformanceMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  PerformanceMatrix m(rows.size());
  for (const auto& r : rows) m.append_row(r);
  return m;
}

PerformanceMatrix random_matrix(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 100.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  PerformanceMatrix m(n);
  for (std::size_t a = 1; a <= n; ++a) {
    std::vector<double> row(a);
    for (auto& v : row) v = u(rng);
    m.append_row(row);
  }
  return m;
}

TEST(Metrics, WorkedExamples) {
  const auto m = from_rows({{50}, {40, 60}, {30, 50, 70}});
  EXPECT_DOUBLE_EQ(compute_ap(m), 50.0);
  EXPECT_DOUBLE_EQ(*compute_af(m).value, 15.0);
  EXPECT_DOUBLE_EQ(compute_ap(from_rows({{42}})), 42.0);
  const auto single = compute_af(from_rows({{42}}));
  EXPECT_FALSE(single.value);
  EXPECT_FALSE(single.note.empty());
}

TEST(Metrics, NoForgettingAndBackwardTransfer) {
  EXPECT_DOUBLE_EQ(*compute_af(from_rows({{50}, {55, 60}, {50, 60, 70}})).value, 0.0);
  EXPECT_LT(*compute_af(from_rows({{50}, {55, 60}, {52, 61, 70}})).value, 0.0);
}

TEST(Metrics, StoredFinalRowReproducesReportedAverage) {
  const auto doc = nlohmann::json::parse(read_file(std::filesystem::path(CLMOE_TEST_DATA_DIR) / "reference_final_row.json"));
  const auto m = matrix_from_json(doc);
  EXPECT_EQ(m.n_tasks(), 10u);
  EXPECT_EQ(fmt::format("{:.2f}", compute_ap(m)), fmt::format("{:.2f}", doc.at("reported_ap").get<double>()));
  EXPECT_FALSE(compute_af(m).value);
}

TEST(Metrics, IncompleteMatrixIsAUsageError) {
  PerformanceMatrix m(3);
  m.append_row({10});
  EXPECT_THROW(compute_ap(m), UsageError);
  EXPECT_THROW(compute_af(m), UsageError);
  EXPECT_THROW(m.append_row({1, 2, 3}), UsageError);
  EXPECT_THROW(static_cast<void>(m.at(1, 2)), UsageError);
  EXPECT_THROW(m.append_row({1, 101}), ValidationError);
}

TEST(Metrics, BoundsShiftAndRecomputeProperties) {
  std::mt19937_64 rng(5);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + static_cast<std::size_t>(c % 9);
    const auto m = random_matrix(n, rng, 10.0, 90.0);
    const auto& last = m.final_row();
    const double ap = compute_ap(m);
    EXPECT_GE(ap, *std::min_element(last.begin(), last.end()));
    EXPECT_LE(ap, *std::max_element(last.begin(), last.end()));

    const double shift = std::uniform_real_distribution<double>(-10.0, 10.0)(rng);
    PerformanceMatrix shifted(n);
    for (auto row : m.data()) {
      for (auto& v : row) v += shift;
      shifted.append_row(row);
    }
    EXPECT_NEAR(*compute_af(shifted).value, *compute_af(m).value, 1e-9);
    EXPECT_NEAR(compute_ap(shifted), ap + shift, 1e-9);

    RunReport r;
    r.mode = "full";
    r.matrix = m;
    const auto back = matrix_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_NEAR(compute_ap(back), ap, 1e-9);
    EXPECT_NEAR(*compute_af(back).value, *compute_af(m).value, 1e-9);
  }
}

TEST(Metrics, ReportFieldsMatchComputation) {
  std::mt19937_64 rng(6);
  RunReport r;
  r.mode = "vanilla";
  r.seed = 3;
  r.matrix = random_matrix(4, rng);
  const auto j = to_json(r);
  for (const char* key : {"config", "mode", "seed", "matrix", "per_task_final", "ap", "af", "diag_pre_merge",
                          "diag_post_merge", "runtime_seconds"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.at("ap").get<double>(), compute_ap(r.matrix));
  EXPECT_EQ(j.at("af").get<double>(), *compute_af(r.matrix).value);
  r.matrix = from_rows({{42}});
  EXPECT_TRUE(to_json(r).at("af").is_null());
}

TEST(Metrics, PlotDataIsTheTransposedMatrix) {
  std::mt19937_64 rng(7);
  const auto m = random_matrix(5, rng);
  std::istringstream in(format_plot_csv(m));
  std::string line;
  std::getline(in, line);
  for (std::size_t b = 1; b <= 5; ++b) {
    ASSERT_TRUE(std::getline(in, line));
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    cells.resize(6);
    EXPECT_EQ(cells[0], std::to_string(b));
    for (std::size_t a = 1; a <= 5; ++a) {
      if (b <= a) {
        EXPECT_EQ(std::stod(cells[a]), m.at(a, b));
      } else {
        EXPECT_TRUE(cells[a].empty());
      }
    }
  }
}

TEST(Metrics, ReportsAreByteIdenticalModuloRuntime) {
  std::mt19937_64 rng(8);
  RunReport r;
  r.mode = "full";
  r.matrix = random_matrix(3, rng);
  r.diag_pre_merge = {1, 2, 3};
  r.diag_post_merge = {1, 2, 3};
  const auto base = std::filesystem::temp_directory_path() / fmt::format("clmoe_report_{}", ::getpid());
  r.runtime_seconds = 1.0;
  emit_report(r, base / "a");
  r.runtime_seconds = 2.0;
  emit_report(r, base / "b");
  for (const char* f : {"metrics.txt", "accuracy_curve.csv"}) EXPECT_EQ(read_file(base / "a" / f), read_file(base / "b" / f));
  auto ja = nlohmann::json::parse(read_file(base / "a" / "metrics.json"));
  auto jb = nlohmann::json::parse(read_file(base / "b" / "metrics.json"));
  ja.erase("runtime_seconds");
  jb.erase("runtime_seconds");
  EXPECT_EQ(ja.dump(), jb.dump());
  std::filesystem::remove_all(base);
}

TEST(Metrics, TableHasTwoDecimals) {
  RunReport r;
  r.mode = "full";
  r.matrix = from_rows({{50.2}, {40, 60}});
  const auto t = format_table(r);
  EXPECT_NE(t.find("AP: 50.00"), std::string::npos);
  EXPECT_NE(t.find("AF: 10.20"), std::string::npos);
}

}  // namespace
}  // namespace clmoe
