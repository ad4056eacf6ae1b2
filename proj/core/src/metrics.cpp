// SPDX-License-Identifier: Apache-2.0
#include "clmoe/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"

namespace clmoe {
namespace {

void check_entries(const std::vector<double>& row) {
  for (double v : row) {
    if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
      throw ValidationError(fmt::format("accuracy {} outside [0, 100]", v));
    }
  }
}

// Summing in sorted order makes the mean independent of task order.
double order_free_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

PerformanceMatrix PerformanceMatrix::joint(std::vector<double> row) {
  if (row.empty()) throw ValidationError("joint evaluation row is empty");
  check_entries(row);
  PerformanceMatrix m(row.size());
  m.joint_ = true;
  m.rows_.push_back(std::move(row));
  return m;
}

void PerformanceMatrix::append_row(std::vector<double> row) {
  if (joint_) throw UsageError("cannot append to a joint evaluation matrix");
  if (rows_.size() >= n_tasks_) throw UsageError("performance matrix already has all rows");
  if (row.size() != rows_.size() + 1) {
    throw UsageError(fmt::format("row {} must have {} entries, got {}", rows_.size() + 1, rows_.size() + 1,
                                 row.size()));
  }
  check_entries(row);
  rows_.push_back(std::move(row));
}

double PerformanceMatrix::at(std::size_t a, std::size_t b) const {
  if (a < 1 || a > rows_.size() || b < 1 || b > rows_[a - 1].size()) {
    throw UsageError(fmt::format("matrix entry ({}, {}) is not defined", a, b));
  }
  return rows_[a - 1][b - 1];
}

const std::vector<double>& PerformanceMatrix::final_row() const {
  if (!complete()) throw UsageError("performance matrix is incomplete");
  return rows_.back();
}

std::vector<double> PerformanceMatrix::diagonal() const {
  std::vector<double> d;
  if (joint_) return d;
  for (std::size_t a = 0; a < rows_.size(); ++a) d.push_back(rows_[a][a]);
  return d;
}

double compute_ap(const PerformanceMatrix& m) { return order_free_mean(m.final_row()); }

ForgettingResult compute_af(const PerformanceMatrix& m) {
  const auto& last = m.final_row();
  if (m.is_joint()) return {std::nullopt, "joint training has no per-task history"};
  if (m.n_tasks() < 2) return {std::nullopt, "forgetting needs at least two tasks"};
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < m.n_tasks(); ++i) s += m.data()[i][i] - last[i];
  return {s / static_cast<double>(m.n_tasks() - 1), ""};
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = r.config;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["task_order"] = r.task_order;
  j["joint"] = r.matrix.is_joint();
  j["matrix"] = r.matrix.data();
  j["per_task_final"] = r.matrix.final_row();
  j["ap"] = compute_ap(r.matrix);
  const auto af = compute_af(r.matrix);
  j["af"] = af.value ? nlohmann::json(*af.value) : nlohmann::json(nullptr);
  if (!af.value) j["af_note"] = af.note;
  j["diag_pre_merge"] = r.diag_pre_merge;
  j["diag_post_merge"] = r.diag_post_merge;
  j["af_diagonal"] = "post_merge";
  j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

PerformanceMatrix matrix_from_json(const nlohmann::json& metrics) {
  try {
    auto rows = metrics.at("matrix").get<std::vector<std::vector<double>>>();
    if (metrics.value("joint", false)) {
      if (rows.size() != 1) throw ValidationError("joint metrics must hold exactly one row");
      return PerformanceMatrix::joint(rows.front());
    }
    PerformanceMatrix m(rows.size());
    for (auto& row : rows) m.append_row(std::move(row));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed metrics document: {}", e.what()));
  } catch (const UsageError& e) {
    throw ValidationError(fmt::format("malformed metrics matrix: {}", e.what()));
  }
}

std::string format_table(const RunReport& r) {
  const auto& m = r.matrix;
  std::string out = fmt::format("mode: {}  seed: {}\n", r.mode, r.seed);
  std::string header = fmt::format("{:<8}", "after");
  for (std::size_t b = 0; b < m.n_tasks(); ++b) {
    const int id = b < r.task_order.size() ? r.task_order[b] : static_cast<int>(b + 1);
    header += fmt::format("{:>9}", fmt::format("task{}", id));
  }
  out += header + "\n";
  for (std::size_t a = 0; a < m.rows(); ++a) {
    std::string line = m.is_joint() ? fmt::format("{:<8}", "joint") : fmt::format("{:<8}", a + 1);
    for (double v : m.data()[a]) line += fmt::format("{:>9.2f}", v);
    out += line + "\n";
  }
  out += fmt::format("AP: {:.2f}\n", compute_ap(m));
  const auto af = compute_af(m);
  out += af.value ? fmt::format("AF: {:.2f}\n", *af.value) : fmt::format("AF: n/a ({})\n", af.note);
  return out;
}

std::string format_plot_csv(const PerformanceMatrix& m) {
  std::string out = "task";
  for (std::size_t a = 1; a <= m.rows(); ++a) out += fmt::format(",after_{}", a);
  out += "\n";
  for (std::size_t b = 1; b <= m.n_tasks(); ++b) {
    out += fmt::format("{}", b);
    for (std::size_t a = 1; a <= m.rows(); ++a) {
      if (m.is_joint() || b <= a) {
        out += fmt::format(",{}", m.is_joint() ? m.data()[0][b - 1] : m.at(a, b));
      } else {
        out += ",";
      }
    }
    out += "\n";
  }
  return out;
}

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
  ensure_directory(dir);
  write_file_atomic(dir / "metrics.json", to_json(report).dump(2) + "\n");
  write_file_atomic(dir / "metrics.txt", format_table(report));
  write_file_atomic(dir / "accuracy_curve.csv", format_plot_csv(report.matrix));
}

}  // namespace clmoe
