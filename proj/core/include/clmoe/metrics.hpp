// SPDX-License-Identifier: Apache-2.0
//
// Performance matrix m[a][b] (accuracy in percent on task b after training
// task a) and the two stream metrics derived from it:
//
//   AP = mean_i m[M][i]
//   AF = 1/(M-1) * sum_{i<M} (m[i][i] - m[M][i])
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace clmoe {

class PerformanceMatrix {
 public:
  PerformanceMatrix() = default;
  /// Sequential matrix for an M-task stream; rows are appended in task order.
  explicit PerformanceMatrix(std::size_t n_tasks) : n_tasks_(n_tasks) {}
  /// A single evaluation row over all tasks (joint training).
  static PerformanceMatrix joint(std::vector<double> row);

  /// Row a (1-based) must have exactly a entries, each in [0, 100].
  void append_row(std::vector<double> row);

  std::size_t n_tasks() const { return n_tasks_; }
  std::size_t rows() const { return rows_.size(); }
  bool is_joint() const { return joint_; }
  bool complete() const { return n_tasks_ > 0 && (joint_ || rows_.size() == n_tasks_); }
  const std::vector<std::vector<double>>& data() const { return rows_; }
  /// 1-based entry; UsageError when b > a or a is not yet recorded.
  double at(std::size_t a, std::size_t b) const;
  const std::vector<double>& final_row() const;
  /// m[i][i] for the rows recorded so far (empty for a joint matrix).
  std::vector<double> diagonal() const;

  bool operator==(const PerformanceMatrix&) const = default;

 private:
  std::size_t n_tasks_ = 0;
  bool joint_ = false;
  std::vector<std::vector<double>> rows_;
};

/// UsageError on an incomplete matrix.
double compute_ap(const PerformanceMatrix& m);

struct ForgettingResult {
  std::optional<double> value;
  std::string note;  // why the value is absent
};

/// Null for fewer than two tasks and for joint matrices.
ForgettingResult compute_af(const PerformanceMatrix& m);

struct RunReport {
  nlohmann::json config;
  std::string mode;
  std::uint64_t seed = 0;
  std::vector<int> task_order;  // dataset task ids in training order
  PerformanceMatrix matrix;
  std::vector<double> diag_pre_merge;
  std::vector<double> diag_post_merge;
  double runtime_seconds = 0.0;
};

nlohmann::json to_json(const RunReport& report);
/// Rebuilds the matrix from a metrics document (ValidationError if malformed).
PerformanceMatrix matrix_from_json(const nlohmann::json& metrics);

/// Plain-text table: one line per row of the matrix, then AP and AF, with
/// two decimals.
std::string format_table(const RunReport& report);

/// Figure-style series: one CSV line per task b giving its accuracy after
/// each stage a >= b (the matrix columns, transposed).
std::string format_plot_csv(const PerformanceMatrix& m);

/// Writes metrics.json, metrics.txt and accuracy_curve.csv into `dir`.
void emit_report(const RunReport& report, const std::filesystem::path& dir);

}  // namespace clmoe
