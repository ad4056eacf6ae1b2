// SPDX-License-Identifier: Apache-2.0
//
// Test-time task identification: one mean feature ("anchor") per finished
// task and nearest-anchor lookup.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "clmoe/linalg.hpp"
#include "clmoe/task_stream.hpp"

namespace clmoe {

/// The frozen backbone F(x). By default the identity on the stored features;
/// optionally a fixed seeded Gaussian projection to `out_dim` dimensions.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::size_t in_dim) : in_dim_(in_dim) {}
  static FeatureExtractor projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const {
    return projection_ ? static_cast<std::size_t>(projection_->rows()) : in_dim_;
  }

  /// Throws ValidationError for a wrong dimension or non-finite features.
  Vector extract(const Instance& instance) const;
  std::vector<Vector> extract_batch(std::span<const Instance> instances) const;

 private:
  std::size_t in_dim_;
  std::optional<Matrix> projection_;  // out x in
};

/// Mean of `features`; compensated summation. Throws on an empty input.
Vector compute_anchor(std::span<const Vector> features);

class TaskAnchorStore {
 public:
  TaskAnchorStore() = default;
  explicit TaskAnchorStore(std::size_t feature_dim) : feature_dim_(feature_dim) {}

  /// Anchors must arrive for tasks 1, 2, ... in order (UsageError otherwise).
  void add(int task_id, Vector anchor);

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t size() const { return anchors_.size(); }
  bool empty() const { return anchors_.empty(); }
  /// Anchor of task `task_id` (1-based); ConsistencyError when missing.
  const Vector& anchor(int task_id) const;
  std::span<const Vector> anchors() const { return anchors_; }

  bool operator==(const TaskAnchorStore& other) const;

 private:
  std::size_t feature_dim_ = 0;
  std::vector<Vector> anchors_;
};

/// argmin_t ||feature - R_t||, ties to the lowest task id.
int infer_task(const TaskAnchorStore& store, const Vector& feature);

}  // namespace clmoe
