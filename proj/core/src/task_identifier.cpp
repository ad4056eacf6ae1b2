// SPDX-License-Identifier: Apache-2.0
#include "clmoe/task_identifier.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "clmoe/error.hpp"
#include "clmoe/seed.hpp"

namespace clmoe {

FeatureExtractor FeatureExtractor::projection(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  if (in_dim == 0 || out_dim == 0) throw ValidationError("projection dimensions must be positive");
  FeatureExtractor f(in_dim);
  Rng rng = make_rng(seed, "backbone-projection");
  std::normal_distribution<double> n01(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  Matrix p(static_cast<Eigen::Index>(out_dim), static_cast<Eigen::Index>(in_dim));
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, c) = n01(rng);
  }
  f.projection_ = std::move(p);
  return f;
}

Vector FeatureExtractor::extract(const Instance& instance) const {
  require_size(instance.features, in_dim_, "instance features");
  require_finite(instance.features, "instance features");
  if (projection_) return *projection_ * instance.features;
  return instance.features;
}

std::vector<Vector> FeatureExtractor::extract_batch(std::span<const Instance> instances) const {
  std::vector<Vector> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(extract(inst));
  return out;
}

Vector compute_anchor(std::span<const Vector> features) {
  if (features.empty()) throw ValidationError("cannot compute an anchor from no features");
  const auto dim = static_cast<std::size_t>(features.front().size());
  CompensatedSum sum(dim);
  for (const auto& f : features) {
    require_size(f, dim, "anchor feature");
    sum.add(f);
  }
  return sum.total() / static_cast<double>(features.size());
}

void TaskAnchorStore::add(int task_id, Vector anchor) {
  if (task_id != static_cast<int>(anchors_.size()) + 1) {
    throw UsageError(fmt::format("anchor for task {} added out of order (expected task {})", task_id,
                                 anchors_.size() + 1));
  }
  if (feature_dim_ == 0) feature_dim_ = static_cast<std::size_t>(anchor.size());
  require_size(anchor, feature_dim_, "task anchor");
  require_finite(anchor, "task anchor");
  anchors_.push_back(std::move(anchor));
}

const Vector& TaskAnchorStore::anchor(int task_id) const {
  if (task_id < 1 || static_cast<std::size_t>(task_id) > anchors_.size()) {
    throw ConsistencyError(fmt::format("no anchor stored for task {}", task_id));
  }
  return anchors_[static_cast<std::size_t>(task_id) - 1];
}

bool TaskAnchorStore::operator==(const TaskAnchorStore& other) const {
  if (feature_dim_ != other.feature_dim_ || anchors_.size() != other.anchors_.size()) return false;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (anchors_[i] != other.anchors_[i]) return false;
  }
  return true;
}

int infer_task(const TaskAnchorStore& store, const Vector& feature) {
  if (store.empty()) throw ConsistencyError("task inference needs at least one anchor");
  require_size(feature, store.feature_dim(), "query feature");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const auto anchors = store.anchors();
  for (std::size_t t = 0; t < anchors.size(); ++t) {
    const double d = (feature - anchors[t]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(t) + 1;
    }
  }
  if (best == 0) throw NumericalError("task inference produced no finite distance");
  return best;
}

}  // namespace clmoe
