// SPDX-License-Identifier: Apache-2.0
#include "clmoe/routing_registry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "clmoe/error.hpp"

namespace clmoe {

void TaskWeightAccumulator::add(const RouterWeights& w) {
  if (w.size() != sum_.dim()) throw ValidationError("router weight length mismatch");
  sum_.add(w.values());
  ++count_;
}

RouterWeights TaskWeightAccumulator::mean() const {
  if (count_ == 0) throw ValidationError("cannot average an empty stream of router weights");
  Vector m = sum_.total() / static_cast<double>(count_);
  // The mean of simplex points is on the simplex; renormalise the rounding.
  m = m.cwiseMax(0.0);
  m /= m.sum();
  return RouterWeights(std::move(m));
}

RouterWeights compute_task_weights(std::span<const RouterWeights> instance_weights) {
  if (instance_weights.empty()) {
    throw ValidationError("cannot average an empty stream of router weights");
  }
  TaskWeightAccumulator acc(instance_weights.front().size());
  for (const auto& w : instance_weights) acc.add(w);
  return acc.mean();
}

std::vector<std::size_t> select_top_k(const RouterWeights& w_task, std::size_t k) {
  const std::size_t n = w_task.size();
  if (k == 0 || k > n) {
    throw ValidationError(fmt::format("top-k requires 1 <= k <= {}, got {}", n, k));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return w_task[a] > w_task[b]; });
  idx.resize(k);
  return idx;
}

std::string_view to_string(ExpertClass c) {
  switch (c) {
    case ExpertClass::TaskShared: return "task-shared";
    case ExpertClass::TaskSpecific: return "task-specific";
    case ExpertClass::None: return "none";
  }
  return "none";
}

ExpertClass classify_expert(std::size_t expert, const ExpertSet& e_t, const ExpertSet& e_pre) {
  if (!e_t.contains(expert)) return ExpertClass::None;
  return e_pre.contains(expert) ? ExpertClass::TaskShared : ExpertClass::TaskSpecific;
}

void validate_gamma(double gamma) {
  if (!(gamma >= kMinGamma && gamma <= 1.0)) {
    throw ValidationError(fmt::format("gamma must lie in [0.5, 1], got {}", gamma));
  }
}

LambdaVector classify_and_build_lambda(const ExpertSet& e_t, const ExpertSet& e_pre,
                                       std::size_t n_experts, double gamma) {
  validate_gamma(gamma);
  for (auto i : e_t) {
    if (i >= n_experts) throw ValidationError(fmt::format("expert index {} out of range", i));
  }
  LambdaVector out{Vector(static_cast<Eigen::Index>(n_experts)), {}};
  out.classes.reserve(n_experts);
  for (std::size_t i = 0; i < n_experts; ++i) {
    const auto c = classify_expert(i, e_t, e_pre);
    out.classes.push_back(c);
    out.lambdas[static_cast<Eigen::Index>(i)] = (c == ExpertClass::TaskSpecific) ? 1.0 - gamma : gamma;
  }
  return out;
}

void TaskExpertRegistry::update(TaskExpertRecord record) {
  if (record.task_id != last_task_id() + 1) {
    throw UsageError(fmt::format("registry expects task {}, got task {}", last_task_id() + 1,
                                 record.task_id));
  }
  if (record.task_weights.size() != n_layers_ || record.top_k.size() != n_layers_) {
    throw ValidationError(fmt::format("task record covers {} layers, registry has {}",
                                      record.task_weights.size(), n_layers_));
  }
  for (std::size_t l = 0; l < n_layers_; ++l) {
    const auto expected = select_top_k(record.task_weights[l], record.top_k[l].size());
    if (expected != record.top_k[l]) {
      throw ValidationError(fmt::format("top-k set of layer {} does not match its task weights", l));
    }
  }
  records_.push_back(std::move(record));
}

const TaskExpertRecord& TaskExpertRegistry::record(int task_id) const {
  if (task_id < 1 || task_id > last_task_id()) {
    throw ConsistencyError(fmt::format("no routing record for task {}", task_id));
  }
  return records_[static_cast<std::size_t>(task_id - 1)];
}

ExpertSet TaskExpertRegistry::previous_experts(std::size_t layer) const {
  ExpertSet out;
  for (const auto& r : records_) out.insert(r.top_k.at(layer).begin(), r.top_k.at(layer).end());
  return out;
}

bool TaskExpertRegistry::operator==(const TaskExpertRegistry& other) const {
  if (n_layers_ != other.n_layers_ || records_.size() != other.records_.size()) return false;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& a = records_[i];
    const auto& b = other.records_[i];
    if (a.task_id != b.task_id || a.top_k != b.top_k) return false;
    for (std::size_t l = 0; l < n_layers_; ++l) {
      if (a.task_weights[l].values() != b.task_weights[l].values()) return false;
    }
  }
  return true;
}

}  // namespace clmoe
