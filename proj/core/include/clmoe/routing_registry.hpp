// SPDX-License-Identifier: Apache-2.0
//
// Task-level routing bookkeeping: the dataset-mean of instance router outputs
// (w^T), the top-K experts of each finished task, and the per-expert momentum
// coefficients derived from them.
#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "clmoe/linalg.hpp"
#include "clmoe/moe_adapter.hpp"

namespace clmoe {

using ExpertSet = std::set<std::size_t>;

/// Streaming mean of router outputs with compensated summation.
class TaskWeightAccumulator {
 public:
  explicit TaskWeightAccumulator(std::size_t n_experts) : sum_(n_experts) {}

  void add(const RouterWeights& w);
  std::size_t count() const { return count_; }
  /// Throws ValidationError when nothing was added.
  RouterWeights mean() const;

 private:
  CompensatedSum sum_;
  std::size_t count_ = 0;
};

/// (1 / N) * sum of the instance weights.
RouterWeights compute_task_weights(std::span<const RouterWeights> instance_weights);

/// Indices of the k largest weights, by descending weight, ties to the lower index.
std::vector<std::size_t> select_top_k(const RouterWeights& w_task, std::size_t k);

enum class ExpertClass { TaskShared, TaskSpecific, None };

std::string_view to_string(ExpertClass c);

ExpertClass classify_expert(std::size_t expert, const ExpertSet& e_t, const ExpertSet& e_pre);

struct LambdaVector {
  Vector lambdas;
  std::vector<ExpertClass> classes;
};

/// Smallest accepted momentum coefficient. The lower end is closed so that a
/// sweep can include the plain-average point.
inline constexpr double kMinGamma = 0.5;

void validate_gamma(double gamma);

/// lambda_i = gamma for shared and unused experts, 1 - gamma for task-specific.
LambdaVector classify_and_build_lambda(const ExpertSet& e_t, const ExpertSet& e_pre,
                                       std::size_t n_experts, double gamma);

struct TaskExpertRecord {
  int task_id = 0;
  std::vector<RouterWeights> task_weights;       // per layer
  std::vector<std::vector<std::size_t>> top_k;   // per layer, ordered
};

class TaskExpertRegistry {
 public:
  TaskExpertRegistry() = default;
  explicit TaskExpertRegistry(std::size_t n_layers) : n_layers_(n_layers) {}

  /// Appends `record`; its task_id must be last_task_id() + 1 (UsageError
  /// otherwise). Top-K sets must agree with the stored weights.
  void update(TaskExpertRecord record);

  std::size_t n_layers() const { return n_layers_; }
  int last_task_id() const { return records_.empty() ? 0 : records_.back().task_id; }
  std::span<const TaskExpertRecord> records() const { return records_; }
  const TaskExpertRecord& record(int task_id) const;

  /// Union of the top-K sets of every recorded task for `layer`.
  ExpertSet previous_experts(std::size_t layer) const;

  bool operator==(const TaskExpertRegistry& other) const;

 private:
  std::size_t n_layers_ = 0;
  std::vector<TaskExpertRecord> records_;
};

}  // namespace clmoe
