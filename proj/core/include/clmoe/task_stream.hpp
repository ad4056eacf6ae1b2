// SPDX-License-Identifier: Apache-2.0
//
// Synthetic continual-learning task streams and the text dataset format.
//
// Dataset file (UTF-8): the first line is
//   clmoe-dataset v1 <M> <feature_dim> <vocab_size>
// followed by one record per line, in any order:
//   task_id<TAB>split<TAB>label[,label...]<TAB>f1,f2,...,fd
// where split is "train" or "test".
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clmoe/linalg.hpp"

namespace clmoe {

/// Output token sequence O of one instance; L = tokens.size() >= 1.
struct TargetSequence {
  std::vector<int> tokens;

  bool operator==(const TargetSequence&) const = default;
};

struct Instance {
  std::uint64_t id = 0;
  Vector features;
  TargetSequence target;
  int true_task = 0;
  // Generator-only provenance; empty/-1 for loaded data.
  int subcluster = -1;
  Vector noise;
};

struct TaskData {
  int task_id = 0;
  std::vector<Instance> train;
  std::vector<Instance> test;
};

struct TaskStream {
  std::size_t feature_dim = 0;
  std::size_t vocab_size = 0;
  std::vector<TaskData> tasks;

  std::size_t n_tasks() const { return tasks.size(); }
  /// Common target length; throws ValidationError when lengths differ.
  std::size_t sequence_length() const;
  /// Checks dimensions, label ranges, and non-empty splits.
  void validate() const;
  /// Same tasks in the opposite training order (task ids are kept).
  TaskStream reversed() const;
};

struct SyntheticStreamSpec {
  std::size_t n_tasks = 5;
  std::size_t feature_dim = 32;
  std::size_t vocab_size = 20;
  std::size_t train_per_task = 2000;
  std::size_t test_per_task = 500;
  double cluster_separation = 5.2;
  double noise_sigma = 0.8;
  std::uint64_t seed = 0;

  std::size_t subclusters_per_task = 2;
  double subcluster_scale = 3.4;
  // Norm of the feature component shared by every task.
  double shared_scale = 0.0;
  // Blend between a stream-wide set of sub-cluster directions (1) and
  // per-task directions (0).
  double subcluster_sharing = 0.0;
  std::size_t sequence_length = 1;

  void validate() const;
  bool operator==(const SyntheticStreamSpec&) const = default;
};

TaskStream generate_stream(const SyntheticStreamSpec& spec);

nlohmann::json to_json(const SyntheticStreamSpec& spec);

/// Writes `<dir>/task_<t>.tsv` for every task plus `<dir>/manifest.json`.
/// `generator` is echoed into the manifest when not null.
void save_dataset(const TaskStream& stream, const std::filesystem::path& dir,
                  const nlohmann::json& generator = nullptr);
/// Writes every task into one file.
void save_dataset_file(const TaskStream& stream, const std::filesystem::path& file);

/// Loads a directory written by save_dataset or a single dataset file.
TaskStream load_dataset(const std::filesystem::path& path);
TaskStream parse_dataset(const std::string& text, const std::string& source_name);

}  // namespace clmoe
