// SPDX-License-Identifier: Apache-2.0
//
// The sequential protocol. For each task t of the stream:
//   1. phi_t starts as a copy of theta_{t-1} and is trained with instance
//      routing only (the gate keeps training across tasks);
//   2. w^T, E_t and lambda are computed with the post-training router, and
//      theta_t = lambda * theta_{t-1} + (1 - lambda) * phi_t;
//   3. the task anchor is stored and every seen task is evaluated.
// Ablation modes drop the merge (RMoEOnly), the task router (MMoEOnly) or
// both (Vanilla). Multitask trains once on the shuffled union.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "clmoe/adapter_stack.hpp"
#include "clmoe/metrics.hpp"
#include "clmoe/momentum_merge.hpp"
#include "clmoe/routing_registry.hpp"
#include "clmoe/task_identifier.hpp"
#include "clmoe/task_stream.hpp"

namespace clmoe {

enum class TrainMode { Vanilla, MMoEOnly, RMoEOnly, Full, Multitask };

/// Accepts vanilla, mmoe, rmoe, full, multitask (ValidationError otherwise).
TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(TrainMode mode);
inline bool uses_merge(TrainMode m) { return m == TrainMode::MMoEOnly || m == TrainMode::Full; }
inline bool uses_task_router(TrainMode m) { return m == TrainMode::RMoEOnly || m == TrainMode::Full; }

enum class LrSchedule { Cosine, Constant };
// SGD uses heavy-ball momentum 0.9; both apply weight decay decoupled.
enum class Optimizer { AdamW, Sgd };
/// Accepts adamw or sgd (ValidationError otherwise).
Optimizer parse_optimizer(std::string_view name);
std::string_view to_string(Optimizer o);

struct TrainConfig {
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t rank = 16;
  double alpha = 32.0;
  double gamma = 0.7;
  double beta = 0.5;
  std::size_t epochs_per_task = 3;
  std::size_t batch_size = 16;
  double learning_rate = 0.025;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  Optimizer optimizer = Optimizer::AdamW;
  double weight_decay = 0.0;
  // Router learning rate relative to the experts.
  double gate_lr_scale = 0.3;
  std::uint64_t seed = 0;

  double a_init_range = 1.0;
  double gate_init_std = 0.2;
  // Frozen base weight of the output layer, N(0, std^2). Hidden layers use
  // N(0, 1/in) so that signal reaches the experts above them.
  double base_init_std = 0.0;
  std::size_t adapter_layers = 1;
  std::size_t hidden_dim = 32;
  // 0 keeps the identity backbone; otherwise a fixed random projection.
  std::size_t projection_dim = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Counts floored target probabilities over a run.
struct LossDiagnostics {
  std::size_t floored_tokens = 0;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -sum_j log p_j(O_j) over the L x vocab rows of `probs`. Rows must lie on
/// the simplex within 1e-6. Probabilities below the floor are clamped and
/// counted in `diag`.
double sequence_loss(const Matrix& probs, const TargetSequence& target, LossDiagnostics* diag = nullptr);

/// Row-wise softmax of the flat logits reshaped to L x vocab.
Matrix sequence_probabilities(const Vector& logits, std::size_t length, std::size_t vocab);
/// Per-position argmax of the flat logits, ties to the lower label.
std::vector<int> decode(const Vector& logits, std::size_t length, std::size_t vocab);

/// Everything carried from task to task (and stored in checkpoints).
struct ContinualState {
  TrainConfig config;
  TrainMode mode = TrainMode::Full;
  std::size_t feature_dim = 0;
  std::size_t vocab_size = 0;
  std::size_t sequence_length = 1;
  std::size_t n_tasks = 0;  // stream length

  AdapterStack stack;  // consolidated theta_t and the gate Psi
  TaskExpertRegistry registry;
  TaskAnchorStore anchors;
  std::vector<int> task_order;  // dataset ids of the completed stages
  PerformanceMatrix matrix;
  std::vector<double> diag_pre_merge;
  std::vector<double> diag_post_merge;
  LossDiagnostics loss_diagnostics;

  std::size_t completed() const { return task_order.size(); }
  FeatureExtractor extractor() const;
};

/// Fresh state for a stream with the given shape.
ContinualState initial_state(const TrainConfig& config, TrainMode mode, const TaskStream& stream);

struct TrainTaskStats {
  double initial_loss = 0.0;           // mean loss before the first update
  std::vector<double> epoch_loss;      // mean loss over each epoch
};

/// Trains a copy of `theta` on `train` with instance routing and returns it.
/// `stage` (1-based) selects the shuffling seed. NumericalError on a
/// non-finite loss or parameter.
AdapterStack train_task(const AdapterStack& theta, std::span<const Instance> train, const TrainConfig& config,
                        std::size_t stage, std::size_t sequence_length, std::size_t vocab,
                        TrainTaskStats* stats = nullptr, LossDiagnostics* diag = nullptr);

/// Per-layer dataset-mean of the instance router outputs under `stack`.
std::vector<RouterWeights> task_level_weights(const AdapterStack& stack, std::span<const Instance> train);

struct FinishResult {
  TaskExpertRecord record;
  std::vector<LambdaVector> lambdas;  // per layer
  bool merged = false;
};

/// Consolidates phi_t into `state` for the next stage: registry record,
/// lambda, merge (when the mode uses it), and anchor.
FinishResult finish_task(ContinualState& state, const AdapterStack& phi, const TaskData& task);

struct EvalOptions {
  bool oracle_task_id = false;
  std::size_t threads = 0;  // 0: CLMOE_THREADS or the hardware count
};

struct EvalResult {
  std::vector<double> accuracy;                   // percent, per stage
  std::vector<std::vector<std::size_t>> confusion;  // [true stage][inferred stage], 0-based
  double task_id_accuracy = 0.0;                  // fraction, over all evaluated instances
};

/// Evaluates `tasks[0..]` (in stage order) against the consolidated state.
/// Task routing (when the mode has it) uses the inferred stage, or the true
/// one under `oracle_task_id`.
EvalResult evaluate(const ContinualState& state, std::span<const TaskData> tasks, const EvalOptions& opts = {});

/// Accuracy in percent of `stack` with instance routing only.
double instance_accuracy(const AdapterStack& stack, std::span<const Instance> data, std::size_t sequence_length,
                         std::size_t vocab);

std::size_t evaluation_threads();

struct RunOptions {
  // Called after every completed stage with the durable state.
  std::function<void(const ContinualState&)> on_stage;
  std::optional<std::size_t> stop_after;  // stop once this many stages are done
  EvalOptions eval;
};

/// Runs (or resumes) the protocol over `stream`, whose tasks are already in
/// training order. `state` must come from initial_state or a checkpoint of
/// the same stream.
void run_stream(ContinualState& state, const TaskStream& stream, const RunOptions& opts = {});

/// Joint training on the union of all tasks, evaluated once.
void run_multitask(ContinualState& state, const TaskStream& stream, const RunOptions& opts = {});

RunReport make_report(const ContinualState& state, double runtime_seconds);

}  // namespace clmoe
