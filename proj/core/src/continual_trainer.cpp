// SPDX-License-Identifier: Apache-2.0
#include "clmoe/continual_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "clmoe/error.hpp"
#include "clmoe/seed.hpp"

namespace clmoe {
namespace {

// Optimizer moments for every trainable tensor of a stack (SGD uses only m).
struct AdamState {
  struct Layer {
    std::vector<ExpertParams> m, v;
    Matrix gate_m, gate_v;
  };
  std::vector<Layer> layers;
  std::size_t step = 0;

  explicit AdamState(const AdapterStack& s) {
    for (const auto& l : s.layers()) {
      Layer st;
      for (const auto& e : l.experts()) {
        st.m.push_back({Matrix::Zero(e.a.rows(), e.a.cols()), Matrix::Zero(e.b.rows(), e.b.cols())});
      }
      st.v = st.m;
      st.gate_m = Matrix::Zero(l.gate().w_gate.rows(), l.gate().w_gate.cols());
      st.gate_v = st.gate_m;
      layers.push_back(std::move(st));
    }
  }
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

// Decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adam_update(Matrix& p, Matrix& m, Matrix& v, const Matrix& g, double lr, double wd, double c1, double c2) {
  m = kBeta1 * m + (1.0 - kBeta1) * g;
  v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
  p.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + kEps) + wd * p.array());
}

constexpr double kMomentum = 0.9;

void sgd_update(Matrix& p, Matrix& m, const Matrix& g, double lr, double wd) {
  m = kMomentum * m + g;
  p.array() -= lr * (m.array() + wd * p.array());
}

void sgd_step(AdapterStack& stack, AdamState& st, const StackGradients& g, double lr, double gate_lr, double wd) {
  ++st.step;
  for (std::size_t l = 0; l < stack.size(); ++l) {
    auto& layer = stack.mutable_layer(l);
    auto& ls = st.layers[l];
    for (std::size_t i = 0; i < layer.config().n_experts; ++i) {
      auto& e = layer.mutable_expert(i);
      sgd_update(e.a, ls.m[i].a, g.layers[l].experts[i].a, lr, wd);
      sgd_update(e.b, ls.m[i].b, g.layers[l].experts[i].b, lr, wd);
    }
    sgd_update(layer.mutable_gate().w_gate, ls.gate_m, g.layers[l].w_gate, gate_lr, wd);
  }
}

void adam_step(AdapterStack& stack, AdamState& st, const StackGradients& g, double lr, double gate_lr, double wd) {
  ++st.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.step));
  for (std::size_t l = 0; l < stack.size(); ++l) {
    auto& layer = stack.mutable_layer(l);
    auto& ls = st.layers[l];
    for (std::size_t i = 0; i < layer.config().n_experts; ++i) {
      auto& e = layer.mutable_expert(i);
      adam_update(e.a, ls.m[i].a, ls.v[i].a, g.layers[l].experts[i].a, lr, wd, c1, c2);
      adam_update(e.b, ls.m[i].b, ls.v[i].b, g.layers[l].experts[i].b, lr, wd, c1, c2);
    }
    adam_update(layer.mutable_gate().w_gate, ls.gate_m, ls.gate_v, g.layers[l].w_gate, gate_lr, wd, c1, c2);
  }
}

double scheduled_lr(const TrainConfig& c, std::size_t step, std::size_t total) {
  if (c.lr_schedule == LrSchedule::Constant || total == 0) return c.learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Loss of one instance and d loss / d logits.
double loss_and_grad(const Vector& logits, const TargetSequence& target, std::size_t vocab, Vector* d_logits,
                     LossDiagnostics* diag) {
  const std::size_t len = target.tokens.size();
  const Matrix probs = sequence_probabilities(logits, len, vocab);
  const double loss = sequence_loss(probs, target, diag);
  if (d_logits) {
    *d_logits = Vector(logits.size());
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t k = 0; k < vocab; ++k) {
        (*d_logits)[static_cast<Eigen::Index>(j * vocab + k)] = probs(static_cast<Eigen::Index>(j),
                                                                      static_cast<Eigen::Index>(k));
      }
      (*d_logits)[static_cast<Eigen::Index>(j * vocab) + target.tokens[j]] -= 1.0;
    }
  }
  return loss;
}

void require_finite_stack(const AdapterStack& s, std::size_t stage) {
  for (std::size_t l = 0; l < s.size(); ++l) {
    const auto& layer = s.layer(l);
    bool ok = layer.gate().w_gate.allFinite();
    for (const auto& e : layer.experts()) ok = ok && e.a.allFinite() && e.b.allFinite();
    if (!ok) throw NumericalError(fmt::format("parameters diverged while training stage {} (layer {})", stage, l));
  }
}

double mean_loss(const AdapterStack& s, std::span<const Instance> data, std::size_t vocab) {
  double total = 0.0;
  for (const auto& inst : data) {
    total += loss_and_grad(s.forward_instance(inst.features, nullptr), inst.target, vocab, nullptr, nullptr);
  }
  return total / static_cast<double>(data.size());
}

bool exact_match(const Vector& logits, const TargetSequence& target, std::size_t vocab) {
  return decode(logits, target.tokens.size(), vocab) == target.tokens;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; fn writes only to
// slot i of its own output, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Matrix gaussian(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (std_dev == 0.0) return m;
  std::normal_distribution<double> n01(0.0, std_dev);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = n01(rng);
  }
  return m;
}

}  // namespace

TrainMode parse_train_mode(std::string_view name) {
  if (name == "vanilla") return TrainMode::Vanilla;
  if (name == "mmoe") return TrainMode::MMoEOnly;
  if (name == "rmoe") return TrainMode::RMoEOnly;
  if (name == "full") return TrainMode::Full;
  if (name == "multitask") return TrainMode::Multitask;
  throw ValidationError(fmt::format("unknown mode '{}' (expected vanilla, mmoe, rmoe, full or multitask)", name));
}

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Vanilla: return "vanilla";
    case TrainMode::MMoEOnly: return "mmoe";
    case TrainMode::RMoEOnly: return "rmoe";
    case TrainMode::Full: return "full";
    case TrainMode::Multitask: return "multitask";
  }
  return "unknown";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adamw") return Optimizer::AdamW;
  if (name == "sgd") return Optimizer::Sgd;
  throw ValidationError(fmt::format("unknown optimizer '{}' (expected adamw or sgd)", name));
}

std::string_view to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adamw"; }

void TrainConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ValidationError("invalid train config: " + m); };
  if (n_experts == 0) fail("n_experts must be positive");
  if (top_k == 0 || top_k > n_experts) fail(fmt::format("top_k must lie in 1..n_experts ({})", n_experts));
  if (rank == 0 || rank % n_experts != 0) fail("rank must be a positive multiple of n_experts");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha must be positive");
  validate_gamma(gamma);
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be non-negative");
  if (!(gate_lr_scale >= 0.0) || !std::isfinite(gate_lr_scale)) fail("gate_lr_scale must be non-negative");
  if (!(a_init_range >= 0.0) || !std::isfinite(a_init_range)) fail("a_init_range must be non-negative");
  if (!(gate_init_std >= 0.0) || !std::isfinite(gate_init_std)) fail("gate_init_std must be non-negative");
  if (!(base_init_std >= 0.0) || !std::isfinite(base_init_std)) fail("base_init_std must be non-negative");
  if (adapter_layers == 0) fail("adapter_layers must be positive");
  if (adapter_layers > 1 && hidden_dim == 0) fail("hidden_dim must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"n_experts", c.n_experts},
          {"top_k", c.top_k},
          {"rank", c.rank},
          {"alpha", c.alpha},
          {"gamma", c.gamma},
          {"beta", c.beta},
          {"epochs_per_task", c.epochs_per_task},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"lr_schedule", c.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant"},
          {"optimizer", std::string(to_string(c.optimizer))},
          {"weight_decay", c.weight_decay},
          {"gate_lr_scale", c.gate_lr_scale},
          {"seed", c.seed},
          {"a_init_range", c.a_init_range},
          {"gate_init_std", c.gate_init_std},
          {"base_init_std", c.base_init_std},
          {"adapter_layers", c.adapter_layers},
          {"hidden_dim", c.hidden_dim},
          {"projection_dim", c.projection_dim}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.n_experts = j.at("n_experts").get<std::size_t>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.rank = j.at("rank").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.beta = j.at("beta").get<double>();
    c.epochs_per_task = j.at("epochs_per_task").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    const auto sched = j.at("lr_schedule").get<std::string>();
    if (sched == "cosine") {
      c.lr_schedule = LrSchedule::Cosine;
    } else if (sched == "constant") {
      c.lr_schedule = LrSchedule::Constant;
    } else {
      throw ValidationError(fmt::format("unknown lr_schedule '{}'", sched));
    }
    c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.weight_decay = j.at("weight_decay").get<double>();
    c.gate_lr_scale = j.at("gate_lr_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.a_init_range = j.at("a_init_range").get<double>();
    c.gate_init_std = j.at("gate_init_std").get<double>();
    c.base_init_std = j.at("base_init_std").get<double>();
    c.adapter_layers = j.at("adapter_layers").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.projection_dim = j.at("projection_dim").get<std::size_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed train config: {}", e.what()));
  }
}

double sequence_loss(const Matrix& probs, const TargetSequence& target, LossDiagnostics* diag) {
  if (target.tokens.empty()) throw ValidationError("target sequence is empty");
  if (static_cast<std::size_t>(probs.rows()) != target.tokens.size()) {
    throw ValidationError(fmt::format("{} probability rows for a target of length {}", probs.rows(),
                                      target.tokens.size()));
  }
  double loss = 0.0;
  for (Eigen::Index j = 0; j < probs.rows(); ++j) {
    const auto row = probs.row(j);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-6) {
      throw ValidationError(fmt::format("probability row {} is not on the simplex", j));
    }
    const int tok = target.tokens[static_cast<std::size_t>(j)];
    if (tok < 0 || tok >= probs.cols()) throw ValidationError(fmt::format("target token {} out of range", tok));
    double p = probs(j, tok);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      if (diag) ++diag->floored_tokens;
    }
    loss -= std::log(p);
  }
  return loss;
}

Matrix sequence_probabilities(const Vector& logits, std::size_t length, std::size_t vocab) {
  if (static_cast<std::size_t>(logits.size()) != length * vocab) {
    throw ValidationError(fmt::format("{} logits for {} positions of {} labels", logits.size(), length, vocab));
  }
  Matrix probs(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(vocab));
  for (std::size_t j = 0; j < length; ++j) {
    probs.row(static_cast<Eigen::Index>(j)) =
        softmax(logits.segment(static_cast<Eigen::Index>(j * vocab), static_cast<Eigen::Index>(vocab))).transpose();
  }
  return probs;
}

std::vector<int> decode(const Vector& logits, std::size_t length, std::size_t vocab) {
  if (static_cast<std::size_t>(logits.size()) != length * vocab) {
    throw ValidationError(fmt::format("{} logits for {} positions of {} labels", logits.size(), length, vocab));
  }
  std::vector<int> out;
  for (std::size_t j = 0; j < length; ++j) {
    Eigen::Index best = 0;
    logits.segment(static_cast<Eigen::Index>(j * vocab), static_cast<Eigen::Index>(vocab)).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

FeatureExtractor ContinualState::extractor() const {
  if (config.projection_dim == 0) return FeatureExtractor(feature_dim);
  return FeatureExtractor::projection(feature_dim, config.projection_dim, derive_seed(config.seed, "backbone"));
}

ContinualState initial_state(const TrainConfig& config, TrainMode mode, const TaskStream& stream) {
  config.validate();
  stream.validate();
  ContinualState s;
  s.config = config;
  s.mode = mode;
  s.feature_dim = stream.feature_dim;
  s.vocab_size = stream.vocab_size;
  s.sequence_length = stream.sequence_length();
  s.n_tasks = stream.n_tasks();

  const std::size_t out_dim = s.sequence_length * s.vocab_size;
  std::vector<AdapterLayer> layers;
  for (std::size_t l = 0; l < config.adapter_layers; ++l) {
    const bool last = l + 1 == config.adapter_layers;
    LayerConfig lc{l == 0 ? s.feature_dim : config.hidden_dim, last ? out_dim : config.hidden_dim,
                   config.n_experts, config.rank, config.alpha};
    Rng rng = make_rng(config.seed, "init", l);
    const double base_std = last ? config.base_init_std : 1.0 / std::sqrt(static_cast<double>(lc.in_dim));
    Matrix base = gaussian(lc.in_dim, lc.out_dim, base_std, rng);
    layers.push_back(AdapterLayer::initialize(lc, std::move(base), {config.a_init_range, config.gate_init_std}, rng));
  }
  s.stack = AdapterStack(std::move(layers));
  s.registry = TaskExpertRegistry(config.adapter_layers);
  s.anchors = TaskAnchorStore(s.extractor().out_dim());
  s.matrix = PerformanceMatrix(s.n_tasks);
  return s;
}

AdapterStack train_task(const AdapterStack& theta, std::span<const Instance> train, const TrainConfig& config,
                        std::size_t stage, std::size_t sequence_length, std::size_t vocab, TrainTaskStats* stats,
                        LossDiagnostics* diag) {
  if (train.empty()) throw ValidationError(fmt::format("stage {} has no training data", stage));
  for (const auto& inst : train) {
    if (inst.target.tokens.size() != sequence_length) {
      throw ValidationError("training target length does not match the stream");
    }
  }
  AdapterStack phi = theta;
  if (stats) stats->initial_loss = mean_loss(phi, train, vocab);
  if (config.epochs_per_task == 0) return phi;

  Rng rng = make_rng(config.seed, "shuffle", stage);
  AdamState adam(phi);
  const std::size_t n = train.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs_per_task;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs_per_task; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      auto grads = StackGradients::zeros_like(phi.layers());
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& inst = train[order[k]];
        const auto trace = phi.forward_train(inst.features);
        Vector d_logits;
        batch_loss += loss_and_grad(trace.logits, inst.target, vocab, &d_logits, diag);
        grads.accumulate(phi.backward(trace, d_logits));
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericalError(fmt::format("non-finite loss at stage {}, epoch {}, step {}", stage, epoch + 1, s + 1));
      }
      epoch_loss += batch_loss;
      grads.scale(1.0 / static_cast<double>(end - begin));
      const double lr = scheduled_lr(config, step, total_steps);
      if (config.optimizer == Optimizer::Sgd) {
        sgd_step(phi, adam, grads, lr, lr * config.gate_lr_scale, config.weight_decay);
      } else {
        adam_step(phi, adam, grads, lr, lr * config.gate_lr_scale, config.weight_decay);
      }
      ++step;
    }
    require_finite_stack(phi, stage);
    if (stats) stats->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return phi;
}

std::vector<RouterWeights> task_level_weights(const AdapterStack& stack, std::span<const Instance> train) {
  std::vector<TaskWeightAccumulator> acc;
  for (const auto& l : stack.layers()) acc.emplace_back(l.config().n_experts);
  std::vector<RouterWeights> routes;
  for (const auto& inst : train) {
    routes.clear();
    stack.forward_instance(inst.features, &routes);
    for (std::size_t l = 0; l < acc.size(); ++l) acc[l].add(routes[l]);
  }
  std::vector<RouterWeights> out;
  for (const auto& a : acc) out.push_back(a.mean());
  return out;
}

FinishResult finish_task(ContinualState& state, const AdapterStack& phi, const TaskData& task) {
  const int stage = static_cast<int>(state.completed()) + 1;
  FinishResult r;
  r.record.task_id = stage;
  r.record.task_weights = task_level_weights(phi, task.train);
  for (std::size_t l = 0; l < phi.size(); ++l) {
    const auto top = select_top_k(r.record.task_weights[l], state.config.top_k);
    r.record.top_k.push_back(top);
    const ExpertSet e_t(top.begin(), top.end());
    r.lambdas.push_back(classify_and_build_lambda(e_t, state.registry.previous_experts(l),
                                                  state.config.n_experts, state.config.gamma));
  }

  AdapterStack next = phi;
  if (uses_merge(state.mode)) {
    const auto merged =
        merge_experts(ExpertSnapshot::of(state.stack), ExpertSnapshot::of(phi), r.lambdas);
    merged.apply_to(next);
    r.merged = true;
  }

  const auto extractor = state.extractor();
  const auto features = extractor.extract_batch(task.train);
  auto anchor = compute_anchor(features);

  // Commit only after everything above succeeded.
  state.registry.update(r.record);
  state.anchors.add(stage, std::move(anchor));
  state.stack = std::move(next);
  state.task_order.push_back(task.task_id);
  return r;
}

std::size_t evaluation_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CLMOE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
  }
  return n;
}

EvalResult evaluate(const ContinualState& state, std::span<const TaskData> tasks, const EvalOptions& opts) {
  if (tasks.size() > state.completed()) {
    throw ConsistencyError(fmt::format("cannot evaluate {} tasks with {} completed", tasks.size(), state.completed()));
  }
  const bool dual = uses_task_router(state.mode);
  const auto extractor = state.extractor();
  const std::size_t seen = tasks.size();
  for (std::size_t t = 1; t <= seen; ++t) {
    state.anchors.anchor(static_cast<int>(t));
    state.registry.record(static_cast<int>(t));
  }

  struct Item {
    const Instance* inst;
    int stage;
  };
  std::vector<Item> items;
  for (std::size_t t = 0; t < seen; ++t) {
    for (const auto& inst : tasks[t].test) items.push_back({&inst, static_cast<int>(t) + 1});
  }
  std::vector<int> inferred(items.size());
  std::vector<char> correct(items.size());
  const std::size_t threads = opts.threads ? opts.threads : evaluation_threads();

  parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto& [inst, stage] = items[i];
    const int guess = infer_task(state.anchors, extractor.extract(*inst));
    inferred[i] = guess;
    Vector logits;
    if (dual) {
      const int route_task = opts.oracle_task_id ? stage : guess;
      const auto plan = RoutingPlan::dual(state.registry.record(route_task).task_weights, state.config.beta);
      logits = state.stack.forward(inst->features, plan);
    } else {
      logits = state.stack.forward(inst->features, RoutingPlan::instance_only());
    }
    correct[i] = exact_match(logits, inst->target, state.vocab_size) ? 1 : 0;
  });

  EvalResult r;
  r.confusion.assign(seen, std::vector<std::size_t>(seen, 0));
  std::vector<std::size_t> hits(seen, 0), counts(seen, 0);
  std::size_t id_hits = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto t = static_cast<std::size_t>(items[i].stage - 1);
    ++counts[t];
    hits[t] += static_cast<std::size_t>(correct[i]);
    ++r.confusion[t][static_cast<std::size_t>(inferred[i] - 1)];
    if (inferred[i] == items[i].stage) ++id_hits;
  }
  for (std::size_t t = 0; t < seen; ++t) {
    r.accuracy.push_back(100.0 * static_cast<double>(hits[t]) / static_cast<double>(counts[t]));
  }
  r.task_id_accuracy = items.empty() ? 0.0 : static_cast<double>(id_hits) / static_cast<double>(items.size());
  return r;
}

double instance_accuracy(const AdapterStack& stack, std::span<const Instance> data, std::size_t sequence_length,
                         std::size_t vocab) {
  if (data.empty()) throw ValidationError("accuracy of an empty split");
  std::size_t hits = 0;
  for (const auto& inst : data) {
    if (inst.target.tokens.size() != sequence_length) throw ValidationError("target length mismatch");
    if (exact_match(stack.forward(inst.features, RoutingPlan::instance_only()), inst.target, vocab)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

void run_stream(ContinualState& state, const TaskStream& stream, const RunOptions& opts) {
  if (state.mode == TrainMode::Multitask) {
    run_multitask(state, stream, opts);
    return;
  }
  stream.validate();
  if (stream.n_tasks() != state.n_tasks || stream.feature_dim != state.feature_dim ||
      stream.vocab_size != state.vocab_size || stream.sequence_length() != state.sequence_length) {
    throw ConsistencyError("stream shape does not match the training state");
  }
  for (std::size_t s = 0; s < state.completed(); ++s) {
    if (stream.tasks[s].task_id != state.task_order[s]) {
      throw ConsistencyError(fmt::format("stage {} was trained on task {} but the stream has task {} there", s + 1,
                                         state.task_order[s], stream.tasks[s].task_id));
    }
  }

  for (std::size_t s = state.completed(); s < stream.n_tasks(); ++s) {
    if (opts.stop_after && state.completed() >= *opts.stop_after) return;
    const auto& task = stream.tasks[s];
    const std::size_t stage = s + 1;
    const AdapterStack phi = train_task(state.stack, task.train, state.config, stage, state.sequence_length,
                                        state.vocab_size, nullptr, &state.loss_diagnostics);
    const double pre = instance_accuracy(phi, task.test, state.sequence_length, state.vocab_size);
    finish_task(state, phi, task);
    const auto eval = evaluate(state, std::span(stream.tasks).first(stage), opts.eval);
    state.matrix.append_row(eval.accuracy);
    state.diag_pre_merge.push_back(pre);
    state.diag_post_merge.push_back(eval.accuracy.back());
    if (opts.on_stage) opts.on_stage(state);
  }
}

void run_multitask(ContinualState& state, const TaskStream& stream, const RunOptions& opts) {
  stream.validate();
  if (state.completed() > 0) return;
  std::vector<const TaskData*> sorted;
  for (const auto& t : stream.tasks) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->task_id < b->task_id; });

  std::vector<Instance> joint;
  for (const auto* t : sorted) joint.insert(joint.end(), t->train.begin(), t->train.end());
  state.stack = train_task(state.stack, joint, state.config, 0, state.sequence_length, state.vocab_size, nullptr,
                           &state.loss_diagnostics);
  std::vector<double> row;
  for (const auto* t : sorted) {
    row.push_back(instance_accuracy(state.stack, t->test, state.sequence_length, state.vocab_size));
    state.task_order.push_back(t->task_id);
  }
  state.matrix = PerformanceMatrix::joint(std::move(row));
  if (opts.on_stage) opts.on_stage(state);
}

RunReport make_report(const ContinualState& state, double runtime_seconds) {
  RunReport r;
  r.config = to_json(state.config);
  r.mode = std::string(to_string(state.mode));
  r.seed = state.config.seed;
  r.task_order = state.task_order;
  r.matrix = state.matrix;
  r.diag_pre_merge = state.diag_pre_merge;
  r.diag_post_merge = state.diag_post_merge;
  r.runtime_seconds = runtime_seconds;
  return r;
}

}  // namespace clmoe
