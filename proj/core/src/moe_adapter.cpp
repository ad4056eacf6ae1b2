// SPDX-License-Identifier: Apache-2.0
#include "clmoe/moe_adapter.hpp"

#include <atomic>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "clmoe/error.hpp"

namespace clmoe {
namespace {

std::uint64_t next_identity() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_route(const AdapterLayer& layer, const RouterWeights& route) {
  if (route.size() != layer.config().n_experts) {
    throw ValidationError(fmt::format("routing vector has {} entries, layer has {} experts",
                                      route.size(), layer.config().n_experts));
  }
}

// Shared by moe_forward and forward_with_trace so both produce identical bits.
Vector combine(const AdapterLayer& layer, const Vector& x, const Vector& route,
               std::vector<Vector>* hidden, std::vector<Vector>* expert_out) {
  const auto& cfg = layer.config();
  Vector out = layer.base_weight().transpose() * x;
  Vector delta = Vector::Zero(static_cast<Eigen::Index>(cfg.out_dim));
  for (std::size_t i = 0; i < cfg.n_experts; ++i) {
    const auto& e = layer.expert(i);
    Vector h = e.a.transpose() * x;
    Vector y = e.b.transpose() * h;
    delta += route[static_cast<Eigen::Index>(i)] * y;
    if (hidden) hidden->push_back(std::move(h));
    if (expert_out) expert_out->push_back(std::move(y));
  }
  out += cfg.scaling() * delta;
  return out;
}

}  // namespace

void LayerConfig::validate() const {
  if (in_dim == 0 || out_dim == 0) throw ValidationError("layer dimensions must be positive");
  if (n_experts == 0) throw ValidationError("n_experts must be positive");
  if (total_rank == 0) throw ValidationError("total_rank must be positive");
  if (total_rank % n_experts != 0) {
    throw ValidationError(
        fmt::format("total_rank {} is not divisible by n_experts {}", total_rank, n_experts));
  }
  if (!(scale_alpha > 0.0) || !std::isfinite(scale_alpha)) {
    throw ValidationError("scale_alpha must be a positive finite number");
  }
}

RouterWeights::RouterWeights(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0) throw ValidationError("routing vector is empty");
  if (!weights_.allFinite()) throw ValidationError("routing vector contains non-finite values");
  if (weights_.minCoeff() < 0.0) throw ValidationError("routing vector has a negative entry");
  if (std::abs(weights_.sum() - 1.0) > kTolerance) {
    throw ValidationError(fmt::format("routing vector sums to {}, expected 1", weights_.sum()));
  }
}

RouterWeights RouterWeights::uniform(std::size_t n) {
  return RouterWeights(Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
}

RouterWeights RouterWeights::blend(const RouterWeights& instance, const RouterWeights& task,
                                   double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw ValidationError(fmt::format("beta must lie in [0, 1], got {}", beta));
  }
  if (instance.size() != task.size()) {
    throw ValidationError("instance and task routing vectors differ in length");
  }
  return RouterWeights(beta * instance.values() + (1.0 - beta) * task.values());
}

AdapterLayer::AdapterLayer(LayerConfig config, Matrix base_weight, std::vector<ExpertParams> experts,
                           GateParams gate)
    : config_(config),
      base_weight_(std::move(base_weight)),
      experts_(std::move(experts)),
      gate_(std::move(gate)),
      identity_(next_identity()) {
  config_.validate();
  require_shape(base_weight_, config_.in_dim, config_.out_dim, "base weight");
  require_finite(base_weight_, "base weight");
  check_experts(experts_);
  require_shape(gate_.w_gate, config_.in_dim, config_.n_experts, "gate weight");
  require_finite(gate_.w_gate, "gate weight");
}

AdapterLayer::AdapterLayer(const AdapterLayer& other)
    : config_(other.config_),
      base_weight_(other.base_weight_),
      experts_(other.experts_),
      gate_(other.gate_),
      identity_(next_identity()) {}

AdapterLayer& AdapterLayer::operator=(const AdapterLayer& other) {
  if (this != &other) {
    config_ = other.config_;
    base_weight_ = other.base_weight_;
    experts_ = other.experts_;
    gate_ = other.gate_;
    identity_ = next_identity();
    revision_ = 0;
  }
  return *this;
}

AdapterLayer AdapterLayer::initialize(const LayerConfig& config, Matrix base_weight,
                                      const InitOptions& init, Rng& rng) {
  config.validate();
  const auto in = static_cast<Eigen::Index>(config.in_dim);
  const auto out = static_cast<Eigen::Index>(config.out_dim);
  const auto rank = static_cast<Eigen::Index>(config.expert_rank());
  std::uniform_real_distribution<double> a_dist(-init.a_init_range, init.a_init_range);
  std::normal_distribution<double> gate_dist(0.0, init.gate_init_std);

  std::vector<ExpertParams> experts;
  experts.reserve(config.n_experts);
  for (std::size_t i = 0; i < config.n_experts; ++i) {
    ExpertParams e{Matrix(in, rank), Matrix::Zero(rank, out)};
    for (Eigen::Index c = 0; c < rank; ++c) {
      for (Eigen::Index r = 0; r < in; ++r) e.a(r, c) = a_dist(rng);
    }
    experts.push_back(std::move(e));
  }
  GateParams gate{Matrix(in, static_cast<Eigen::Index>(config.n_experts))};
  for (Eigen::Index c = 0; c < gate.w_gate.cols(); ++c) {
    for (Eigen::Index r = 0; r < in; ++r) {
      gate.w_gate(r, c) = init.gate_init_std > 0.0 ? gate_dist(rng) : 0.0;
    }
  }
  return AdapterLayer(config, std::move(base_weight), std::move(experts), std::move(gate));
}

void AdapterLayer::check_experts(const std::vector<ExpertParams>& experts) const {
  if (experts.size() != config_.n_experts) {
    throw ValidationError(
        fmt::format("layer expects {} experts, got {}", config_.n_experts, experts.size()));
  }
  for (const auto& e : experts) {
    require_shape(e.a, config_.in_dim, config_.expert_rank(), "expert A");
    require_shape(e.b, config_.expert_rank(), config_.out_dim, "expert B");
    require_finite(e.a, "expert A");
    require_finite(e.b, "expert B");
  }
}

ExpertParams& AdapterLayer::mutable_expert(std::size_t i) {
  ++revision_;
  return experts_.at(i);
}

GateParams& AdapterLayer::mutable_gate() {
  ++revision_;
  return gate_;
}

void AdapterLayer::set_experts(std::vector<ExpertParams> experts) {
  check_experts(experts);
  experts_ = std::move(experts);
  ++revision_;
}

void AdapterLayer::set_gate(GateParams gate) {
  require_shape(gate.w_gate, config_.in_dim, config_.n_experts, "gate weight");
  require_finite(gate.w_gate, "gate weight");
  gate_ = std::move(gate);
  ++revision_;
}

AdapterGradients AdapterGradients::zeros_like(const AdapterLayer& layer) {
  AdapterGradients g;
  for (const auto& e : layer.experts()) {
    g.experts.push_back({Matrix::Zero(e.a.rows(), e.a.cols()), Matrix::Zero(e.b.rows(), e.b.cols())});
  }
  g.w_gate = Matrix::Zero(layer.gate().w_gate.rows(), layer.gate().w_gate.cols());
  g.input = Vector::Zero(static_cast<Eigen::Index>(layer.config().in_dim));
  return g;
}

void AdapterGradients::accumulate(const AdapterGradients& other) {
  if (other.experts.size() != experts.size()) throw ValidationError("gradient expert count mismatch");
  for (std::size_t i = 0; i < experts.size(); ++i) {
    experts[i].a += other.experts[i].a;
    experts[i].b += other.experts[i].b;
  }
  w_gate += other.w_gate;
  input += other.input;
}

RouterWeights gate_forward(const AdapterLayer& layer, const Vector& x) {
  require_size(x, layer.config().in_dim, "gate input");
  require_finite(x, "gate input");
  Vector logits = layer.gate().w_gate.transpose() * x;
  // Finite inputs with non-finite logits mean the parameters have diverged.
  if (!logits.allFinite()) throw NumericalError("gate logits are not finite");
  return RouterWeights(softmax(logits));
}

Vector moe_forward(const AdapterLayer& layer, const Vector& x, const RouterWeights& route) {
  require_size(x, layer.config().in_dim, "adapter input");
  check_route(layer, route);
  return combine(layer, x, route.values(), nullptr, nullptr);
}

Vector dual_route_forward(const AdapterLayer& layer, const Vector& x,
                          const RouterWeights& w_instance, const RouterWeights& w_task,
                          double beta) {
  check_route(layer, w_instance);
  check_route(layer, w_task);
  return moe_forward(layer, x, RouterWeights::blend(w_instance, w_task, beta));
}

ForwardTrace forward_with_trace(const AdapterLayer& layer, const Vector& x) {
  ForwardTrace t;
  t.layer_identity = layer.identity();
  t.layer_revision = layer.revision();
  t.input = x;
  t.gate_probs = gate_forward(layer, x).values();
  t.hidden.reserve(layer.config().n_experts);
  t.expert_out.reserve(layer.config().n_experts);
  t.output = combine(layer, x, t.gate_probs, &t.hidden, &t.expert_out);
  return t;
}

AdapterGradients adapter_backward(const AdapterLayer& layer, const ForwardTrace& trace,
                                  const Vector& upstream) {
  if (trace.layer_identity != layer.identity() || trace.layer_revision != layer.revision() ||
      trace.hidden.size() != layer.config().n_experts) {
    throw UsageError("adapter_backward called without a matching forward pass on this layer");
  }
  const auto& cfg = layer.config();
  require_size(upstream, cfg.out_dim, "upstream gradient");
  const double s = cfg.scaling();

  AdapterGradients g;
  g.experts.reserve(cfg.n_experts);
  Vector d_gate(static_cast<Eigen::Index>(cfg.n_experts));
  Vector d_input = layer.base_weight() * upstream;
  for (std::size_t i = 0; i < cfg.n_experts; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto& e = layer.expert(i);
    const double gi = trace.gate_probs[ii];
    // y_i = B_i^T h_i, h_i = A_i^T x, out += s * g_i * y_i
    Matrix d_b = (s * gi) * trace.hidden[i] * upstream.transpose();
    Vector d_h = (s * gi) * (e.b * upstream);
    Matrix d_a = trace.input * d_h.transpose();
    d_input += e.a * d_h;
    d_gate[ii] = s * upstream.dot(trace.expert_out[i]);
    g.experts.push_back({std::move(d_a), std::move(d_b)});
  }
  // Softmax Jacobian: dz = p * (dp - <p, dp>)
  const double mean = trace.gate_probs.dot(d_gate);
  Vector d_logits = trace.gate_probs.cwiseProduct((d_gate.array() - mean).matrix());
  g.w_gate = trace.input * d_logits.transpose();
  d_input += layer.gate().w_gate * d_logits;
  g.input = std::move(d_input);
  return g;
}

std::vector<RouterWeights> gate_forward_batch(const AdapterLayer& layer, std::span<const Vector> xs) {
  std::vector<RouterWeights> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(gate_forward(layer, x));
  return out;
}

std::vector<Vector> moe_forward_batch(const AdapterLayer& layer, std::span<const Vector> xs,
                                      std::span<const RouterWeights> routes) {
  if (xs.size() != routes.size()) throw ValidationError("batch inputs and routes differ in count");
  std::vector<Vector> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(moe_forward(layer, xs[i], routes[i]));
  return out;
}

}  // namespace clmoe
