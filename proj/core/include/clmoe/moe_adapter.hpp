// SPDX-License-Identifier: Apache-2.0
//
// A frozen linear map augmented with n low-rank experts and a dense softmax
// gate:
//
//   f(x) = W^T x + (alpha / r) * sum_i g_i(x) * B_i^T A_i^T x,
//   g(x) = softmax(W_gate^T x)
//
// W is in x out, A_i is in x (r/n), B_i is (r/n) x out and W_gate is in x n.
// Everything here is per-vector; batched callers loop.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clmoe/linalg.hpp"
#include "clmoe/seed.hpp"

namespace clmoe {

struct LayerConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t n_experts = 0;
  std::size_t total_rank = 0;
  double scale_alpha = 1.0;

  std::size_t expert_rank() const { return total_rank / n_experts; }
  double scaling() const { return scale_alpha / static_cast<double>(total_rank); }
  void validate() const;
  bool operator==(const LayerConfig&) const = default;
};

struct ExpertParams {
  Matrix a;  // in x rank
  Matrix b;  // rank x out
};

struct GateParams {
  Matrix w_gate;  // in x n
};

/// A point on the probability simplex over experts: entries >= 0, sum 1.
class RouterWeights {
 public:
  static constexpr double kTolerance = 1e-6;

  /// Throws ValidationError if `weights` is not a valid routing vector.
  explicit RouterWeights(Vector weights);

  static RouterWeights uniform(std::size_t n);
  /// beta * instance + (1 - beta) * task, which stays on the simplex.
  static RouterWeights blend(const RouterWeights& instance, const RouterWeights& task, double beta);

  const Vector& values() const { return weights_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  double operator[](std::size_t i) const { return weights_[static_cast<Eigen::Index>(i)]; }

 private:
  Vector weights_;
};

struct InitOptions {
  double a_init_range = 0.1;  // A ~ U(-range, range)
  double gate_init_std = 0.1; // W_gate ~ N(0, std^2)
};

class AdapterLayer {
 public:
  AdapterLayer(LayerConfig config, Matrix base_weight, std::vector<ExpertParams> experts,
               GateParams gate);
  AdapterLayer(const AdapterLayer& other);
  AdapterLayer& operator=(const AdapterLayer& other);
  AdapterLayer(AdapterLayer&&) noexcept = default;
  AdapterLayer& operator=(AdapterLayer&&) noexcept = default;

  /// Fresh layer: seeded A, zero B (adapter starts as an exact no-op), seeded gate.
  static AdapterLayer initialize(const LayerConfig& config, Matrix base_weight,
                                 const InitOptions& init, Rng& rng);

  const LayerConfig& config() const { return config_; }
  const Matrix& base_weight() const { return base_weight_; }
  std::span<const ExpertParams> experts() const { return experts_; }
  const ExpertParams& expert(std::size_t i) const { return experts_.at(i); }
  const GateParams& gate() const { return gate_; }

  // Mutators bump the revision so stale forward traces are rejected.
  ExpertParams& mutable_expert(std::size_t i);
  GateParams& mutable_gate();
  void set_experts(std::vector<ExpertParams> experts);
  void set_gate(GateParams gate);

  std::uint64_t identity() const { return identity_; }
  std::uint64_t revision() const { return revision_; }

 private:
  void check_experts(const std::vector<ExpertParams>& experts) const;

  LayerConfig config_;
  Matrix base_weight_;
  std::vector<ExpertParams> experts_;
  GateParams gate_;
  std::uint64_t identity_;
  std::uint64_t revision_ = 0;
};

/// Everything adapter_backward needs from the gated forward pass.
struct ForwardTrace {
  std::uint64_t layer_identity = 0;
  std::uint64_t layer_revision = 0;
  Vector input;
  Vector gate_probs;
  std::vector<Vector> hidden;      // A_i^T x, per expert
  std::vector<Vector> expert_out;  // B_i^T A_i^T x, per expert
  Vector output;
};

struct AdapterGradients {
  std::vector<ExpertParams> experts;
  Matrix w_gate;
  Vector input;  // d<u, f(x)>/dx, used when layers are stacked

  static AdapterGradients zeros_like(const AdapterLayer& layer);
  void accumulate(const AdapterGradients& other);
};

RouterWeights gate_forward(const AdapterLayer& layer, const Vector& x);

Vector moe_forward(const AdapterLayer& layer, const Vector& x, const RouterWeights& route);

Vector dual_route_forward(const AdapterLayer& layer, const Vector& x,
                          const RouterWeights& w_instance, const RouterWeights& w_task,
                          double beta);

/// gate_forward followed by moe_forward, keeping the intermediates.
ForwardTrace forward_with_trace(const AdapterLayer& layer, const Vector& x);

/// Exact gradients of <upstream, f(x)> w.r.t. every A_i, B_i and W_gate (and
/// x). The base weight is frozen and gets none. Throws UsageError when
/// `trace` was not produced by forward_with_trace on this layer's current
/// parameters.
AdapterGradients adapter_backward(const AdapterLayer& layer, const ForwardTrace& trace,
                                  const Vector& upstream);

// Loops over the per-vector ops; results are bit-identical to calling them
// one at a time.
std::vector<RouterWeights> gate_forward_batch(const AdapterLayer& layer, std::span<const Vector> xs);
std::vector<Vector> moe_forward_batch(const AdapterLayer& layer, std::span<const Vector> xs,
                                      std::span<const RouterWeights> routes);

}  // namespace clmoe
