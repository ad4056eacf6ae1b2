// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "clmoe/linalg.hpp"
#include "clmoe/moe_adapter.hpp"

namespace clmoe {

/// Per-layer routing used at inference. Without task weights the stack uses
/// the instance router alone (beta is then ignored).
struct RoutingPlan {
  double beta = 1.0;
  std::optional<std::vector<RouterWeights>> task_weights;  // one per layer

  static RoutingPlan instance_only() { return {}; }
  static RoutingPlan dual(std::vector<RouterWeights> per_layer, double beta) {
    return RoutingPlan{beta, std::move(per_layer)};
  }
};

struct StackTrace {
  std::vector<ForwardTrace> layers;
  std::vector<Vector> activations;  // tanh outputs between layers
  Vector logits;
};

struct StackGradients {
  std::vector<AdapterGradients> layers;

  static StackGradients zeros_like(std::span<const AdapterLayer> layers);
  void accumulate(const StackGradients& other);
  void scale(double factor);
};

/// A chain of adapter layers with tanh between consecutive layers and no
/// activation after the last one. The last layer emits logits.
class AdapterStack {
 public:
  AdapterStack() = default;
  explicit AdapterStack(std::vector<AdapterLayer> layers);

  std::size_t size() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().config().in_dim; }
  std::size_t output_dim() const { return layers_.back().config().out_dim; }
  const AdapterLayer& layer(std::size_t i) const { return layers_.at(i); }
  AdapterLayer& mutable_layer(std::size_t i) { return layers_.at(i); }
  std::span<const AdapterLayer> layers() const { return layers_; }

  Vector forward(const Vector& x, const RoutingPlan& plan) const;

  /// Instance-routed forward that also reports each layer's router output.
  Vector forward_instance(const Vector& x, std::vector<RouterWeights>* routes) const;

  StackTrace forward_train(const Vector& x) const;
  StackGradients backward(const StackTrace& trace, const Vector& d_logits) const;

 private:
  std::vector<AdapterLayer> layers_;
};

}  // namespace clmoe
