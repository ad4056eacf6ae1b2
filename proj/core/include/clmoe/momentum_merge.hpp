// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "clmoe/adapter_stack.hpp"
#include "clmoe/moe_adapter.hpp"
#include "clmoe/routing_registry.hpp"

namespace clmoe {

/// Expert parameters of every adapter layer: layers[l][i] is expert i of layer l.
struct ExpertSnapshot {
  std::vector<std::vector<ExpertParams>> layers;

  static ExpertSnapshot of(const AdapterStack& stack);
  /// Writes the experts back into `stack`, leaving gates and base weights alone.
  void apply_to(AdapterStack& stack) const;

  bool congruent_with(const ExpertSnapshot& other) const;
  bool operator==(const ExpertSnapshot& other) const;
};

/// theta_t[l][i] = lambda_i * theta_prev[l][i] + (1 - lambda_i) * phi_t[l][i],
/// elementwise on A and B. Inputs are left untouched.
ExpertSnapshot merge_experts(const ExpertSnapshot& theta_prev, const ExpertSnapshot& phi_t,
                             std::span<const LambdaVector> lambda_per_layer);

/// L2 norm of the flattened (A, B) difference for each expert of each layer.
std::vector<std::vector<double>> snapshot_distance(const ExpertSnapshot& a, const ExpertSnapshot& b);

}  // namespace clmoe
