// SPDX-License-Identifier: Apache-2.0
#include "clmoe/adapter_stack.hpp"

#include <fmt/format.h>

#include "clmoe/error.hpp"

namespace clmoe {
namespace {

Vector activate(const Vector& v) { return v.array().tanh().matrix(); }

}  // namespace

StackGradients StackGradients::zeros_like(std::span<const AdapterLayer> layers) {
  StackGradients g;
  for (const auto& l : layers) g.layers.push_back(AdapterGradients::zeros_like(l));
  return g;
}

void StackGradients::accumulate(const StackGradients& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].accumulate(other.layers.at(i));
}

void StackGradients::scale(double factor) {
  for (auto& l : layers) {
    for (auto& e : l.experts) {
      e.a *= factor;
      e.b *= factor;
    }
    l.w_gate *= factor;
    l.input *= factor;
  }
}

AdapterStack::AdapterStack(std::vector<AdapterLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ValidationError("adapter stack needs at least one layer");
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].config().in_dim != layers_[i - 1].config().out_dim) {
      throw ValidationError(fmt::format("layer {} input dim {} does not match layer {} output dim {}",
                                        i, layers_[i].config().in_dim, i - 1,
                                        layers_[i - 1].config().out_dim));
    }
  }
}

Vector AdapterStack::forward(const Vector& x, const RoutingPlan& plan) const {
  if (plan.task_weights && plan.task_weights->size() != layers_.size()) {
    throw ValidationError("routing plan does not cover every layer");
  }
  Vector h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto w_instance = gate_forward(layers_[i], h);
    Vector out = plan.task_weights
                     ? dual_route_forward(layers_[i], h, w_instance, (*plan.task_weights)[i], plan.beta)
                     : moe_forward(layers_[i], h, w_instance);
    h = (i + 1 < layers_.size()) ? activate(out) : std::move(out);
  }
  return h;
}

Vector AdapterStack::forward_instance(const Vector& x, std::vector<RouterWeights>* routes) const {
  Vector h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto w = gate_forward(layers_[i], h);
    Vector out = moe_forward(layers_[i], h, w);
    if (routes) routes->push_back(std::move(w));
    h = (i + 1 < layers_.size()) ? activate(out) : std::move(out);
  }
  return h;
}

StackTrace AdapterStack::forward_train(const Vector& x) const {
  StackTrace t;
  Vector h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    t.layers.push_back(forward_with_trace(layers_[i], h));
    if (i + 1 < layers_.size()) {
      t.activations.push_back(activate(t.layers.back().output));
      h = t.activations.back();
    }
  }
  t.logits = t.layers.back().output;
  return t;
}

StackGradients AdapterStack::backward(const StackTrace& trace, const Vector& d_logits) const {
  if (trace.layers.size() != layers_.size()) {
    throw UsageError("stack backward called with a trace from a different stack");
  }
  StackGradients g;
  g.layers.resize(layers_.size());
  Vector upstream = d_logits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    g.layers[k] = adapter_backward(layers_[k], trace.layers[k], upstream);
    if (k > 0) {
      const Vector& a = trace.activations[k - 1];
      upstream = g.layers[k].input.cwiseProduct((1.0 - a.array().square()).matrix());
    }
  }
  return g;
}

}  // namespace clmoe
