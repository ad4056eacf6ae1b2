// SPDX-License-Identifier: Apache-2.0
#include "clmoe/momentum_merge.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "clmoe/error.hpp"

namespace clmoe {
namespace {

void require_congruent(const ExpertSnapshot& a, const ExpertSnapshot& b) {
  if (!a.congruent_with(b)) throw ValidationError("expert snapshots are not structurally congruent");
}

// Result is clamped into [min(p, q), max(p, q)] so rounding can never leave
// the segment; equal endpoints and lambda in {0, 1} are therefore exact.
Matrix blend(const Matrix& prev, const Matrix& tuned, double lambda) {
  return prev.binaryExpr(tuned, [lambda](double p, double q) {
    const double m = lambda * p + (1.0 - lambda) * q;
    return std::clamp(m, std::min(p, q), std::max(p, q));
  });
}

}  // namespace

ExpertSnapshot ExpertSnapshot::of(const AdapterStack& stack) {
  ExpertSnapshot s;
  for (const auto& layer : stack.layers()) {
    s.layers.emplace_back(layer.experts().begin(), layer.experts().end());
  }
  return s;
}

void ExpertSnapshot::apply_to(AdapterStack& stack) const {
  if (layers.size() != stack.size()) throw ValidationError("snapshot layer count does not match stack");
  for (std::size_t l = 0; l < layers.size(); ++l) stack.mutable_layer(l).set_experts(layers[l]);
}

bool ExpertSnapshot::congruent_with(const ExpertSnapshot& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].size() != other.layers[l].size()) return false;
    for (std::size_t i = 0; i < layers[l].size(); ++i) {
      const auto& x = layers[l][i];
      const auto& y = other.layers[l][i];
      if (x.a.rows() != y.a.rows() || x.a.cols() != y.a.cols() || x.b.rows() != y.b.rows() ||
          x.b.cols() != y.b.cols()) {
        return false;
      }
    }
  }
  return true;
}

bool ExpertSnapshot::operator==(const ExpertSnapshot& other) const {
  if (!congruent_with(other)) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].size(); ++i) {
      if (layers[l][i].a != other.layers[l][i].a || layers[l][i].b != other.layers[l][i].b) return false;
    }
  }
  return true;
}

ExpertSnapshot merge_experts(const ExpertSnapshot& theta_prev, const ExpertSnapshot& phi_t,
                             std::span<const LambdaVector> lambda_per_layer) {
  require_congruent(theta_prev, phi_t);
  if (lambda_per_layer.size() != theta_prev.layers.size()) {
    throw ValidationError(fmt::format("merge needs {} lambda vectors, got {}",
                                      theta_prev.layers.size(), lambda_per_layer.size()));
  }
  ExpertSnapshot out;
  out.layers.resize(theta_prev.layers.size());
  for (std::size_t l = 0; l < theta_prev.layers.size(); ++l) {
    const auto& lam = lambda_per_layer[l].lambdas;
    if (static_cast<std::size_t>(lam.size()) != theta_prev.layers[l].size()) {
      throw ValidationError(fmt::format("lambda vector of layer {} has the wrong length", l));
    }
    for (std::size_t i = 0; i < theta_prev.layers[l].size(); ++i) {
      const double li = lam[static_cast<Eigen::Index>(i)];
      if (!(li >= 0.0 && li <= 1.0)) {
        throw ValidationError(fmt::format("merge coefficient {} of layer {} expert {} is outside [0, 1]", li, l, i));
      }
      const auto& prev = theta_prev.layers[l][i];
      const auto& tuned = phi_t.layers[l][i];
      out.layers[l].push_back({blend(prev.a, tuned.a, li), blend(prev.b, tuned.b, li)});
    }
  }
  return out;
}

std::vector<std::vector<double>> snapshot_distance(const ExpertSnapshot& a, const ExpertSnapshot& b) {
  require_congruent(a, b);
  std::vector<std::vector<double>> out(a.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].size(); ++i) {
      const double da = (a.layers[l][i].a - b.layers[l][i].a).squaredNorm();
      const double db = (a.layers[l][i].b - b.layers[l][i].b).squaredNorm();
      out[l].push_back(std::sqrt(da + db));
    }
  }
  return out;
}

}  // namespace clmoe
