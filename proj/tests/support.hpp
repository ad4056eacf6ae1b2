// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: seeded random tensors and the
// naive reference implementations the library is checked against.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "clmoe/linalg.hpp"
#include "clmoe/moe_adapter.hpp"

namespace clmoe::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n01(rng);
  }
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

inline RouterWeights random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = e(rng);
  return RouterWeights(v / v.sum());
}

/// A layer with every parameter (including B) drawn at random.
inline AdapterLayer random_layer(std::size_t in, std::size_t out, std::size_t n, std::size_t rank,
                                 double alpha, std::mt19937_64& rng) {
  LayerConfig cfg{in, out, n, rank, alpha};
  std::vector<ExpertParams> experts;
  for (std::size_t i = 0; i < n; ++i) {
    experts.push_back({random_matrix(in, rank / n, rng, 0.5), random_matrix(rank / n, out, rng, 0.5)});
  }
  return AdapterLayer(cfg, random_matrix(in, out, rng, 0.5), std::move(experts), {random_matrix(in, n, rng, 0.5)});
}

/// Softmax evaluated in long double, written out longhand.
inline std::vector<long double> softmax_ld(const std::vector<long double>& z) {
  long double mx = z[0];
  for (auto v : z) mx = std::max(mx, v);
  long double s = 0.0L;
  std::vector<long double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    s += out[i];
  }
  for (auto& v : out) v /= s;
  return out;
}

/// Triple-loop evaluation of W^T x + (alpha/r) sum_i route_i B_i^T A_i^T x.
inline std::vector<long double> naive_moe(const AdapterLayer& layer, const Vector& x, const Vector& route) {
  const auto& c = layer.config();
  std::vector<long double> out(c.out_dim, 0.0L);
  for (std::size_t o = 0; o < c.out_dim; ++o) {
    for (std::size_t k = 0; k < c.in_dim; ++k) {
      out[o] += static_cast<long double>(layer.base_weight()(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(o))) *
                x[static_cast<Eigen::Index>(k)];
    }
  }
  const long double scale = static_cast<long double>(c.scale_alpha) / static_cast<long double>(c.total_rank);
  for (std::size_t i = 0; i < c.n_experts; ++i) {
    const auto& e = layer.expert(i);
    std::vector<long double> h(static_cast<std::size_t>(e.a.cols()), 0.0L);
    for (Eigen::Index j = 0; j < e.a.cols(); ++j) {
      for (Eigen::Index k = 0; k < e.a.rows(); ++k) h[static_cast<std::size_t>(j)] += static_cast<long double>(e.a(k, j)) * x[k];
    }
    for (std::size_t o = 0; o < c.out_dim; ++o) {
      long double y = 0.0L;
      for (Eigen::Index j = 0; j < e.b.rows(); ++j) {
        y += static_cast<long double>(e.b(j, static_cast<Eigen::Index>(o))) * h[static_cast<std::size_t>(j)];
      }
      out[o] += scale * static_cast<long double>(route[static_cast<Eigen::Index>(i)]) * y;
    }
  }
  return out;
}

}  // namespace clmoe::testing
