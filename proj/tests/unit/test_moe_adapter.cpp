// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "clmoe/error.hpp"
#include "clmoe/moe_adapter.hpp"
#include "support.hpp"

namespace clmoe {
namespace {

using testing::naive_moe;
using testing::random_layer;
using testing::random_matrix;
using testing::random_simplex;
using testing::random_vector;

AdapterLayer layer_with_gate(const Matrix& w_gate) {
  const auto in = static_cast<std::size_t>(w_gate.rows());
  const auto n = static_cast<std::size_t>(w_gate.cols());
  LayerConfig cfg{in, 2, n, n, 1.0};
  std::vector<ExpertParams> experts(n, {Matrix::Zero(static_cast<Eigen::Index>(in), 1), Matrix::Zero(1, 2)});
  return AdapterLayer(cfg, Matrix::Zero(static_cast<Eigen::Index>(in), 2), experts, {w_gate});
}

TEST(GateForward, UniformLogitsGiveUniformWeights) {
  const auto layer = layer_with_gate(Matrix::Zero(3, 4));
  const auto w = gate_forward(layer, Vector::Ones(3));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w[i], 0.25);
}

TEST(GateForward, ClosedFormTwoExperts) {
  Matrix g(1, 2);
  g << std::log(2.0), 0.0;
  const auto w = gate_forward(layer_with_gate(g), Vector::Ones(1));
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-15);
}

TEST(GateForward, MatchesExtendedPrecisionSoftmax) {
  std::mt19937_64 rng(11);
  for (int c = 0; c < 200; ++c) {
    const Matrix g = random_matrix(5, 8, rng, 2.0);
    const Vector x = random_vector(5, rng);
    const auto w = gate_forward(layer_with_gate(g), x);
    std::vector<long double> z(8, 0.0L);
    for (int i = 0; i < 8; ++i) {
      for (int k = 0; k < 5; ++k) z[static_cast<std::size_t>(i)] += static_cast<long double>(g(k, i)) * x[k];
    }
    const auto ref = testing::softmax_ld(z);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(w[i], static_cast<double>(ref[i]), 1e-10);
  }
}

TEST(GateForward, NormalisedForExtremeLogits) {
  std::mt19937_64 rng(12);
  for (int c = 0; c < 100; ++c) {
    const auto w = gate_forward(layer_with_gate(random_matrix(4, 8, rng, 200.0)), random_vector(4, rng));
    EXPECT_NEAR(w.values().sum(), 1.0, 1e-6);
    EXPECT_GE(w.values().minCoeff(), 0.0);
  }
}

TEST(GateForward, RejectsNonFiniteInput) {
  const auto layer = layer_with_gate(Matrix::Zero(2, 2));
  Vector x(2);
  x << 1.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(gate_forward(layer, x), ValidationError);
}

TEST(RouterWeights, RejectsInvalidVectors) {
  EXPECT_THROW(RouterWeights(Vector::Constant(3, 0.5)), ValidationError);
  Vector neg(2);
  neg << 1.5, -0.5;
  EXPECT_THROW(RouterWeights{neg}, ValidationError);
  EXPECT_THROW(RouterWeights{Vector()}, ValidationError);
}

TEST(MoeForward, ZeroAdaptersGiveBaseOutputExactly) {
  std::mt19937_64 rng(21);
  for (int c = 0; c < 50; ++c) {
    auto layer = random_layer(6, 5, 4, 8, 16.0, rng);
    for (std::size_t i = 0; i < 4; ++i) layer.mutable_expert(i).b.setZero();
    const Vector x = random_vector(6, rng);
    const Vector y = moe_forward(layer, x, random_simplex(4, rng));
    const Vector base = layer.base_weight().transpose() * x;
    for (Eigen::Index o = 0; o < y.size(); ++o) EXPECT_EQ(y[o], base[o]);
  }
}

TEST(MoeForward, SingleExpertReduction) {
  std::mt19937_64 rng(22);
  const auto layer = random_layer(4, 3, 1, 2, 6.0, rng);
  const Vector x = random_vector(4, rng);
  const Vector y = moe_forward(layer, x, RouterWeights(Vector::Ones(1)));
  const Vector expected = layer.base_weight().transpose() * x +
                          3.0 * layer.expert(0).b.transpose() * (layer.expert(0).a.transpose() * x);
  EXPECT_LT((y - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MoeForward, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(23);
  for (int c = 0; c < 200; ++c) {
    const auto layer = random_layer(6, 6, 4, 8, 16.0, rng);
    const Vector x = random_vector(6, rng);
    const auto route = random_simplex(4, rng);
    const Vector y = moe_forward(layer, x, route);
    const auto ref = naive_moe(layer, x, route.values());
    for (std::size_t o = 0; o < 6; ++o) EXPECT_NEAR(y[static_cast<Eigen::Index>(o)], static_cast<double>(ref[o]), 1e-8);
  }
}

TEST(MoeForward, RejectsShapeMismatch) {
  std::mt19937_64 rng(24);
  const auto layer = random_layer(4, 3, 2, 2, 1.0, rng);
  EXPECT_THROW(moe_forward(layer, Vector::Ones(5), RouterWeights::uniform(2)), ValidationError);
  EXPECT_THROW(moe_forward(layer, Vector::Ones(4), RouterWeights::uniform(3)), ValidationError);
}

TEST(MoeForward, AdapterPathIsHomogeneousInB) {
  std::mt19937_64 rng(25);
  for (int c = 0; c < 50; ++c) {
    auto layer = random_layer(5, 4, 4, 8, 8.0, rng);
    const Vector x = random_vector(5, rng);
    const auto route = random_simplex(4, rng);
    const Vector base = layer.base_weight().transpose() * x;
    const Vector before = moe_forward(layer, x, route) - base;
    const double scale = 4.0;  // a power of two keeps the comparison exact
    for (std::size_t i = 0; i < 4; ++i) layer.mutable_expert(i).b *= scale;
    const Vector after = moe_forward(layer, x, route) - base;
    EXPECT_LT((after - scale * before).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + after.cwiseAbs().maxCoeff()));
  }
}

TEST(MoeForward, BatchIsBitIdenticalToLoop) {
  std::mt19937_64 rng(26);
  const auto layer = random_layer(6, 4, 4, 8, 16.0, rng);
  std::vector<Vector> xs;
  std::vector<RouterWeights> routes;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(random_vector(6, rng));
    routes.push_back(random_simplex(4, rng));
  }
  const auto gates = gate_forward_batch(layer, xs);
  const auto outs = moe_forward_batch(layer, xs, routes);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(gates[i].values(), gate_forward(layer, xs[i]).values());
    EXPECT_EQ(outs[i], moe_forward(layer, xs[i], routes[i]));
  }
}

TEST(DualRoute, InstanceAndTaskLimits) {
  std::mt19937_64 rng(31);
  const auto layer = random_layer(6, 4, 4, 8, 16.0, rng);
  const Vector x = random_vector(6, rng);
  const auto wi = random_simplex(4, rng);
  const auto wt = random_simplex(4, rng);
  EXPECT_EQ(dual_route_forward(layer, x, wi, wt, 1.0), moe_forward(layer, x, wi));
  EXPECT_EQ(dual_route_forward(layer, x, wi, wt, 0.0), moe_forward(layer, x, wt));
  for (double beta : {0.0, 0.3, 0.5, 1.0}) {
    EXPECT_LT((dual_route_forward(layer, x, wi, wi, beta) - moe_forward(layer, x, wi)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(DualRoute, EqualsForwardWithBlendedRoute) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int c = 0; c < 200; ++c) {
    const auto layer = random_layer(5, 5, 4, 8, 16.0, rng);
    const Vector x = random_vector(5, rng);
    const auto wi = random_simplex(4, rng);
    const auto wt = random_simplex(4, rng);
    const double beta = u01(rng);
    const Vector blended = beta * wi.values() + (1.0 - beta) * wt.values();
    const Vector y = dual_route_forward(layer, x, wi, wt, beta);
    // Two-branch form, evaluated independently of the library.
    const auto yi = naive_moe(layer, x, wi.values());
    const auto yt = naive_moe(layer, x, wt.values());
    const Vector base = layer.base_weight().transpose() * x;
    for (Eigen::Index o = 0; o < 5; ++o) {
      const auto k = static_cast<std::size_t>(o);
      const long double two_branch = beta * (yi[k] - base[o]) + (1.0 - beta) * (yt[k] - base[o]) + base[o];
      EXPECT_NEAR(y[o], static_cast<double>(two_branch), 1e-10);
    }
    EXPECT_LT((y - moe_forward(layer, x, RouterWeights(blended))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DualRoute, RejectsBetaOutOfRange) {
  std::mt19937_64 rng(33);
  const auto layer = random_layer(3, 2, 2, 2, 1.0, rng);
  const auto w = RouterWeights::uniform(2);
  EXPECT_THROW(dual_route_forward(layer, Vector::Ones(3), w, w, 1.5), ValidationError);
  EXPECT_THROW(dual_route_forward(layer, Vector::Ones(3), w, w, -0.1), ValidationError);
}

// <u, f(x)> with the layer's current parameters.
double probe(const AdapterLayer& layer, const Vector& x, const Vector& u) {
  return u.dot(forward_with_trace(layer, x).output);
}

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

TEST(AdapterBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(41);
  const auto layer = random_layer(5, 4, 2, 4, 8.0, rng);
  const auto trace = forward_with_trace(layer, random_vector(5, rng));
  const auto g = adapter_backward(layer, trace, Vector::Zero(4));
  for (const auto& e : g.experts) {
    EXPECT_EQ(e.a.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(e.b.cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(g.w_gate.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AdapterBackward, ZeroBKillsAAndGateGradients) {
  std::mt19937_64 rng(42);
  auto layer = random_layer(5, 4, 3, 6, 8.0, rng);
  for (std::size_t i = 0; i < 3; ++i) layer.mutable_expert(i).b.setZero();
  const auto trace = forward_with_trace(layer, random_vector(5, rng));
  const auto g = adapter_backward(layer, trace, random_vector(4, rng));
  for (const auto& e : g.experts) EXPECT_EQ(e.a.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.w_gate.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AdapterBackward, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(43);
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  std::uniform_int_distribution<std::size_t> experts(1, 4);
  const double h = 1e-5;
  double worst = 0.0;
  for (int c = 0; c < 25; ++c) {
    const std::size_t in = dim(rng), out = dim(rng), n = experts(rng);
    const std::size_t rank = n * std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    auto layer = random_layer(in, out, n, rank, 2.0 * static_cast<double>(rank), rng);
    const Vector x = random_vector(in, rng);
    const Vector u = random_vector(out, rng);
    const auto g = adapter_backward(layer, forward_with_trace(layer, x), u);

    const auto check = [&](double analytic, auto&& param) {
      const double saved = param();
      param() = saved + h;
      const double up = probe(layer, x, u);
      param() = saved - h;
      const double down = probe(layer, x, u);
      param() = saved;
      const double err = relative_error(analytic, (up - down) / (2.0 * h));
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-4);
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (Eigen::Index r = 0; r < layer.expert(i).a.rows(); ++r) {
        for (Eigen::Index k = 0; k < layer.expert(i).a.cols(); ++k) {
          check(g.experts[i].a(r, k), [&]() -> double& { return layer.mutable_expert(i).a(r, k); });
        }
      }
      for (Eigen::Index r = 0; r < layer.expert(i).b.rows(); ++r) {
        for (Eigen::Index k = 0; k < layer.expert(i).b.cols(); ++k) {
          check(g.experts[i].b(r, k), [&]() -> double& { return layer.mutable_expert(i).b(r, k); });
        }
      }
    }
    for (Eigen::Index r = 0; r < layer.gate().w_gate.rows(); ++r) {
      for (Eigen::Index k = 0; k < layer.gate().w_gate.cols(); ++k) {
        check(g.w_gate(r, k), [&]() -> double& { return layer.mutable_gate().w_gate(r, k); });
      }
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(AdapterBackward, RejectsStaleTrace) {
  std::mt19937_64 rng(44);
  auto layer = random_layer(3, 2, 2, 2, 1.0, rng);
  const auto trace = forward_with_trace(layer, random_vector(3, rng));
  layer.mutable_expert(0).a(0, 0) += 1.0;
  EXPECT_THROW(adapter_backward(layer, trace, Vector::Ones(2)), UsageError);
  const auto other = random_layer(3, 2, 2, 2, 1.0, rng);
  EXPECT_THROW(adapter_backward(other, forward_with_trace(layer, Vector::Ones(3)), Vector::Ones(2)), UsageError);
}

TEST(LayerConfig, RejectsIndivisibleRank) {
  LayerConfig cfg{4, 4, 3, 8, 1.0};
  EXPECT_THROW(cfg.validate(), ValidationError);
  LayerConfig ok{4, 4, 4, 8, 1.0};
  EXPECT_NO_THROW(ok.validate());
  EXPECT_DOUBLE_EQ(ok.scaling(), 1.0 / 8.0);
}

TEST(AdapterLayer, InitializeStartsAsNoOp) {
  Rng rng = make_rng(3, "init");
  LayerConfig cfg{6, 4, 4, 8, 16.0};
  std::mt19937_64 r2(5);
  const Matrix base = random_matrix(6, 4, r2);
  const auto layer = AdapterLayer::initialize(cfg, base, {0.1, 0.1}, rng);
  for (const auto& e : layer.experts()) EXPECT_EQ(e.b.cwiseAbs().maxCoeff(), 0.0);
  const Vector x = random_vector(6, r2);
  EXPECT_EQ(moe_forward(layer, x, gate_forward(layer, x)), Vector(base.transpose() * x));
}

}  // namespace
}  // namespace clmoe
