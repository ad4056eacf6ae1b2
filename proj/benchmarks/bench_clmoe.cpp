// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "clmoe/continual_trainer.hpp"
#include "clmoe/moe_adapter.hpp"
#include "clmoe/momentum_merge.hpp"
#include "clmoe/seed.hpp"

namespace clmoe {
namespace {

AdapterLayer make_layer(std::size_t dim, std::size_t n, std::size_t rank) {
  Rng rng = make_rng(1, "bench");
  LayerConfig cfg{dim, dim, n, rank, 2.0 * static_cast<double>(rank)};
  auto layer = AdapterLayer::initialize(cfg, Matrix::Random(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)),
                                        {0.5, 0.5}, rng);
  for (std::size_t i = 0; i < n; ++i) layer.mutable_expert(i).b.setRandom();
  return layer;
}

void BM_AdapterForward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto layer = make_layer(dim, 8, 16);
  const Vector x = Vector::Random(static_cast<Eigen::Index>(dim));
  for (auto _ : state) {
    benchmark::DoNotOptimize(moe_forward(layer, x, gate_forward(layer, x)));
  }
}
BENCHMARK(BM_AdapterForward)->Arg(32)->Arg(128);

void BM_AdapterBackward(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto layer = make_layer(dim, 8, 16);
  const Vector x = Vector::Random(static_cast<Eigen::Index>(dim));
  const Vector u = Vector::Random(static_cast<Eigen::Index>(dim));
  const auto trace = forward_with_trace(layer, x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(adapter_backward(layer, trace, u));
  }
}
BENCHMARK(BM_AdapterBackward)->Arg(32)->Arg(128);

void BM_MomentumMerge(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto a = make_layer(dim, 8, 16), b = make_layer(dim, 8, 16);
  AdapterStack sa({a}), sb({b});
  const auto pa = ExpertSnapshot::of(sa), pb = ExpertSnapshot::of(sb);
  const std::vector<LambdaVector> lam{classify_and_build_lambda({0, 1}, {1, 2}, 8, 0.7)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(merge_experts(pa, pb, lam));
  }
}
BENCHMARK(BM_MomentumMerge)->Arg(32)->Arg(128);

void BM_TrainOneTask(benchmark::State& state) {
  SyntheticStreamSpec spec;
  spec.n_tasks = 1;
  const auto stream = generate_stream(spec);
  const TrainConfig config;
  const auto s = initial_state(config, TrainMode::Full, stream);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_task(s.stack, stream.tasks[0].train, config, 1, 1, stream.vocab_size));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(stream.tasks[0].train.size() * config.epochs_per_task));
}
BENCHMARK(BM_TrainOneTask)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace clmoe

BENCHMARK_MAIN();
