#include <benchmark/benchmark.h>

#include <random>

#include "spkemb/layers.hpp"
#include "spkemb/model.hpp"

using namespace spkemb;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 0.1f);
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = g(rng);
  return t;
}

}  // namespace

static void BM_Conv2d3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({8, c, 32, 16}, 1);
  const Tensor k = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, {1, 1, 1, 1}));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2d3x3)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({8, c, 32, 16}, 1);
  const Tensor k = random_tensor({c, c, 3, 3}, 2);
  const Tensor dy = random_tensor({8, c, 32, 16}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, k, dy, {1, 1, 1, 1}));
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_GruLayer(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  GruParams<float> p{random_tensor({256, 3 * h}, 1), random_tensor({h, 3 * h}, 2),
                     random_tensor({3 * h}, 3)};
  const Tensor x = random_tensor({8, 64, 256}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gru_layer(x, p));
  state.SetItemsProcessed(state.iterations() * 8 * 64);
}
BENCHMARK(BM_GruLayer)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_EmbedToyModel(benchmark::State& state) {
  const ModelParams p = build(ArchSpec::from_name(state.range(0) ? "toy-gru" : "toy-rescnn"), 1);
  const Tensor x = random_tensor({16, 1, 64, kFeatureDim}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(embed_batch(p, x));
  state.SetLabel(p.arch.name);
}
BENCHMARK(BM_EmbedToyModel)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
