#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "spkemb/training.hpp"

using namespace spkemb;

namespace {

struct Batch {
  Tensor embeddings;
  std::vector<std::size_t> speakers;
  BatchPlan plan;
};

Batch random_batch(std::size_t pairs, std::size_t partitions) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g;
  const std::size_t D = 128;
  Batch b{Tensor({2 * pairs, D}), {}, {}};
  for (std::size_t r = 0; r < 2 * pairs; ++r) {
    double n = 0;
    for (std::size_t d = 0; d < D; ++d) {
      const float v = g(rng);
      b.embeddings[r * D + d] = v;
      n += double(v) * v;
    }
    for (std::size_t d = 0; d < D; ++d) b.embeddings[r * D + d] /= float(std::sqrt(n));
  }
  for (std::size_t i = 0; i < pairs; ++i) b.speakers.push_back(i % 40);
  b.plan.num_pairs = pairs;
  b.plan.partitions = partitions;
  return b;
}

}  // namespace

static void BM_MineHard(benchmark::State& state) {
  const Batch b = random_batch(512, 8);
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(mine_negatives(b.embeddings, b.speakers, b.plan, MinerMode::kHard, k, 0.1));
  state.SetLabel("scan_k=" + std::to_string(k));
}
BENCHMARK(BM_MineHard)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
