#include <benchmark/benchmark.h>

#include <random>

#include "spkemb/audio.hpp"

using namespace spkemb;

static void BM_Fbank(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::normal_distribution<float> g(0.0f, 0.1f);
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(state.range(0)) * 16000);
  for (float& s : w.samples) s = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(fbank(w));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Fbank)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_Featurize(benchmark::State& state) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g(0.0f, 0.1f);
  Waveform w;
  w.samples.resize(3 * 16000);
  for (float& s : w.samples) s = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(featurize(w));
}
BENCHMARK(BM_Featurize)->Unit(benchmark::kMillisecond);
