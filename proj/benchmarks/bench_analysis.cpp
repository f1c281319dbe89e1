#include <random>

#include <benchmark/benchmark.h>

#include "phonolens/geometry.hpp"
#include "phonolens/probe.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;

static void BM_FitPca(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  const Eigen::Index d = 256;
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd;
  Matrix data(n, d);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = nd(rng);
  for (auto _ : state) {
    auto pca = fit_pca(data, 8);
    benchmark::DoNotOptimize(pca.components.data());
  }
}
BENCHMARK(BM_FitPca)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_TrainProbe(benchmark::State& state) {
  const auto planted = planted_probe_dataset(static_cast<std::size_t>(state.range(0)), 64, 0.0, 3);
  ProbeConfig config;
  config.epochs = 50;
  for (auto _ : state) {
    auto probe = train_probe(planted.dataset, config);
    benchmark::DoNotOptimize(probe.weights.data());
  }
}
BENCHMARK(BM_TrainProbe)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);
