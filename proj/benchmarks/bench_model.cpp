#include <benchmark/benchmark.h>

#include "phonolens/interventions.hpp"
#include "phonolens/model.hpp"
#include "phonolens/patching.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/synthetic.hpp"

using namespace phonolens;

static void BM_Forward(benchmark::State& state) {
  const auto model = make_tiny_model(1);
  const auto tokens = model.tokenize_prompt(rhyme_prompt("clean"));
  for (auto _ : state) {
    auto r = model.transformer().forward(tokens);
    benchmark::DoNotOptimize(r.logits.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(tokens.size()));
}
BENCHMARK(BM_Forward);

static void BM_GreedyKvCache(benchmark::State& state) {
  const auto model = make_tiny_model(1);
  const auto tokens = model.tokenize_prompt(rhyme_prompt("clean"));
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto out = greedy_continue(model, tokens, n, nullptr, nullptr);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_GreedyKvCache)->Arg(8)->Arg(32);

static void BM_PatchScan(benchmark::State& state) {
  const auto cm = make_copy_head_model(3);
  const auto lex = tiny_lexicon();
  const auto built = build_pairs(cm.model, default_word_pairs(), lex);
  const auto mode = state.range(0) == 0 ? PositionMode::final : PositionMode::all;
  for (auto _ : state) {
    auto grid = patch_scan(cm.model, built.pairs, mode);
    benchmark::DoNotOptimize(grid.values.data());
  }
}
BENCHMARK(BM_PatchScan)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
