// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include <vector>

#include "p2p/engine.hpp"
#include "p2p/oracle.hpp"
#include "p2p/scenario.hpp"

using namespace p2p;

namespace {

Market three_pair_market() {
  RandomScenarioOptions o;
  o.max_producers = 1;
  o.max_consumers = 3;
  for (std::uint64_t seed = 1;; ++seed) {
    auto m = random_scenario(seed, o).market();
    if (m.trade_pairs().size() == 3) return m;
  }
}

std::vector<Market> batch(std::size_t n) {
  std::vector<Market> out;
  for (std::uint64_t seed = 1; seed <= n; ++seed) out.push_back(random_scenario(seed).market());
  return out;
}

void BM_GridSearch(benchmark::State& state) {
  const auto m = three_pair_market();
  for (auto _ : state) benchmark::DoNotOptimize(grid_search(m, 0.2));
}

void BM_GridSearchSerial(benchmark::State& state) {
  const auto m = three_pair_market();
  for (auto _ : state) benchmark::DoNotOptimize(grid_search_serial(m, 0.2));
}

void BM_ClearingBatch(benchmark::State& state) {
  const auto markets = batch(static_cast<std::size_t>(state.range(0)));
  const SolverConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(run_clearing_batch(markets, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ClearingBatchSerial(benchmark::State& state) {
  const auto markets = batch(static_cast<std::size_t>(state.range(0)));
  const SolverConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(run_clearing_batch_serial(markets, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PaperScenario(benchmark::State& state) {
  const auto sc = paper_scenario();
  const auto m = sc.market();
  for (auto _ : state) benchmark::DoNotOptimize(run_clearing(m, sc.solver));
}

}  // namespace

BENCHMARK(BM_GridSearch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridSearchSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClearingBatch)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ClearingBatchSerial)->Arg(16)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PaperScenario)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
