#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "aquatwin/conformal.hpp"
#include "aquatwin/forecaster.hpp"
#include "aquatwin/hydraulics.hpp"
#include "aquatwin/network.hpp"
#include "aquatwin/sampling.hpp"
#include "aquatwin/scenario.hpp"

using namespace aquatwin;

namespace {

NetworkModel grid_for(std::int64_t nodes) {
  // 9 rows for the 388-node case; otherwise a near-square grid.
  if (nodes == 388) return grid_network(9, 43);
  int rows = 1;
  while (rows * rows < nodes) ++rows;
  return grid_network(rows, static_cast<int>((nodes + rows - 1) / rows));
}

CalibrationTable table_for(std::size_t n) {
  CalibrationTable t;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> q(0.1, 3.0);
  for (std::size_t i = 0; i < n; ++i) t.entries.push_back({std::to_string(i), q(rng), 100, false, {}});
  return t;
}

void BM_ScoreAndSelect(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ConformalScorer scorer(table_for(n));
  std::vector<double> pred(n, 1.0), u(n), hw(n);
  const std::size_t budget = (2 * n) / 5;
  std::mt19937_64 rng(1);
  std::size_t step = 0;
  for (auto _ : state) {
    scorer.score(pred, u, hw);
    auto sel = select_nodes(SamplingPolicy::adaptive(), u, budget, step++, rng);
    benchmark::DoNotOptimize(sel.data());
  }
}
BENCHMARK(BM_ScoreAndSelect)->Arg(32)->Arg(388)->Arg(4000)->Unit(benchmark::kMicrosecond);

void BM_SteadyState(benchmark::State& state) {
  const auto net = state.range(0) == 32 ? hanoi_builtin() : grid_for(state.range(0));
  const auto d = net.base_demands();
  for (auto _ : state) {
    auto s = solve_steady_state(net, d);
    benchmark::DoNotOptimize(s.heads.data());
  }
  state.counters["nodes"] = static_cast<double>(net.node_count());
}
BENCHMARK(BM_SteadyState)->Arg(32)->Arg(388)->Unit(benchmark::kMillisecond);

void BM_LstmForward(benchmark::State& state) {
  LstmHyperparams h;
  h.hidden = static_cast<int>(state.range(0));
  const auto m = init_model(h, {10.0, 2.0}, 3);
  std::vector<double> window(static_cast<std::size_t>(h.lookback), 9.5);
  for (auto _ : state) benchmark::DoNotOptimize(lstm_forward(m, window));
}
BENCHMARK(BM_LstmForward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_ConformalQuantile(benchmark::State& state) {
  std::vector<double> r(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(2);
  for (auto& x : r) x = std::exponential_distribution<double>(1.0)(rng);
  for (auto _ : state) benchmark::DoNotOptimize(conformal_quantile(r, 0.1).value);
}
BENCHMARK(BM_ConformalQuantile)->Arg(1392)->Arg(100000)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
