#include <benchmark/benchmark.h>

#include "dept/controllers.hpp"
#include "dept/sim.hpp"

using namespace dept;

static void BM_SimHourGrid6(benchmark::State& state) {
  for (auto _ : state) {
    auto [net, sim] = build_grid(6, 6, 300.0, FlowPreset::GridBi, 1);
    MaxPressureController mp;
    for (int i = 0; i < 360; ++i) step(net, sim, mp.decide(net, sim), 10);
    benchmark::DoNotOptimize(metrics(net, sim, 3600.0).avg_travel_time_s);
  }
}
BENCHMARK(BM_SimHourGrid6);

static void BM_FixedTimeDecision(benchmark::State& state) {
  auto [net, sim] = build_grid(6, 6, 300.0, FlowPreset::GridBi, 2);
  FixedTimeController ft(net);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ft.decide(net, sim).data());
  }
}
BENCHMARK(BM_FixedTimeDecision);

static void BM_MaxPressureDecision(benchmark::State& state) {
  auto [net, sim] = build_grid(6, 6, 300.0, FlowPreset::GridBi, 3);
  step(net, sim, std::vector<int>(36, 0), 600);
  MaxPressureController mp;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mp.decide(net, sim).data());
  }
}
BENCHMARK(BM_MaxPressureDecision);
