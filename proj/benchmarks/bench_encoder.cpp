#include <benchmark/benchmark.h>

#include "dept/encoder.hpp"
#include "dept/sim.hpp"

using namespace dept;

namespace {

struct Setup {
  Network net;
  DeptModel model;
  TokenInput input;

  explicit Setup(int t_max)
      : net(build_grid_network(3, 3, 300.0, FlowPreset::GridBi)),
        model(
            [&] {
              EncoderConfig cfg;
              cfg.layers = 2;
              cfg.heads = 4;
              cfg.d_model = 64;
              cfg.policy_dim = 8;
              cfg.action_count = kPhaseCount;
              cfg.feature_dim = 2 * kMovementsPerIntersection;
              cfg.t_max = t_max;
              return cfg;
            }(),
            net.graph(), 100.0, 7) {
    Rng rng(8);
    const int64_t n = model.geometry().n_tokens;
    input.features = rng.normal_tensor({n, model.config().feature_dim}, 0.0, 1.0);
    for (int64_t t = 0; t < n; ++t) {
      input.actions.push_back(rng.uniform_int(0, kPhaseCount - 1));
      input.valid.push_back(1);
    }
  }
};

}  // namespace

static void BM_ForwardQ(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.model.q_values(s.input).data().data());
  }
}
BENCHMARK(BM_ForwardQ)->Arg(5)->Arg(10);

static void BM_ForwardBackward(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    backward(sum(s.model.forward_q(s.input)));
    s.model.params().zero_grads();
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(5)->Arg(10);

static void BM_DumpAttention(benchmark::State& state) {
  Setup s(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.model.dump_attention(s.input, 1, 0).total.data().data());
  }
}
BENCHMARK(BM_DumpAttention);
