#include <benchmark/benchmark.h>

#include "dept/autodiff.hpp"
#include "dept/optim.hpp"
#include "dept/rng.hpp"

using namespace dept;

static void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  const VarPtr a = constant(rng.normal_tensor({n, n}, 0.0, 1.0));
  const VarPtr b = constant(rng.normal_tensor({n, n}, 0.0, 1.0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b)->value.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

static void BM_MaskedSoftmaxBackward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(2);
  Parameter scores("s", rng.normal_tensor({n, n}, 0.0, 1.0));
  std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
  for (int64_t q = 0; q < n; ++q)
    for (int64_t k = 0; k < q; ++k) mask[static_cast<size_t>(q * n + k)] = 1;
  for (auto _ : state) {
    backward(sum(row_softmax(leaf(scores), &mask)));
    scores.zero_grad();
  }
}
BENCHMARK(BM_MaskedSoftmaxBackward)->Arg(45)->Arg(90);

static void BM_MlpRegressionStep(benchmark::State& state) {
  Rng rng(3);
  ParamStore store;
  Parameter* w1 = store.add("w1", rng.xavier_tensor(16, 1));
  Parameter* b1 = store.add("b1", Tensor({1, 16}));
  Parameter* w2 = store.add("w2", rng.xavier_tensor(1, 16));
  Parameter* b2 = store.add("b2", Tensor({1, 1}));
  const VarPtr x = constant(rng.normal_tensor({128, 1}, 0.0, 1.5));
  const Tensor y = rng.normal_tensor({128, 1}, 0.0, 1.0);
  std::vector<Parameter*> params{w1, b1, w2, b2};
  AdamOptimizer opt(params, {});
  for (auto _ : state) {
    VarPtr h = gelu(add(matmul(x, leaf(*w1), false, true), leaf(*b1)));
    backward(mse_loss(add(matmul(h, leaf(*w2), false, true), leaf(*b2)), y));
    opt.step();
  }
}
BENCHMARK(BM_MlpRegressionStep);
