#include <doctest.h>

#include <cmath>

#include "dept/autodiff.hpp"
#include "dept/optim.hpp"
#include "dept/rng.hpp"

using namespace dept;

TEST_CASE("matmul identity case") {
  VarPtr a = constant(Tensor::matrix({{1, 0}, {0, 1}}));
  VarPtr b = constant(Tensor::matrix({{3, 4}, {5, 6}}));
  const Tensor out = matmul(a, b)->value;
  CHECK(out.at(0, 0) == 3.0);
  CHECK(out.at(0, 1) == 4.0);
  CHECK(out.at(1, 0) == 5.0);
  CHECK(out.at(1, 1) == 6.0);
}

TEST_CASE("matmul rejects inner dimension mismatch") {
  VarPtr a = constant(Tensor::zeros({2, 3}));
  VarPtr b = constant(Tensor::zeros({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
}

TEST_CASE("row softmax of a constant row is uniform") {
  VarPtr a = constant(Tensor::matrix({{0, 0, 0}}));
  const Tensor out = row_softmax(a)->value;
  for (int c = 0; c < 3; ++c) CHECK(out.at(0, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("masked softmax: exact zeros, unmasked rows normalized") {
  Rng rng(7);
  const Tensor scores = rng.normal_tensor({6, 6}, 0.0, 2.0);
  std::vector<uint8_t> mask(36, 0);
  for (int i = 0; i < 36; i += 3) mask[static_cast<size_t>(i)] = 1;
  mask[5] = 0;  // keep row 0 partially visible
  const Tensor out = row_softmax(constant(scores), &mask)->value;
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) {
      if (mask[static_cast<size_t>(r * 6 + c)]) CHECK(out.at(r, c) == 0.0);
      sum += out.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("fully masked softmax row is rejected") {
  VarPtr a = constant(Tensor::matrix({{1, 2}, {3, 4}}));
  std::vector<uint8_t> mask = {1, 1, 0, 0};
  CHECK_THROWS_AS(row_softmax(a, &mask), std::runtime_error);
}

TEST_CASE("layer norm of [1,3] without affine is [-1,1] up to epsilon") {
  Parameter gain("g", Tensor::full({1, 2}, 1.0));
  Parameter bias("b", Tensor({1, 2}));
  const Tensor out = layer_norm(constant(Tensor::matrix({{1, 3}})), leaf(gain), leaf(bias))->value;
  CHECK(out.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("evaluate is deterministic") {
  Rng rng(11);
  const Tensor a = rng.normal_tensor({4, 5}, 0.0, 1.0);
  const Tensor b = rng.normal_tensor({5, 3}, 0.0, 1.0);
  auto run = [&] {
    return gelu(row_softmax(matmul(constant(a), constant(b))))->value;
  };
  const Tensor x = run();
  const Tensor y = run();
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
}

TEST_CASE("backward: sum(W x) gradient is x replicated per row") {
  Parameter w("w", Tensor::matrix({{1, 2}, {3, 4}}));
  const Tensor x = Tensor::matrix({{5}, {7}});
  backward(sum(matmul(leaf(w), constant(x))));
  // d/dW sum(Wx) = [x0 x1; x0 x1]
  CHECK(w.gradient.at(0, 0) == 5.0);
  CHECK(w.gradient.at(0, 1) == 7.0);
  CHECK(w.gradient.at(1, 0) == 5.0);
  CHECK(w.gradient.at(1, 1) == 7.0);
}

TEST_CASE("backward: constant output leaves parameter gradient zero") {
  Parameter w("w", Tensor::matrix({{2, 2}}));
  backward(sum(constant(Tensor::matrix({{1, 2}}))));
  CHECK(w.gradient.at(0, 0) == 0.0);
  CHECK(w.gradient.at(0, 1) == 0.0);
}

TEST_CASE("backward: (w-3)^2 at w=5 gives gradient 4") {
  Parameter w("w", Tensor::scalar(5.0));
  const Tensor target = Tensor::scalar(3.0);
  // (w - 3)^2 via mse against the constant 3.
  backward(mse_loss(leaf(w), target));
  CHECK(w.gradient[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar outputs") {
  Parameter w("w", Tensor::matrix({{1, 2}}));
  CHECK_THROWS_AS(backward(scalar_mul(2.0, leaf(w))), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates parameter gradients") {
  Parameter w("w", Tensor::scalar(1.0));
  backward(sum(leaf(w)));
  backward(sum(leaf(w)));
  CHECK(w.gradient[0] == 2.0);
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Parameter w("w", Tensor::scalar(1.5));
  AdamOptimizer opt({&w}, {.learning_rate = 0.1});
  opt.step();
  CHECK(w.value[0] == 1.5);
}

TEST_CASE("adam first step moves by about lr * sign(grad)") {
  Parameter w("w", Tensor::matrix({{1.0, -2.0}}));
  w.gradient = Tensor::matrix({{0.3, -4.0}});
  const double lr = 0.05;
  AdamOptimizer opt({&w}, {.learning_rate = lr});
  opt.step();
  CHECK(w.value.at(0, 0) == doctest::Approx(1.0 - lr).epsilon(1e-4));
  CHECK(w.value.at(0, 1) == doctest::Approx(-2.0 + lr).epsilon(1e-4));
  // Gradients are zeroed by the step.
  CHECK(w.gradient.at(0, 0) == 0.0);
  CHECK(w.gradient.at(0, 1) == 0.0);
}

TEST_CASE("adam: two steps decrease a convex quadratic") {
  Parameter w("w", Tensor::scalar(4.0));
  const Tensor target = Tensor::scalar(1.0);
  AdamOptimizer opt({&w}, {.learning_rate = 0.1});
  auto loss_value = [&] {
    NoGradGuard ng;
    return mse_loss(leaf(w), target)->value.item();
  };
  const double before = loss_value();
  for (int i = 0; i < 2; ++i) {
    backward(mse_loss(leaf(w), target));
    opt.step();
  }
  CHECK(loss_value() < before);
}

TEST_CASE("adam rejects non-finite gradients with the parameter named") {
  Parameter w("theta.q", Tensor::scalar(1.0));
  w.gradient[0] = std::numeric_limits<double>::quiet_NaN();
  AdamOptimizer opt({&w}, {});
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("theta.q"), std::runtime_error);
}

TEST_CASE("gradient check: quadratic form is far below 1e-7") {
  Rng rng(3);
  Parameter w("w", rng.normal_tensor({3, 3}, 0.0, 1.0));
  const Tensor x = rng.normal_tensor({3, 1}, 0.0, 1.0);
  const double err = gradient_check(
      [&] {
        VarPtr wx = matmul(leaf(w), constant(x));
        return sum(mul(wx, wx));
      },
      {&w});
  CHECK(err < 1e-7);
}

TEST_CASE("gradient check: constant function stays below the floor") {
  Parameter w("w", Tensor::scalar(2.0));
  const double err = gradient_check([&] { return sum(constant(Tensor::scalar(5.0))); }, {&w});
  CHECK(err < 1e-6);
}

TEST_CASE("gradient check across the full op set on random shapes") {
  Rng rng(17);
  for (int rep = 0; rep < 3; ++rep) {
    const int m = rng.uniform_int(2, 4);
    const int k = rng.uniform_int(2, 4);
    const int n = rng.uniform_int(2, 4);
    Parameter a("a", rng.normal_tensor({m, k}, 0.0, 1.0));
    Parameter b("b", rng.normal_tensor({k, n}, 0.0, 1.0));
    Parameter bias("bias", rng.normal_tensor({1, n}, 0.0, 1.0));
    Parameter gain("gain", rng.normal_tensor({1, n}, 1.0, 0.1));
    Parameter table("table", rng.normal_tensor({4, n}, 0.0, 1.0));
    const Tensor target = rng.normal_tensor({m, n}, 0.0, 1.0);
    std::vector<uint8_t> mask(static_cast<size_t>(m * n), 0);
    for (int r = 0; r < m; ++r) mask[static_cast<size_t>(r * n + rng.uniform_int(0, n - 1))] = 1;
    // Keep one visible entry per row guaranteed.
    for (int r = 0; r < m; ++r) mask[static_cast<size_t>(r * n)] = 0;
    std::vector<int64_t> gather_idx;
    for (int r = 0; r < m; ++r) gather_idx.push_back(rng.uniform_int(0, 3));

    const double err = gradient_check(
        [&] {
          VarPtr h = add(matmul(leaf(a), leaf(b)), leaf(bias));
          h = add(h, gather_rows(leaf(table), gather_idx));
          h = mul(h, h);
          h = layer_norm(h, leaf(gain), leaf(bias));
          h = gelu(h);
          VarPtr s = row_softmax(scalar_mul(0.7, h), &mask);
          VarPtr sp = softplus(concat_cols({s, h}));
          VarPtr flat = reshape(sp, {static_cast<int64_t>(m) * 2 * n, 1});
          VarPtr picked = gather_rows(flat, {0, 1, 2});
          return add(add(mse_loss(h, target), huber_loss(picked, Tensor::full({3, 1}, 0.2))),
                     sum(scalar_mul(0.01, sp)));
        },
        {&a, &b, &bias, &gain, &table});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradient check: cross entropy with logits") {
  Rng rng(23);
  Parameter logits("logits", rng.normal_tensor({5, 4}, 0.0, 2.0));
  const std::vector<int64_t> targets = {0, 3, 1, 2, 1};
  const double err = gradient_check(
      [&] { return cross_entropy_with_logits(leaf(logits), targets); }, {&logits});
  CHECK(err < 1e-6);
}

TEST_CASE("no-grad mode skips graph construction") {
  Parameter w("w", Tensor::scalar(1.0));
  NoGradGuard ng;
  VarPtr out = sum(leaf(w));
  CHECK_FALSE(out->requires_grad);
  backward(out);  // no-op
  CHECK(w.gradient[0] == 0.0);
}

TEST_CASE("cross entropy of uniform logits is ln(n)") {
  const Tensor logits = Tensor::zeros({3, 4});
  const double loss =
      cross_entropy_with_logits(constant(logits), {0, 1, 2})->value.item();
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}
