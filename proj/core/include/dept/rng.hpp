#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dept/tensor.hpp"

namespace dept {

/// Derives an independent 64-bit seed from a master seed and a purpose tag, so
/// that every consumer (env rounds, init, exploration, replay, ...) gets its
/// own deterministic stream.
uint64_t derive_seed(uint64_t master, std::string_view tag);
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index);

/// Thin wrapper over mt19937_64 with the distributions we need.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<int>(mean)(gen_);
  }

  Tensor normal_tensor(std::vector<int64_t> shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = normal(mean, stddev);
    return t;
  }

  Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = uniform(lo, hi);
    return t;
  }

  /// Glorot-style uniform init for a (fan_out x fan_in) weight matrix.
  Tensor xavier_tensor(int64_t fan_out, int64_t fan_in) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform_tensor({fan_out, fan_in}, -a, a);
  }

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dept
