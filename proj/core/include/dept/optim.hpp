#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dept/autodiff.hpp"
#include "dept/tensor.hpp"

namespace dept {

/// A named learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), gradient(Tensor::zeros(value.shape())) {}

  void zero_grad() { gradient.fill(0.0); }
};

/// Ordered registry of parameters; ordering is the serialization and
/// optimizer-state order, so it must be construction-deterministic.
class ParamStore {
 public:
  Parameter* add(std::string name, Tensor value);
  Parameter* find(const std::string& name);
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  void zero_grads();
  int64_t total_count() const;

  /// Copies every value from `other` (shapes and names must line up).
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Gradients are zeroed after each step.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, OptimizerConfig cfg);

  void step();
  int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  int64_t step_count_ = 0;
};

/// Central-difference gradient check. `build` must deterministically rebuild
/// the scalar expression from the current parameter values. Returns the worst
/// relative error |analytic - numeric| / max(|analytic|, |numeric|, floor')
/// over every coordinate of every parameter, where floor' scales the given
/// floor by max(1, |f|) so that near-zero gradients are judged against the
/// cancellation noise of the difference quotient rather than against zero.
double gradient_check(const std::function<VarPtr()>& build, const std::vector<Parameter*>& params,
                      double h = 1e-5, double floor = 1e-5);

}  // namespace dept
