#include "dept/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dept {

Parameter* ParamStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return params_.back().get();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

int64_t ParamStore::total_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (params_.size() != other.params_.size())
    throw std::invalid_argument("ParamStore::copy_values_from: size mismatch");
  for (size_t i = 0; i < params_.size(); ++i) {
    const Parameter& src = *other.params_[i];
    Parameter& dst = *params_[i];
    if (dst.name != src.name || !dst.value.same_shape(src.value))
      throw std::invalid_argument("ParamStore::copy_values_from: mismatch at " + dst.name);
    dst.value = src.value;
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.learning_rate < 0.0)
    throw std::invalid_argument("AdamOptimizer: negative learning rate");
  if (cfg_.beta1 <= 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 <= 0.0 || cfg_.beta2 >= 1.0)
    throw std::invalid_argument("AdamOptimizer: decay rates must lie in (0,1)");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
  }
}

void AdamOptimizer::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.gradient.all_finite())
      throw std::runtime_error("AdamOptimizer: non-finite gradient in " + p.name);
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.gradient[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    p.zero_grad();
  }
}

double gradient_check(const std::function<VarPtr()>& build, const std::vector<Parameter*>& params,
                      double h, double floor) {
  if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be positive");

  for (Parameter* p : params) p->zero_grad();
  {
    VarPtr out = build();
    backward(out);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->gradient);

  auto eval = [&]() {
    NoGradGuard ng;
    return build()->value.item();
  };
  const double scale = std::max(1.0, std::abs(eval()));
  const double effective_floor = floor * scale;

  double worst = 0.0;
  for (size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double fp = eval();
      p.value[i] = orig - h;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), effective_floor});
      worst = std::max(worst, rel);
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace dept
