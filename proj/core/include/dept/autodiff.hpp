#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dept/tensor.hpp"

namespace dept {

struct Parameter;

struct Variable;
using VarPtr = std::shared_ptr<Variable>;

/// One node of the dynamically built computation graph. Forward values are
/// computed eagerly when an op is applied; `backward_fn` pulls this node's
/// gradient into its parents.
struct Variable {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<VarPtr> parents;
  std::function<void(Variable&)> backward_fn;
  Parameter* param = nullptr;  // set when this is a leaf bound to a Parameter

  Tensor& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

/// While disabled, ops compute values but record no graph (rollouts, targets).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Leaf holding a constant (no gradient).
VarPtr constant(Tensor value);
/// Leaf bound to a Parameter; backward accumulates into Parameter::gradient.
VarPtr leaf(Parameter& p);

// Op set. Inputs are matrices unless stated otherwise; every op validates
// shapes and names itself in the error message.
VarPtr matmul(const VarPtr& a, const VarPtr& b, bool trans_a = false, bool trans_b = false);
/// Same-shape addition, or (m x n) + (1 x n) row broadcast.
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr scalar_mul(double s, const VarPtr& a);
/// Elementwise product, same shapes.
VarPtr mul(const VarPtr& a, const VarPtr& b);
/// Concatenate along columns; all inputs share the row count.
VarPtr concat_cols(const std::vector<VarPtr>& parts);
/// Row-wise softmax along the last dimension. `mask` (optional, same shape)
/// marks entries to exclude: they receive exactly zero weight. A fully masked
/// row is rejected.
VarPtr row_softmax(const VarPtr& a, const std::vector<uint8_t>* mask = nullptr);
/// Layer normalization over the last dimension with learned gain/bias (1 x n).
VarPtr layer_norm(const VarPtr& x, const VarPtr& gain, const VarPtr& bias, double eps = 1e-5);
VarPtr gelu(const VarPtr& a);
VarPtr softplus(const VarPtr& a);
/// Gather rows of `table` (R x C) by index; backward scatters into the table.
VarPtr gather_rows(const VarPtr& table, std::vector<int64_t> indices);
VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape);
VarPtr sum(const VarPtr& a);  // scalar
VarPtr mse_loss(const VarPtr& pred, const Tensor& target);
/// Mean over rows of softmax cross-entropy against integer class targets.
VarPtr cross_entropy_with_logits(const VarPtr& logits, const std::vector<int64_t>& targets);
VarPtr huber_loss(const VarPtr& pred, const Tensor& target, double delta = 1.0);

/// Reverse-mode sweep from a scalar output. Gradients of Parameters
/// accumulate across calls; intermediate gradients are reset per call.
void backward(const VarPtr& output);

}  // namespace dept
