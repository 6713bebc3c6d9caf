#include "dept/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_set>

#include "dept/optim.hpp"

namespace dept {

namespace {

thread_local bool g_grad_enabled = true;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap as_matrix(const Tensor& t) { return ECMap(t.data().data(), t.rows(), t.cols()); }
EMap as_matrix(Tensor& t) { return EMap(t.data().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              Tensor::shape_str(a.shape()) + " vs " +
                              Tensor::shape_str(b.shape()));
}

VarPtr make_node(Tensor value, std::vector<VarPtr> parents,
                 std::function<void(Variable&)> backward_fn) {
  auto out = std::make_shared<Variable>();
  out->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->requires_grad) needs = true;
  }
  out->requires_grad = needs;
  if (needs) {
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
  }
  return out;
}

constexpr double kMaskSurrogate = 1e30;  // additive -inf stand-in before softmax

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

VarPtr constant(Tensor value) {
  auto out = std::make_shared<Variable>();
  out->value = std::move(value);
  return out;
}

VarPtr leaf(Parameter& p) {
  auto out = std::make_shared<Variable>();
  out->value = p.value;
  out->requires_grad = g_grad_enabled;
  out->param = &p;
  return out;
}

VarPtr matmul(const VarPtr& a, const VarPtr& b, bool trans_a, bool trans_b) {
  const Tensor& ta = a->value;
  const Tensor& tb = b->value;
  const int64_t am = trans_a ? ta.cols() : ta.rows();
  const int64_t ak = trans_a ? ta.rows() : ta.cols();
  const int64_t bk = trans_b ? tb.cols() : tb.rows();
  const int64_t bn = trans_b ? tb.rows() : tb.cols();
  if (ak != bk) shape_error("matmul", ta, tb);

  Tensor out({am, bn});
  {
    auto A = as_matrix(ta);
    auto B = as_matrix(tb);
    auto C = as_matrix(out);
    if (!trans_a && !trans_b)
      C.noalias() = A * B;
    else if (trans_a && !trans_b)
      C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A.transpose() * B.transpose();
  }

  return make_node(std::move(out), {a, b}, [trans_a, trans_b](Variable& o) {
    const auto G = as_matrix(o.grad);
    Variable& pa = *o.parents[0];
    Variable& pb = *o.parents[1];
    if (pa.requires_grad) {
      auto dA = as_matrix(pa.ensure_grad());
      auto B = as_matrix(pb.value);
      if (!trans_a && !trans_b)
        dA.noalias() += G * B.transpose();
      else if (trans_a && !trans_b)
        dA.noalias() += B * G.transpose();
      else if (!trans_a && trans_b)
        dA.noalias() += G * B;
      else
        dA.noalias() += B.transpose() * G.transpose();
    }
    if (pb.requires_grad) {
      auto dB = as_matrix(pb.ensure_grad());
      auto A = as_matrix(pa.value);
      if (!trans_a && !trans_b)
        dB.noalias() += A.transpose() * G;
      else if (trans_a && !trans_b)
        dB.noalias() += A * G;
      else if (!trans_a && trans_b)
        dB.noalias() += G.transpose() * A;
      else
        dB.noalias() += G.transpose() * A.transpose();
    }
  });
}

VarPtr add(const VarPtr& a, const VarPtr& b) {
  const Tensor& ta = a->value;
  const Tensor& tb = b->value;
  const bool broadcast = !ta.same_shape(tb);
  if (broadcast && !(tb.rows() == 1 && tb.cols() == ta.cols())) shape_error("add", ta, tb);

  Tensor out = ta;
  const int64_t rows = ta.rows(), cols = ta.cols();
  if (broadcast) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) out[r * cols + c] += tb[c];
  } else {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  }

  return make_node(std::move(out), {a, b}, [broadcast, rows, cols](Variable& o) {
    Variable& pa = *o.parents[0];
    Variable& pb = *o.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      if (broadcast) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
      } else {
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

VarPtr scalar_mul(double s, const VarPtr& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v *= s;
  return make_node(std::move(out), {a}, [s](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * o.grad[i];
  });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
  const Tensor& ta = a->value;
  const Tensor& tb = b->value;
  if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
  Tensor out = ta;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  return make_node(std::move(out), {a, b}, [](Variable& o) {
    Variable& pa = *o.parents[0];
    Variable& pb = *o.parents[1];
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i] * pa.value[i];
    }
  });
}

VarPtr concat_cols(const std::vector<VarPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t rows = parts[0]->value.rows();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) shape_error("concat_cols", parts[0]->value, p->value);
    total += p->value.cols();
  }
  Tensor out({rows, total});
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int64_t c = p->value.cols();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) out[r * total + off + j] = p->value[r * c + j];
    off += c;
  }
  return make_node(std::move(out), parts, [rows, total, offsets](Variable& o) {
    for (size_t k = 0; k < o.parents.size(); ++k) {
      Variable& p = *o.parents[k];
      if (!p.requires_grad) continue;
      Tensor& g = p.ensure_grad();
      const int64_t c = p.value.cols();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < c; ++j) g[r * c + j] += o.grad[r * total + offsets[k] + j];
    }
  });
}

VarPtr row_softmax(const VarPtr& a, const std::vector<uint8_t>* mask) {
  const Tensor& ta = a->value;
  const int64_t rows = ta.rows(), cols = ta.cols();
  if (mask && static_cast<int64_t>(mask->size()) != ta.numel())
    throw std::invalid_argument("row_softmax: mask size does not match input");

  Tensor out(ta.shape());
  for (int64_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any_visible = false;
    for (int64_t c = 0; c < cols; ++c) {
      double z = ta[r * cols + c];
      if (mask && (*mask)[static_cast<size_t>(r * cols + c)]) {
        z -= kMaskSurrogate;
      } else {
        any_visible = true;
      }
      mx = std::max(mx, z);
    }
    if (mask && !any_visible)
      throw std::runtime_error("row_softmax: fully masked row " + std::to_string(r));
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      double z = ta[r * cols + c];
      if (mask && (*mask)[static_cast<size_t>(r * cols + c)]) z -= kMaskSurrogate;
      const double e = std::exp(z - mx);
      out[r * cols + c] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t c = 0; c < cols; ++c) {
      const int64_t i = r * cols + c;
      out[i] *= inv;
      if (mask && (*mask)[static_cast<size_t>(i)]) out[i] = 0.0;  // exact zero weight
    }
  }

  return make_node(std::move(out), {a}, [rows, cols](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += o.grad[r * cols + c] * o.value[r * cols + c];
      for (int64_t c = 0; c < cols; ++c) {
        const int64_t i = r * cols + c;
        g[i] += o.value[i] * (o.grad[i] - dot);  // masked entries have value 0
      }
    }
  });
}

VarPtr layer_norm(const VarPtr& x, const VarPtr& gain, const VarPtr& bias, double eps) {
  const Tensor& tx = x->value;
  const int64_t rows = tx.rows(), cols = tx.cols();
  if (gain->value.numel() != cols || bias->value.numel() != cols)
    shape_error("layer_norm", tx, gain->value);

  Tensor out(tx.shape());
  Tensor xhat(tx.shape());
  Tensor inv_std({rows, 1});
  for (int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += tx[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      const double d = tx[r * cols + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int64_t c = 0; c < cols; ++c) {
      const double h = (tx[r * cols + c] - mean) * inv;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gain->value[c] + bias->value[c];
    }
  }

  return make_node(std::move(out), {x, gain, bias},
                   [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Variable& o) {
                     Variable& px = *o.parents[0];
                     Variable& pg = *o.parents[1];
                     Variable& pb = *o.parents[2];
                     if (pg.requires_grad) {
                       Tensor& g = pg.ensure_grad();
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t c = 0; c < cols; ++c)
                           g[c] += o.grad[r * cols + c] * xhat[r * cols + c];
                     }
                     if (pb.requires_grad) {
                       Tensor& g = pb.ensure_grad();
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
                     }
                     if (px.requires_grad) {
                       Tensor& g = px.ensure_grad();
                       for (int64_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (int64_t c = 0; c < cols; ++c) {
                           const double dh =
                               o.grad[r * cols + c] * pg.value[c];
                           mean_dh += dh;
                           mean_dh_h += dh * xhat[r * cols + c];
                         }
                         mean_dh /= static_cast<double>(cols);
                         mean_dh_h /= static_cast<double>(cols);
                         for (int64_t c = 0; c < cols; ++c) {
                           const double dh = o.grad[r * cols + c] * pg.value[c];
                           g[r * cols + c] +=
                               inv_std[r] * (dh - mean_dh - xhat[r * cols + c] * mean_dh_h);
                         }
                       }
                     }
                   });
}

VarPtr gelu(const VarPtr& a) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  Tensor out = a->value;
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return make_node(std::move(out), {a}, [](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = pa.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += o.grad[i] * (cdf + x * pdf);
    }
  });
}

VarPtr softplus(const VarPtr& a) {
  Tensor out = a->value;
  for (double& v : out.data()) v = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);
  return make_node(std::move(out), {a}, [](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double x = pa.value[i];
      g[i] += o.grad[i] / (1.0 + std::exp(-x));
    }
  });
}

VarPtr gather_rows(const VarPtr& table, std::vector<int64_t> indices) {
  const Tensor& tt = table->value;
  const int64_t rows = tt.rows(), cols = tt.cols();
  for (int64_t idx : indices)
    if (idx < 0 || idx >= rows)
      throw std::out_of_range("gather_rows: index " + std::to_string(idx) + " out of range 0.." +
                              std::to_string(rows - 1));
  Tensor out({static_cast<int64_t>(indices.size()), cols});
  for (size_t r = 0; r < indices.size(); ++r)
    for (int64_t c = 0; c < cols; ++c)
      out[static_cast<int64_t>(r) * cols + c] = tt[indices[r] * cols + c];
  return make_node(std::move(out), {table}, [indices = std::move(indices), cols](Variable& o) {
    Variable& pt = *o.parents[0];
    if (!pt.requires_grad) return;
    Tensor& g = pt.ensure_grad();
    for (size_t r = 0; r < indices.size(); ++r)
      for (int64_t c = 0; c < cols; ++c)
        g[indices[r] * cols + c] += o.grad[static_cast<int64_t>(r) * cols + c];
  });
}

VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape) {
  if (Tensor::count(shape) != a->value.numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                Tensor::shape_str(a->value.shape()) + " -> " +
                                Tensor::shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), a->value.data());
  return make_node(std::move(out), {a}, [](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[i];
  });
}

VarPtr sum(const VarPtr& a) {
  double s = 0.0;
  for (double v : a->value.data()) s += v;
  return make_node(Tensor::scalar(s), {a}, [](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += o.grad[0];
  });
}

VarPtr mse_loss(const VarPtr& pred, const Tensor& target) {
  if (!pred->value.same_shape(target)) shape_error("mse_loss", pred->value, target);
  const int64_t n = pred->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred->value[i] - target[i];
    s += d * d;
  }
  return make_node(Tensor::scalar(s / static_cast<double>(n)), {pred}, [target](Variable& o) {
    Variable& pa = *o.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    const double scale = 2.0 * o.grad[0] / static_cast<double>(g.numel());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += scale * (pa.value[i] - target[i]);
  });
}

VarPtr cross_entropy_with_logits(const VarPtr& logits, const std::vector<int64_t>& targets) {
  const Tensor& tl = logits->value;
  const int64_t rows = tl.rows(), cols = tl.cols();
  if (static_cast<int64_t>(targets.size()) != rows)
    throw std::invalid_argument("cross_entropy_with_logits: target count " +
                                std::to_string(targets.size()) + " != rows " +
                                std::to_string(rows));
  for (int64_t t : targets)
    if (t < 0 || t >= cols)
      throw std::out_of_range("cross_entropy_with_logits: class index out of range");

  Tensor probs(tl.shape());
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    double mx = tl[r * cols];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, tl[r * cols + c]);
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      const double e = std::exp(tl[r * cols + c] - mx);
      probs[r * cols + c] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t c = 0; c < cols; ++c) probs[r * cols + c] *= inv;
    loss += std::log(sum) + mx - tl[r * cols + targets[static_cast<size_t>(r)]];
  }
  loss /= static_cast<double>(rows);

  return make_node(Tensor::scalar(loss), {logits},
                   [targets, probs = std::move(probs), rows, cols](Variable& o) {
                     Variable& pa = *o.parents[0];
                     if (!pa.requires_grad) return;
                     Tensor& g = pa.ensure_grad();
                     const double scale = o.grad[0] / static_cast<double>(rows);
                     for (int64_t r = 0; r < rows; ++r)
                       for (int64_t c = 0; c < cols; ++c) {
                         double d = probs[r * cols + c];
                         if (c == targets[static_cast<size_t>(r)]) d -= 1.0;
                         g[r * cols + c] += scale * d;
                       }
                   });
}

VarPtr huber_loss(const VarPtr& pred, const Tensor& target, double delta) {
  if (!pred->value.same_shape(target)) shape_error("huber_loss", pred->value, target);
  const int64_t n = pred->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double e = std::abs(pred->value[i] - target[i]);
    s += e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
  }
  return make_node(Tensor::scalar(s / static_cast<double>(n)), {pred},
                   [target, delta](Variable& o) {
                     Variable& pa = *o.parents[0];
                     if (!pa.requires_grad) return;
                     Tensor& g = pa.ensure_grad();
                     const double scale = o.grad[0] / static_cast<double>(g.numel());
                     for (int64_t i = 0; i < g.numel(); ++i) {
                       const double e = pa.value[i] - target[i];
                       g[i] += scale * std::clamp(e, -delta, delta);
                     }
                   });
}

void backward(const VarPtr& output) {
  if (output->value.numel() != 1)
    throw std::invalid_argument("backward: output is not scalar, shape " +
                                Tensor::shape_str(output->value.shape()));
  if (!output->requires_grad) return;

  // Iterative post-order DFS; graphs can be tens of thousands of nodes deep.
  std::vector<Variable*> order;
  std::unordered_set<Variable*> visited;
  std::vector<std::pair<Variable*, size_t>> stack;
  stack.emplace_back(output.get(), 0);
  visited.insert(output.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Variable* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Fresh intermediate gradients per sweep; parameter leaves accumulate.
  for (Variable* v : order) {
    v->grad = Tensor::zeros(v->value.shape());
  }
  output->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Variable* v = *it;
    if (v->backward_fn) v->backward_fn(*v);
    if (v->param) {
      Tensor& pg = v->param->gradient;
      for (int64_t i = 0; i < pg.numel(); ++i) pg[i] += v->grad[i];
    }
  }
}

}  // namespace dept
