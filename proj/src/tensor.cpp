#include "fscascade/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "fscascade/kernels.hpp"

namespace fscascade {

namespace {

thread_local bool g_grad_enabled = true;

int64_t product(const std::vector<int64_t>& shape) {
  int64_t p = 1;
  for (int64_t d : shape) p *= d;
  return p;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

int64_t TensorNode::numel() const { return product(shape); }

void TensorNode::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor constant(std::vector<int64_t> shape, std::vector<double> value) {
  if (product(shape) != static_cast<int64_t>(value.size())) {
    fail("tensor: shape " + shape_str(shape) + " does not hold " +
         std::to_string(value.size()) + " values");
  }
  auto t = std::make_shared<TensorNode>();
  t->shape = std::move(shape);
  t->value = std::move(value);
  return t;
}

Tensor zeros(std::vector<int64_t> shape) {
  const int64_t n = product(shape);
  return constant(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor leaf_with_grad(std::vector<int64_t> shape, std::vector<double> value) {
  Tensor t = constant(std::move(shape), std::move(value));
  t->requires_grad = true;
  return t;
}

Tensor make_node(std::vector<int64_t> shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backprop) {
  Tensor t = constant(std::move(shape), std::move(value));
  bool any_grad = false;
  for (const Tensor& in : inputs) any_grad = any_grad || in->requires_grad;
  if (g_grad_enabled && any_grad) {
    t->requires_grad = true;
    t->inputs = std::move(inputs);
    t->backprop = std::move(backprop);
  }
  return t;
}

Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x->shape.size() != 2 || w->shape.size() != 2 || b->shape.size() != 1 ||
      x->shape[1] != w->shape[0] || w->shape[1] != b->shape[0]) {
    fail("fully_connected: incompatible shapes x" + shape_str(x->shape) +
         " w" + shape_str(w->shape) + " b" + shape_str(b->shape));
  }
  const int64_t n = x->shape[0], d_in = x->shape[1], d_out = w->shape[1];
  std::vector<double> y(static_cast<size_t>(n * d_out));
  kernels::fc_forward(x->value.data(), w->value.data(), b->value.data(),
                      y.data(), n, d_in, d_out);
  return make_node({n, d_out}, std::move(y), {x, w, b},
                   [n, d_in, d_out](TensorNode& self) {
                     TensorNode& x_ = *self.inputs[0];
                     TensorNode& w_ = *self.inputs[1];
                     TensorNode& b_ = *self.inputs[2];
                     if (x_.requires_grad) {
                       x_.ensure_grad();
                       kernels::fc_backward_x(self.grad.data(), w_.value.data(),
                                              x_.grad.data(), n, d_in, d_out);
                     }
                     if (w_.requires_grad) {
                       w_.ensure_grad();
                       kernels::fc_backward_w(x_.value.data(), self.grad.data(),
                                              w_.grad.data(), n, d_in, d_out);
                     }
                     if (b_.requires_grad) {
                       b_.ensure_grad();
                       kernels::fc_backward_b(self.grad.data(), b_.grad.data(),
                                              n, d_out);
                     }
                   });
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b,
              int64_t stride, int64_t pad) {
  if (x->shape.size() != 4 || k->shape.size() != 4 || b->shape.size() != 1) {
    fail("conv2d: want x rank 4, k rank 4, b rank 1; got x" +
         shape_str(x->shape) + " k" + shape_str(k->shape) + " b" +
         shape_str(b->shape));
  }
  kernels::Conv2dDims d;
  d.n = x->shape[0];
  d.c_in = x->shape[1];
  d.h = x->shape[2];
  d.w = x->shape[3];
  d.c_out = k->shape[0];
  d.kh = k->shape[2];
  d.kw = k->shape[3];
  d.stride = stride;
  d.pad = pad;
  if (k->shape[1] != d.c_in || b->shape[0] != d.c_out) {
    fail("conv2d: channel mismatch x" + shape_str(x->shape) + " k" +
         shape_str(k->shape) + " b" + shape_str(b->shape));
  }
  if ((d.kh != 1 && d.kh != 3) || (d.kw != 1 && d.kw != 3)) {
    fail("conv2d: kernel sides must be 1 or 3, got k" + shape_str(k->shape));
  }
  if (stride < 1 || pad < 0) fail("conv2d: stride must be >=1 and pad >=0");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.h + 2 * pad - d.kh < 0 || d.w + 2 * pad - d.kw < 0 || d.oh <= 0 ||
      d.ow <= 0) {
    fail("conv2d: non-positive output dims for x" + shape_str(x->shape) +
         " k" + shape_str(k->shape));
  }
  std::vector<double> y(static_cast<size_t>(d.n * d.c_out * d.oh * d.ow));
  kernels::conv2d_forward(x->value.data(), k->value.data(), b->value.data(),
                          y.data(), d);
  return make_node({d.n, d.c_out, d.oh, d.ow}, std::move(y), {x, k, b},
                   [d](TensorNode& self) {
                     TensorNode& x_ = *self.inputs[0];
                     TensorNode& k_ = *self.inputs[1];
                     TensorNode& b_ = *self.inputs[2];
                     if (x_.requires_grad) {
                       x_.ensure_grad();
                       kernels::conv2d_backward_x(self.grad.data(),
                                                  k_.value.data(),
                                                  x_.grad.data(), d);
                     }
                     if (k_.requires_grad) {
                       k_.ensure_grad();
                       kernels::conv2d_backward_k(x_.value.data(),
                                                  self.grad.data(),
                                                  k_.grad.data(), d);
                     }
                     if (b_.requires_grad) {
                       b_.ensure_grad();
                       kernels::conv2d_backward_b(self.grad.data(),
                                                  b_.grad.data(), d);
                     }
                   });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x->value.size());
  kernels::relu_forward(x->value.data(), y.data(), x->numel());
  return make_node(x->shape, std::move(y), {x}, [](TensorNode& self) {
    TensorNode& x_ = *self.inputs[0];
    if (!x_.requires_grad) return;
    x_.ensure_grad();
    kernels::relu_backward(x_.value.data(), self.grad.data(), x_.grad.data(),
                           x_.numel());
  });
}

Tensor elementwise_sum(const std::vector<Tensor>& xs) {
  if (xs.empty()) fail("elementwise_sum: empty tensor list");
  for (const Tensor& x : xs) {
    if (x->shape != xs[0]->shape) {
      fail("elementwise_sum: shape mismatch " + shape_str(xs[0]->shape) +
           " vs " + shape_str(x->shape));
    }
  }
  std::vector<double> y = xs[0]->value;
  for (size_t i = 1; i < xs.size(); ++i) {
    const std::vector<double>& v = xs[i]->value;
    for (size_t j = 0; j < y.size(); ++j) y[j] += v[j];
  }
  return make_node(xs[0]->shape, std::move(y), xs, [](TensorNode& self) {
    for (Tensor& in : self.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (size_t j = 0; j < self.grad.size(); ++j) in->grad[j] += self.grad[j];
    }
  });
}

Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape) {
  if (product(new_shape) != x->numel()) {
    fail("reshape: cannot view " + shape_str(x->shape) + " as " +
         shape_str(new_shape));
  }
  return make_node(std::move(new_shape), x->value, {x}, [](TensorNode& self) {
    TensorNode& x_ = *self.inputs[0];
    if (!x_.requires_grad) return;
    x_.ensure_grad();
    for (size_t j = 0; j < self.grad.size(); ++j) x_.grad[j] += self.grad[j];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  if (x->shape.empty()) fail("gather_rows: rank-0 input");
  const int64_t n = x->shape[0];
  const int64_t row_size = n == 0 ? 0 : x->numel() / n;
  for (int64_t r : rows) {
    if (r < 0 || r >= n) {
      fail("gather_rows: row " + std::to_string(r) + " out of range for " +
           shape_str(x->shape));
    }
  }
  std::vector<int64_t> out_shape = x->shape;
  out_shape[0] = static_cast<int64_t>(rows.size());
  std::vector<double> y(static_cast<size_t>(out_shape[0] * row_size));
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x->value.begin() + rows[i] * row_size, row_size,
                y.begin() + static_cast<int64_t>(i) * row_size);
  }
  return make_node(std::move(out_shape), std::move(y), {x},
                   [rows, row_size](TensorNode& self) {
                     TensorNode& x_ = *self.inputs[0];
                     if (!x_.requires_grad) return;
                     x_.ensure_grad();
                     for (size_t i = 0; i < rows.size(); ++i) {
                       const double* g =
                           self.grad.data() + static_cast<int64_t>(i) * row_size;
                       double* gx = x_.grad.data() + rows[i] * row_size;
                       for (int64_t j = 0; j < row_size; ++j) gx[j] += g[j];
                     }
                   });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> y = x->value;
  for (double& v : y) v *= s;
  return make_node(x->shape, std::move(y), {x}, [s](TensorNode& self) {
    TensorNode& x_ = *self.inputs[0];
    if (!x_.requires_grad) return;
    x_.ensure_grad();
    for (size_t j = 0; j < self.grad.size(); ++j)
      x_.grad[j] += s * self.grad[j];
  });
}

Tensor detach(const Tensor& x) { return constant(x->shape, x->value); }

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels) {
  if (logits->shape.size() != 2) {
    fail("softmax_cross_entropy: want rank-2 logits, got " +
         shape_str(logits->shape));
  }
  const int64_t n = logits->shape[0], k = logits->shape[1];
  if (static_cast<int64_t>(labels.size()) != n) {
    fail("softmax_cross_entropy: " + std::to_string(labels.size()) +
         " labels for logits " + shape_str(logits->shape));
  }
  std::vector<double> probs(logits->value.size());
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      fail("softmax_cross_entropy: label " + std::to_string(labels[i]) +
           " outside [0," + std::to_string(k - 1) + "]");
    }
    const double* row = logits->value.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - m) / z;
    loss += std::log(z) - (row[labels[i]] - m);
  }
  loss /= static_cast<double>(n);
  return make_node({1}, {loss}, {logits},
                   [probs, labels, n, k](TensorNode& self) {
                     TensorNode& l = *self.inputs[0];
                     if (!l.requires_grad) return;
                     l.ensure_grad();
                     const double g = self.grad[0] / static_cast<double>(n);
                     for (int64_t i = 0; i < n; ++i) {
                       for (int64_t j = 0; j < k; ++j) {
                         const double onehot = j == labels[i] ? 1.0 : 0.0;
                         l.grad[i * k + j] += g * (probs[i * k + j] - onehot);
                       }
                     }
                   });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta) {
  if (pred->shape != target->shape) {
    fail("smooth_l1: shape mismatch " + shape_str(pred->shape) + " vs " +
         shape_str(target->shape));
  }
  if (beta <= 0.0) fail("smooth_l1: beta must be positive");
  const int64_t m = pred->numel();
  double loss = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    const double d = pred->value[i] - target->value[i];
    const double a = std::abs(d);
    loss += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  loss /= static_cast<double>(m);
  return make_node({1}, {loss}, {pred, target}, [beta, m](TensorNode& self) {
    TensorNode& p = *self.inputs[0];
    TensorNode& t = *self.inputs[1];
    const double g = self.grad[0] / static_cast<double>(m);
    for (int64_t i = 0; i < m; ++i) {
      const double d = p.value[i] - t.value[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
      if (p.requires_grad) {
        p.ensure_grad();
        p.grad[i] += g * dd;
      }
      if (t.requires_grad) {
        t.ensure_grad();
        t.grad[i] -= g * dd;
      }
    }
  });
}

Tensor ParamStore::create(const std::string& name, std::vector<int64_t> shape,
                          std::vector<double> value) {
  if (params_.count(name)) fail("parameter name reused: " + name);
  Tensor t = constant(std::move(shape), std::move(value));
  t->requires_grad = true;
  t->name = name;
  Parameter p;
  p.tensor = t;
  p.momentum.assign(t->value.size(), 0.0);
  params_.emplace(name, std::move(p));
  order_.push_back(name);
  return t;
}

bool ParamStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail("unknown parameter: " + name);
  return it->second;
}

int64_t ParamStore::total_scalars() const {
  int64_t total = 0;
  for (const auto& [name, p] : params_) total += p.tensor->numel();
  return total;
}

GradientMap backward(const Tensor& loss, const ParamStore& params) {
  if (loss->numel() != 1) {
    fail("backward: loss must be scalar, got " + shape_str(loss->shape));
  }
  // Post-order over the requires_grad subgraph (iterative, two-phase stack).
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, bool>> stack;
  if (loss->requires_grad) stack.emplace_back(loss.get(), false);
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.emplace_back(node, true);
    for (const Tensor& in : node->inputs) {
      if (in->requires_grad && !seen.count(in.get())) {
        stack.emplace_back(in.get(), false);
      }
    }
  }
  for (TensorNode* node : order) node->grad.assign(node->value.size(), 0.0);
  for (const std::string& name : params.names()) {
    TensorNode* t = params.at(name).tensor.get();
    if (!seen.count(t)) t->grad.assign(t->value.size(), 0.0);
  }
  if (loss->requires_grad) {
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }
  GradientMap out;
  for (const std::string& name : params.names()) {
    const Parameter& p = params.at(name);
    if (p.tensor->grad.size() == p.tensor->value.size()) {
      out[name] = p.tensor->grad;
    } else {
      out[name] = std::vector<double>(p.tensor->value.size(), 0.0);
    }
  }
  return out;
}

void sgd_step(ParamStore& params, const GradientMap& grads, double lr,
              double momentum, double weight_decay) {
  for (const std::string& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) fail("sgd_step: no gradient for parameter " + name);
    Parameter& p = params.at(name);
    const std::vector<double>& g = it->second;
    if (g.size() != p.tensor->value.size()) {
      fail("sgd_step: gradient size mismatch for parameter " + name);
    }
    for (size_t i = 0; i < g.size(); ++i) {
      double& v = p.momentum[i];
      double& w = p.tensor->value[i];
      v = momentum * v + (g[i] + weight_decay * w);
      w -= lr * v;
    }
  }
}

}  // namespace fscascade
