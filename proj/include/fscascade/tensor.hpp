#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

// Minimal reverse-mode autodiff over dense 64-bit tensors: just the
// operations the cascade heads need. Gradients accumulate with += so a
// parameter used by several paths sums its contributions.

namespace fscascade {

class TensorNode;
using Tensor = std::shared_ptr<TensorNode>;

class TensorNode {
 public:
  std::vector<int64_t> shape;
  std::vector<double> value;  // row-major, product(shape) elements
  std::vector<double> grad;   // empty until backward touches this node
  bool requires_grad = false;
  std::string name;  // non-empty only for parameters
  std::vector<Tensor> inputs;
  // Propagates this node's grad into inputs' grads (+=). Empty for leaves.
  std::function<void(TensorNode&)> backprop;

  int64_t numel() const;
  // Allocates and zero-fills grad if it is not yet sized.
  void ensure_grad();
};

// While a guard is alive, ops compute values but record no graph edges.
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

std::string shape_str(const std::vector<int64_t>& shape);

// Leaf constructors.
Tensor constant(std::vector<int64_t> shape, std::vector<double> value);
Tensor zeros(std::vector<int64_t> shape);
Tensor leaf_with_grad(std::vector<int64_t> shape, std::vector<double> value);

// Custom-node escape hatch: value already computed, backprop supplied by the
// caller. Used by roi_pool and by tests that need bespoke nodes.
Tensor make_node(std::vector<int64_t> shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(TensorNode&)> backprop);

// y[n,j] = sum_k x[n,k] w[k,j] + b[j].  x:[N,Din] w:[Din,Dout] b:[Dout]
Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b);

// Cross-correlation. x:[N,Cin,H,W] k:[Cout,Cin,kH,kW] b:[Cout]; kH,kW in {1,3}.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b,
              int64_t stride, int64_t pad);

// max(0, x); subgradient at 0 is 0.
Tensor relu(const Tensor& x);

// Componentwise sum of one or more same-shape tensors.
Tensor elementwise_sum(const std::vector<Tensor>& xs);

Tensor reshape(const Tensor& x, std::vector<int64_t> new_shape);

// y = x[rows, ...] for x with leading dimension N; rows may repeat.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

Tensor scale(const Tensor& x, double s);

// Copies the value and cuts the graph: no gradient flows through.
Tensor detach(const Tensor& x);

// Mean over rows of -log softmax(logits)[label]; labels in [0, K] where K+1
// is the class count and 0 is background. Max-subtraction stabilized.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int64_t>& labels);

// Mean over all elements of: 0.5 d^2/beta if |d| < beta else |d| - 0.5 beta,
// with d = pred - target.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta = 1.0);

// One learnable tensor plus its SGD momentum buffer.
struct Parameter {
  Tensor tensor;                 // requires_grad true, name set
  std::vector<double> momentum;  // same length as value, starts all-zero
};

// Insertion-ordered parameter collection with unique names.
class ParamStore {
 public:
  Tensor create(const std::string& name, std::vector<int64_t> shape,
                std::vector<double> value);
  bool has(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_scalars() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Parameter> params_;
};

using GradientMap = std::map<std::string, std::vector<double>>;

// Reverse-mode pass from a scalar loss. Every parameter in the store gets an
// entry; parameters the loss never touched get zeros.
GradientMap backward(const Tensor& loss, const ParamStore& params);

// v <- momentum v + (g + weight_decay w); w <- w - lr v.
// Throws if grads lacks an entry for any parameter.
void sgd_step(ParamStore& params, const GradientMap& grads, double lr,
              double momentum, double weight_decay);

}  // namespace fscascade
