#pragma once

// Central finite-difference gradient checker shared by the op-level tests
// and the acceptance gradient suite. The builder maps leaf tensors to any
// output tensor; the checker reduces the output to a scalar with fixed
// random weights, runs backward(), and compares every leaf element's
// analytic gradient against (f(x+eps) - f(x-eps)) / 2eps.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fscascade/rng.hpp"
#include "fscascade/tensor.hpp"

namespace fdtest {

struct FdResult {
  double max_rel = 0.0;       // where gradients are clearly nonzero
  double max_abs_zero = 0.0;  // where both analytic and numeric are ~0
  bool pass(double rel_tol = 1e-4, double abs_tol = 1e-6) const {
    return max_rel < rel_tol && max_abs_zero < abs_tol;
  }
};

using Builder =
    std::function<fscascade::Tensor(const std::vector<fscascade::Tensor>&)>;

inline FdResult fd_check(const Builder& builder,
                         const std::vector<std::vector<int64_t>>& shapes,
                         const std::vector<std::vector<double>>& values,
                         double eps = 1e-5) {
  using namespace fscascade;
  ParamStore store;
  std::vector<Tensor> leaves;
  for (size_t i = 0; i < shapes.size(); ++i) {
    leaves.push_back(
        store.create("leaf" + std::to_string(i), shapes[i], values[i]));
  }

  Tensor out = builder(leaves);
  Rng wrng(0x5eedULL + static_cast<uint64_t>(out->numel()));
  std::vector<double> w(out->value.size());
  for (double& x : w) x = wrng.uniform(-1.0, 1.0);

  const auto weigh = [&w](const Tensor& y) {
    double s = 0.0;
    for (size_t i = 0; i < y->value.size(); ++i) s += w[i] * y->value[i];
    return s;
  };
  Tensor loss =
      make_node({1}, {weigh(out)}, {out}, [w](TensorNode& node) {
        TensorNode& y = *node.inputs[0];
        if (!y.requires_grad) return;
        y.ensure_grad();
        for (size_t i = 0; i < w.size(); ++i) {
          y.grad[i] += w[i] * node.grad[0];
        }
      });
  const GradientMap grads = backward(loss, store);

  FdResult result;
  for (size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double>& v = leaves[i]->value;
    const std::vector<double>& g = grads.at("leaf" + std::to_string(i));
    for (size_t j = 0; j < v.size(); ++j) {
      const double orig = v[j];
      double f_plus, f_minus;
      {
        NoGradGuard frozen;
        v[j] = orig + eps;
        f_plus = weigh(builder(leaves));
        v[j] = orig - eps;
        f_minus = weigh(builder(leaves));
        v[j] = orig;
      }
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double denom = std::max(std::abs(g[j]), std::abs(fd));
      if (denom < 1e-6) {
        result.max_abs_zero = std::max(result.max_abs_zero, std::abs(g[j] - fd));
      } else {
        result.max_rel = std::max(result.max_rel, std::abs(g[j] - fd) / denom);
      }
    }
  }
  return result;
}

inline std::vector<double> random_values(fscascade::Rng& rng, int64_t n,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from a kink (|x - kink| >= margin and |x + kink| >=
// margin), for ReLU and smooth-L1 whose derivative jumps there.
inline std::vector<double> values_away_from(fscascade::Rng& rng, int64_t n,
                                            double kink, double margin,
                                            double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(std::abs(x) - kink) < margin);
  }
  return v;
}

}  // namespace fdtest
