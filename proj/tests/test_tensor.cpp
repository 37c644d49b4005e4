// Autodiff core: frozen forward examples, gradient semantics, the central
// finite-difference suite over every differentiable op, and SGD arithmetic.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "fscascade/rng.hpp"
#include "fscascade/tensor.hpp"

using namespace fscascade;
using fdtest::fd_check;
using fdtest::random_values;
using fdtest::values_away_from;

namespace {

Tensor sum_elements(const Tensor& x) {
  // Reduce via fc with all-one weights so the example exercises real ops.
  const int64_t n = x->numel();
  Tensor flat = reshape(x, {1, n});
  Tensor w = constant({n, 1}, std::vector<double>(static_cast<size_t>(n), 1.0));
  Tensor b = constant({1}, {0.0});
  return fully_connected(flat, w, b);
}

}  // namespace

TEST_CASE("fully_connected forward example") {
  Tensor x = constant({1, 2}, {1.0, 1.0});
  Tensor w = constant({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = constant({2}, {0.0, 0.0});
  Tensor y = fully_connected(x, w, b);
  CHECK(y->shape == std::vector<int64_t>{1, 2});
  CHECK(y->value[0] == 4.0);
  CHECK(y->value[1] == 6.0);

  Tensor b2 = constant({2}, {10.0, -10.0});
  Tensor y2 = fully_connected(x, w, b2);
  CHECK(y2->value[0] == 14.0);
  CHECK(y2->value[1] == -4.0);
}

TEST_CASE("conv2d forward example: all-ones 3x3, pad 1") {
  Tensor x = constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor k = constant({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor b = constant({1}, {0.0});
  Tensor y = conv2d(x, k, b, 1, 1);
  REQUIRE(y->shape == std::vector<int64_t>{1, 1, 3, 3});
  // Valid taps: 4 at corners, 6 at edges, 9 in the center.
  CHECK(y->value == std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4});
}

TEST_CASE("conv2d stride-2 output size and 1x1 kernels") {
  Tensor x = constant({1, 2, 8, 8}, std::vector<double>(128, 0.5));
  Tensor k3 = constant({3, 2, 3, 3}, std::vector<double>(54, 1.0));
  Tensor b3 = constant({3}, {0.0, 0.0, 0.0});
  CHECK(conv2d(x, k3, b3, 2, 1)->shape == std::vector<int64_t>{1, 3, 4, 4});

  Tensor k1 = constant({4, 2, 1, 1}, std::vector<double>(8, 2.0));
  Tensor b1 = constant({4}, std::vector<double>(4, 0.0));
  Tensor y = conv2d(x, k1, b1, 1, 0);
  CHECK(y->shape == std::vector<int64_t>{1, 4, 8, 8});
  CHECK(y->value[0] == 2.0);  // 2 channels * 0.5 * 2.0
}

TEST_CASE("relu forward example") {
  Tensor y = relu(constant({3}, {-1.0, 0.0, 2.0}));
  CHECK(y->value == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("elementwise_sum example and permutation invariance") {
  Tensor a = constant({2}, {1.0, 2.0});
  Tensor b = constant({2}, {3.0, 4.0});
  Tensor c = constant({2}, {5.0, 6.0});
  CHECK(elementwise_sum({a, b, c})->value == std::vector<double>{9.0, 12.0});

  Rng rng(5);
  std::vector<Tensor> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(constant({7}, random_values(rng, 7)));
  const std::vector<double> base = elementwise_sum(xs)->value;
  // Any order of the argument list must produce bit-identical sums.
  std::vector<Tensor> perm = {xs[4], xs[2], xs[0], xs[3], xs[1]};
  CHECK(elementwise_sum(perm)->value == base);
  std::vector<Tensor> rev(xs.rbegin(), xs.rend());
  CHECK(elementwise_sum(rev)->value == base);
}

TEST_CASE("softmax_cross_entropy examples") {
  // Uniform logits over 4 classes: loss = ln 4 for any label.
  Tensor logits = constant({1, 4}, {0.3, 0.3, 0.3, 0.3});
  Tensor loss = softmax_cross_entropy(logits, {2});
  CHECK(loss->value[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Logits (1, 2), label 1: -ln(e^2 / (e^1 + e^2)) = ln(1 + e^-1).
  Tensor l2 = constant({1, 2}, {1.0, 2.0});
  CHECK(softmax_cross_entropy(l2, {1})->value[0] ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

  // Mean over rows.
  Tensor l3 = constant({2, 2}, {1.0, 2.0, 2.0, 1.0});
  CHECK(softmax_cross_entropy(l3, {1, 0})->value[0] ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("softmax_cross_entropy is shift-invariant per row") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 3, k = 5;
    const auto vals = random_values(rng, n * k, -3.0, 3.0);
    std::vector<int64_t> labels;
    for (int64_t i = 0; i < n; ++i) labels.push_back(rng.uniform_int(k));
    auto shifted = vals;
    const double c = rng.uniform(-50.0, 50.0);
    for (double& v : shifted) v += c;
    const double a =
        softmax_cross_entropy(constant({n, k}, vals), labels)->value[0];
    const double b =
        softmax_cross_entropy(constant({n, k}, shifted), labels)->value[0];
    CHECK(std::abs(a - b) < 1e-9);
  }
}

TEST_CASE("smooth_l1 examples") {
  // |d| = 2 >= beta = 1: loss = 2 - 0.5.
  Tensor pred = constant({1, 2}, {3.0, -1.0});
  Tensor target = constant({1, 2}, {1.0, 1.0});
  CHECK(smooth_l1(pred, target, 1.0)->value[0] == doctest::Approx(1.5));

  // |d| = beta: both branches give 0.5 * beta.
  const double beta = 0.7;
  Tensor p2 = constant({1, 1}, {beta});
  Tensor t2 = constant({1, 1}, {0.0});
  CHECK(smooth_l1(p2, t2, beta)->value[0] ==
        doctest::Approx(0.5 * beta).epsilon(1e-12));

  // Quadratic region: d = 0.4, beta = 1 -> 0.5 * 0.16.
  Tensor p3 = constant({1, 1}, {0.4});
  Tensor t3 = constant({1, 1}, {0.0});
  CHECK(smooth_l1(p3, t3, 1.0)->value[0] == doctest::Approx(0.08));

  // Mean over all elements.
  Tensor p4 = constant({2, 2}, {2.0, 0.0, 0.0, 0.0});
  Tensor t4 = constant({2, 2}, {0.0, 0.0, 0.0, 0.0});
  CHECK(smooth_l1(p4, t4, 1.0)->value[0] == doctest::Approx(1.5 / 4.0));
}

TEST_CASE("reshape, gather_rows, scale, detach values") {
  Tensor x = constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reshape(x, {3, 2})->value == x->value);
  CHECK(reshape(x, {6})->shape == std::vector<int64_t>{6});
  CHECK_THROWS_AS((void)reshape(x, {4}), std::invalid_argument);

  Tensor g = gather_rows(x, {1, 0, 1});
  CHECK(g->shape == std::vector<int64_t>{3, 3});
  CHECK(g->value == std::vector<double>{4, 5, 6, 1, 2, 3, 4, 5, 6});

  CHECK(scale(x, -2.0)->value == std::vector<double>{-2, -4, -6, -8, -10, -12});
  CHECK(detach(x)->value == x->value);
  CHECK_FALSE(detach(x)->requires_grad);
}

TEST_CASE("shape validation names both shapes") {
  Tensor x = constant({1, 3}, {1, 2, 3});
  Tensor w = constant({2, 2}, {1, 2, 3, 4});
  Tensor b = constant({2}, {0, 0});
  CHECK_THROWS_AS((void)fully_connected(x, w, b), std::invalid_argument);
  CHECK_THROWS_AS((void)elementwise_sum({x, b}), std::invalid_argument);
  CHECK_THROWS_AS((void)elementwise_sum({}), std::invalid_argument);
  Tensor img = constant({1, 2, 4, 4}, std::vector<double>(32, 0.0));
  Tensor k = constant({2, 3, 3, 3}, std::vector<double>(54, 0.0));
  Tensor kb = constant({2}, {0, 0});
  CHECK_THROWS_AS((void)conv2d(img, k, kb, 1, 1), std::invalid_argument);
}

TEST_CASE("backward: sum gives unit gradients; untouched parameters get zero") {
  ParamStore store;
  Tensor x = store.create("x", {2, 3}, {0.5, -1.0, 2.0, 0.0, 3.0, -0.5});
  Tensor unused = store.create("unused", {4}, {1, 2, 3, 4});
  GradientMap grads = backward(sum_elements(x), store);
  CHECK(grads.at("x") == std::vector<double>(6, 1.0));
  CHECK(grads.at("unused") == std::vector<double>(4, 0.0));
}

TEST_CASE("backward accumulates over multiple uses of one tensor") {
  ParamStore store;
  Tensor x = store.create("x", {1, 3}, {1.0, -2.0, 3.0});
  // x enters twice: once raw, once scaled by 3 -> d(sum)/dx = 1 + 3.
  Tensor y = elementwise_sum({x, scale(x, 3.0)});
  GradientMap grads = backward(sum_elements(y), store);
  CHECK(grads.at("x") == std::vector<double>(3, 4.0));
}

TEST_CASE("backward accumulates into rows gathered more than once") {
  ParamStore store;
  Tensor x = store.create("x", {3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = gather_rows(x, {1, 1, 2});
  GradientMap grads = backward(sum_elements(g), store);
  CHECK(grads.at("x") == std::vector<double>{0, 0, 2, 2, 1, 1});
}

TEST_CASE("detach stops gradients exactly") {
  ParamStore store;
  Tensor x = store.create("x", {2, 2}, {1, 2, 3, 4});
  Tensor y = elementwise_sum({scale(x, 2.0), detach(scale(x, 100.0))});
  GradientMap grads = backward(sum_elements(y), store);
  CHECK(grads.at("x") == std::vector<double>(4, 2.0));
}

TEST_CASE("NoGradGuard: no graph recorded, values still computed") {
  ParamStore store;
  Tensor x = store.create("x", {1, 2}, {1.0, 2.0});
  Tensor loss;
  {
    NoGradGuard frozen;
    CHECK_FALSE(grad_enabled());
    loss = sum_elements(relu(x));
    CHECK(loss->value[0] == 3.0);
  }
  CHECK(grad_enabled());
  CHECK(loss->inputs.empty());
  GradientMap grads = backward(loss, store);
  CHECK(grads.at("x") == std::vector<double>(2, 0.0));
}

TEST_CASE("backward rejects non-scalar losses") {
  ParamStore store;
  Tensor x = store.create("x", {2}, {1.0, 2.0});
  CHECK_THROWS_AS((void)backward(relu(x), store), std::invalid_argument);
}

TEST_CASE("finite differences: every differentiable op, 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);

    {
      // fully_connected w.r.t. x, w, b
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return fully_connected(in[0], in[1], in[2]);
          },
          {{3, 5}, {5, 4}, {4}},
          {random_values(rng, 15), random_values(rng, 20),
           random_values(rng, 4)});
      CHECK_MESSAGE(r.pass(), "fc rel=", r.max_rel, " abs0=", r.max_abs_zero);
    }
    {
      // conv2d 3x3 stride 1 pad 1
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return conv2d(in[0], in[1], in[2], 1, 1);
          },
          {{1, 2, 5, 5}, {3, 2, 3, 3}, {3}},
          {random_values(rng, 50), random_values(rng, 54),
           random_values(rng, 3)});
      CHECK_MESSAGE(r.pass(), "conv s1p1 rel=", r.max_rel);
    }
    {
      // conv2d 3x3 stride 2 pad 1
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return conv2d(in[0], in[1], in[2], 2, 1);
          },
          {{1, 2, 5, 5}, {2, 2, 3, 3}, {2}},
          {random_values(rng, 50), random_values(rng, 36),
           random_values(rng, 2)});
      CHECK_MESSAGE(r.pass(), "conv s2p1 rel=", r.max_rel);
    }
    {
      // conv2d 1x1 stride 1 pad 0
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return conv2d(in[0], in[1], in[2], 1, 0);
          },
          {{2, 3, 3, 3}, {4, 3, 1, 1}, {4}},
          {random_values(rng, 54), random_values(rng, 12),
           random_values(rng, 4)});
      CHECK_MESSAGE(r.pass(), "conv 1x1 rel=", r.max_rel);
    }
    {
      // relu away from the kink
      auto r = fd_check(
          [](const std::vector<Tensor>& in) { return relu(in[0]); }, {{6, 8}},
          {values_away_from(rng, 48, 0.0, 1e-3, -1.0, 1.0)});
      CHECK_MESSAGE(r.pass(), "relu rel=", r.max_rel);
    }
    {
      // elementwise_sum of three leaves
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return elementwise_sum({in[0], in[1], in[2]});
          },
          {{3, 4}, {3, 4}, {3, 4}},
          {random_values(rng, 12), random_values(rng, 12),
           random_values(rng, 12)});
      CHECK(r.pass());
    }
    {
      // reshape |> gather_rows (with repeats) |> scale chain
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return scale(gather_rows(reshape(in[0], {4, 6}), {3, 1, 3}), -1.7);
          },
          {{2, 12}}, {random_values(rng, 24)});
      CHECK(r.pass());
    }
    {
      // softmax cross entropy (already scalar)
      std::vector<int64_t> labels;
      for (int i = 0; i < 4; ++i) labels.push_back(rng.uniform_int(5));
      auto r = fd_check(
          [labels](const std::vector<Tensor>& in) {
            return softmax_cross_entropy(in[0], labels);
          },
          {{4, 5}}, {random_values(rng, 20, -2.0, 2.0)});
      CHECK_MESSAGE(r.pass(), "ce rel=", r.max_rel);
    }
    {
      // smooth_l1 w.r.t. both pred and target, away from |d| = beta
      const auto pred = values_away_from(rng, 12, 1.0, 0.05, -2.0, 2.0);
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            return smooth_l1(in[0], in[1], 1.0);
          },
          {{3, 4}, {3, 4}},
          {pred, std::vector<double>(12, 0.0)});
      CHECK_MESSAGE(r.pass(), "smooth_l1 rel=", r.max_rel);
    }
    {
      // composite with parameter reuse: the CFS sharing pattern in miniature
      auto r = fd_check(
          [](const std::vector<Tensor>& in) {
            Tensor p1 = fully_connected(in[0], in[1], in[2]);
            Tensor p2 = fully_connected(relu(in[0]), in[1], in[2]);
            return elementwise_sum({relu(p1), relu(p2)});
          },
          {{2, 4}, {4, 3}, {3}},
          {values_away_from(rng, 8, 0.0, 1e-3, -1.0, 1.0),
           random_values(rng, 12), random_values(rng, 3)});
      CHECK_MESSAGE(r.pass(), "composite rel=", r.max_rel);
    }
  }
}

TEST_CASE("sgd_step examples") {
  SUBCASE("plain gradient step") {
    ParamStore store;
    store.create("w", {1}, {1.0});
    GradientMap grads{{"w", {1.0}}};
    sgd_step(store, grads, 0.1, 0.0, 0.0);
    CHECK(store.at("w").tensor->value[0] == doctest::Approx(0.9));
  }
  SUBCASE("zero gradient, zero velocity: fixed point") {
    ParamStore store;
    store.create("w", {2}, {1.5, -2.5});
    GradientMap grads{{"w", {0.0, 0.0}}};
    sgd_step(store, grads, 0.1, 0.9, 0.0);
    CHECK(store.at("w").tensor->value == std::vector<double>{1.5, -2.5});
  }
  SUBCASE("momentum recursion over two steps") {
    ParamStore store;
    store.create("w", {1}, {0.0});
    GradientMap grads{{"w", {1.0}}};
    sgd_step(store, grads, 0.1, 0.9, 0.0);
    CHECK(store.at("w").tensor->value[0] == doctest::Approx(-0.1));
    sgd_step(store, grads, 0.1, 0.9, 0.0);
    CHECK(store.at("w").tensor->value[0] == doctest::Approx(-0.29));
  }
  SUBCASE("weight decay enters the velocity") {
    ParamStore store;
    store.create("w", {1}, {2.0});
    GradientMap grads{{"w", {0.0}}};
    sgd_step(store, grads, 1.0, 0.0, 0.1);
    CHECK(store.at("w").tensor->value[0] == doctest::Approx(1.8));
  }
  SUBCASE("missing gradient names the parameter") {
    ParamStore store;
    store.create("lonely", {1}, {0.0});
    GradientMap empty;
    CHECK_THROWS_WITH_AS(sgd_step(store, empty, 0.1, 0.0, 0.0),
                         doctest::Contains("lonely"), std::invalid_argument);
  }
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  Rng rng(77);
  const auto xv = random_values(rng, 24);
  const auto wv = random_values(rng, 18);
  const auto bv = random_values(rng, 3);
  auto run = [&] {
    Tensor x = constant({4, 6}, xv);
    Tensor w = constant({6, 3}, wv);
    Tensor b = constant({3}, bv);
    return relu(fully_connected(x, w, b))->value;
  };
  CHECK(run() == run());
}
