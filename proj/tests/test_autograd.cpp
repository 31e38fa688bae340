// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "msdemucs/autograd.hpp"
#include "msdemucs/error.hpp"
#include "test_util.hpp"

using namespace msd;
using namespace msd::ag;
using msd::testing::random_tensor;

namespace {

// Values kept away from zero so abs/relu/log kinks are not straddled by the
// finite-difference stencil.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  auto t = random_tensor(std::move(shape), seed, 0.2, 1.5);
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); i += 2) d[i] = -d[i];
  return t;
}

void check_unary(const char* name, const std::function<Tensor(const Tensor&)>& op,
                 const Tensor& x0) {
  CAPTURE(name);
  auto r = grad_check([&](const Tensor& x) { return sum(mul(op(x), op(x))); }, x0);
  CHECK_MESSAGE(r.passed, r.to_string());
}

}  // namespace

TEST_CASE("unary ops pass the finite-difference check") {
  auto x = away_from_zero({3, 4}, 1);
  auto pos = random_tensor({3, 4}, 2, 0.3, 2.0);
  check_unary("abs", [](const Tensor& t) { return abs(t); }, x);
  check_unary("relu", [](const Tensor& t) { return relu(t); }, x);
  check_unary("elu", [](const Tensor& t) { return elu(t); }, x);
  check_unary("sigmoid", [](const Tensor& t) { return sigmoid(t); }, x);
  check_unary("tanh", [](const Tensor& t) { return tanh(t); }, x);
  check_unary("square", [](const Tensor& t) { return square(t); }, x);
  check_unary("scale", [](const Tensor& t) { return scale(t, -2.5); }, x);
  check_unary("add_scalar", [](const Tensor& t) { return add_scalar(t, 0.3); }, x);
  check_unary("sqrt", [](const Tensor& t) { return sqrt(t); }, pos);
  check_unary("log_floor", [](const Tensor& t) { return log_floor(t, 1e-7); }, pos);
  check_unary("clamp_min", [](const Tensor& t) { return clamp_min(t, 0.0); }, x);
  check_unary("reshape", [](const Tensor& t) { return reshape(t, {12}); }, x);
  check_unary("mean", [](const Tensor& t) { return mean(t); }, x);
}

TEST_CASE("binary ops pass the finite-difference check") {
  auto a = away_from_zero({2, 5}, 3);
  auto b = away_from_zero({2, 5}, 4);
  auto check = [](const char* name, const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x0) {
    CAPTURE(name);
    auto r = grad_check(f, x0);
    CHECK_MESSAGE(r.passed, r.to_string());
  };
  check("add", [&](const Tensor& x) { return sum(square(add(x, b))); }, a);
  check("sub", [&](const Tensor& x) { return sum(square(sub(b, x))); }, a);
  check("mul", [&](const Tensor& x) { return sum(mul(x, mul(x, b))); }, a);
  check("mean_of_three", [&](const Tensor& x) {
    return sum(square(mean_of_three(x, b, mul(x, x))));
  }, a);
  auto s = Tensor::scalar(0.7);
  check("div", [&](const Tensor& x) { return div(sum(square(x)), add_scalar(sum(x), 5.0)); }, a);
  check("div denominator", [&](const Tensor& x) { return div(s, add_scalar(x, 2.0)); },
        Tensor::scalar(0.4));
}

TEST_CASE("sum has an exact all-ones gradient") {
  // Dyadic inputs and a power-of-two step make the central difference exact.
  auto x = Tensor::from({4}, {0.5, -1.25, 2.0, 0.75}, true);
  auto y = sum(x);
  backward(y);
  for (double g : x.grad()) CHECK(g == 1.0);
  GradCheckOptions opts;
  opts.eps = 1.0 / 1024.0;
  opts.tol = 0.0;
  auto r = grad_check([](const Tensor& t) { return sum(t); }, x, opts);
  CHECK(r.passed);
  CHECK(r.max_rel_error == 0.0);
}

TEST_CASE("leaf gradients accumulate and intermediates reset") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  auto y = sum(square(x));
  backward(y);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  backward(y);
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward on a leaf adds the seed") {
  auto x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  backward(x, Tensor::from({3}, {0.5, 0.25, 1.0}));
  CHECK(x.grad()[0] == 0.5);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("NoGradGuard stops recording") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = square(x);
  }
  CHECK(grad_enabled());
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("Graph backward before forward is a state error") {
  Graph g([](const std::vector<Tensor>& in) { return std::vector<Tensor>{sum(in[0])}; });
  CHECK_FALSE(g.has_run());
  CHECK_THROWS_AS(g.backward(Tensor::scalar(1.0)), StateError);
  auto x = Tensor::from({2}, {1.0, 3.0}, true);
  g.forward({x});
  g.backward(Tensor::scalar(2.0));
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("grad_check rejects non-scalar functions and wrong gradients") {
  auto x = random_tensor({3}, 9);
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return square(t); }, x),
                  InvalidArgument);
  // An op whose backward is off by a factor of two must be flagged.
  auto broken = [](const Tensor& t) {
    std::vector<double> out(t.values());
    for (double& v : out) v = v * v;
    auto in = t;
    return sum(make_result("broken_square", t.shape(), std::move(out), {t},
                           [in](const TensorImpl& o) mutable {
                             auto& g = grad_buffer(*in.impl());
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               g[i] += o.grad[i] * 4.0 * in.values()[i];
                             }
                           }));
  };
  auto r = grad_check(broken, random_tensor({3}, 10, 0.5, 1.0));
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
}

TEST_CASE("grad_check_params restores parameters and honours subsampling") {
  auto w = random_tensor({20}, 11, -1.0, 1.0, true);
  auto before = w.values();
  std::vector<Tensor> params{w};
  GradCheckOptions opts;
  opts.max_coords = 5;
  opts.seed = 3;
  auto r = grad_check_params([&] { return sum(square(tanh(w))); }, params, opts);
  CHECK(r.passed);
  CHECK(r.coords_checked == 5);
  CHECK(w.values() == before);
}

TEST_CASE("shape mismatches are reported") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2}, {1.0}), ShapeError);
}

TEST_CASE("Graph forward evaluates simple compositions") {
  Graph adder([](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{add(in[0], in[1])};
  });
  auto out = adder.forward({Tensor::from({2}, {1.0, 2.0}), Tensor::from({2}, {3.0, 4.0})});
  CHECK(out[0].values() == std::vector<double>{4.0, 6.0});

  Graph affine([](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{add_scalar(scale(in[0], 2.0), 1.0)};
  });
  CHECK(affine.forward({Tensor::from({1}, {0.0})})[0].values() == std::vector<double>{1.0});

  auto a = random_tensor({5}, 12), b = random_tensor({5}, 13), c = random_tensor({5}, 14);
  Graph three([](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{tanh(mul(add(in[0], in[1]), in[2]))};
  });
  auto y = three.forward({a, b, c})[0];
  for (std::size_t i = 0; i < 5; ++i) {
    const double expect = std::tanh((a.values()[i] + b.values()[i]) * c.values()[i]);
    CHECK(y.values()[i] == expect);
  }
}

TEST_CASE("backward gives analytic gradients") {
  auto x = Tensor::from({1}, {3.0}, true);
  Graph identity([](const std::vector<Tensor>& in) { return std::vector<Tensor>{in[0]}; });
  identity.forward({x});
  identity.backward(Tensor::from({1}, {1.0}));
  CHECK(x.grad()[0] == 1.0);

  auto v = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  backward(sum(mul(v, v)));
  CHECK(std::vector<double>(v.grad().begin(), v.grad().end()) ==
        std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("backward is linear in the output gradient") {
  auto x = random_tensor({6}, 15, -1, 1, true);
  auto f = [&] { return elu(mul(tanh(x), x)); };
  auto ga = random_tensor({6}, 16), gb = random_tensor({6}, 17);
  auto grad_for = [&](const Tensor& seed) {
    x.zero_grad();
    backward(f(), seed);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto da = grad_for(ga), db = grad_for(gb), dab = grad_for(add(ga, gb));
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(dab[i] - da[i] - db[i]) <= 1e-12);
}

TEST_CASE("two forwards on identical inputs are bit-identical") {
  auto x = random_tensor({4, 7}, 18);
  auto run = [&] { return sigmoid(mul(elu(x), sqrt(add_scalar(square(x), 1.0)))).values(); };
  CHECK(run() == run());
}
