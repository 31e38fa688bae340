// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "msdemucs/error.hpp"
#include "msdemucs/nn.hpp"
#include "test_util.hpp"

using namespace msd;
using namespace msd::ag;
using namespace msd::nn;
using msd::testing::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

// Weighted sum with fixed random weights, so every output element matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed)));
}

void expect_pass(const GradCheckReport& r) { CHECK_MESSAGE(r.passed, r.to_string()); }

}  // namespace

TEST_CASE("conv1d matches a direct loop") {
  const std::size_t B = 2, Cin = 3, Cout = 4, T = 11, K = 3, S = 2;
  auto x = random_tensor({B, Cin, T}, 1);
  auto w = random_tensor({Cout, Cin, K}, 2);
  auto b = random_tensor({Cout}, 3);
  Conv1dOptions opts{S, 2, 1};
  auto y = conv1d(x, w, b, opts);
  const std::size_t Tp = T + 3, To = (Tp - K) / S + 1;
  REQUIRE(y.shape() == Shape{B, Cout, To});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t t = 0; t < To; ++t) {
        double acc = b.values()[o];
        for (std::size_t c = 0; c < Cin; ++c)
          for (std::size_t k = 0; k < K; ++k) {
            const long long src = static_cast<long long>(t * S + k) - 2;
            if (src < 0 || src >= static_cast<long long>(T)) continue;
            acc += w.values()[(o * Cin + c) * K + k] * x.values()[(n * Cin + c) * T + src];
          }
        CHECK(y.values()[(n * Cout + o) * To + t] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("causal and centred conv1d share output length") {
  for (std::size_t T : {7u, 16u, 33u}) {
    auto x = random_tensor({1, 2, T}, T);
    auto w = random_tensor({3, 2, 8}, 5);
    auto yc = conv1d(x, w, Tensor(), Conv1dOptions::causal(8, 4));
    auto yn = conv1d(x, w, Tensor(), Conv1dOptions::centred(8, 4));
    CHECK(yc.dim(2) == (T + 3) / 4);
    CHECK(yc.shape() == yn.shape());
  }
}

TEST_CASE("causal conv1d output ignores future input") {
  auto x = random_tensor({1, 2, 40}, 6);
  auto w = random_tensor({3, 2, 8}, 7);
  auto y1 = conv1d(x, w, Tensor(), Conv1dOptions::causal(8, 4));
  auto x2 = x.detach();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 21; t < 40; ++t) x2.data()[c * 40 + t] += 5.0;
  auto y2 = conv1d(x2, w, Tensor(), Conv1dOptions::causal(8, 4));
  // Output frame t reads input samples up to t*4.
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t t = 0; t * 4 <= 20; ++t)
      CHECK(y1.values()[o * y1.dim(2) + t] == y2.values()[o * y2.dim(2) + t]);
}

TEST_CASE("conv_transpose1d is the adjoint of an unpadded strided conv1d") {
  const std::size_t Cin = 3, Cout = 5, K = 8, S = 4, Tq = 6;
  const std::size_t T = (Tq - 1) * S + K;
  auto w = random_tensor({Cout, Cin, K}, 8);
  auto x = random_tensor({2, Cin, T}, 9);
  auto g = random_tensor({2, Cout, Tq}, 10);
  auto y = conv1d(x, w, Tensor(), Conv1dOptions{S, 0, 0});
  REQUIRE(y.shape() == g.shape());
  auto z = conv_transpose1d(g, w, Tensor(), S);
  REQUIRE(z.shape() == x.shape());
  CHECK(dot(y, g) == doctest::Approx(dot(x, z)).epsilon(1e-12));
}

TEST_CASE("conv ops pass the finite-difference check") {
  auto x = random_tensor({2, 3, 13}, 11);
  auto w = random_tensor({4, 3, 5}, 12, -1, 1, true);
  auto b = random_tensor({4}, 13, -1, 1, true);
  std::vector<Tensor> p1{w, b};
  expect_pass(grad_check([&](const Tensor& xx) {
    return probe(conv1d(xx, w, b, Conv1dOptions::causal(5, 2)), 1);
  }, x));
  expect_pass(grad_check_params([&] {
    return probe(conv1d(x, w, b, Conv1dOptions::centred(5, 2)), 1);
  }, p1));

  auto wt = random_tensor({3, 2, 4}, 14, -1, 1, true);
  auto bt = random_tensor({2}, 15, -1, 1, true);
  std::vector<Tensor> p2{wt, bt};
  expect_pass(grad_check([&](const Tensor& xx) {
    return probe(conv_transpose1d(xx, wt, bt, 3), 2);
  }, x));
  expect_pass(grad_check_params([&] { return probe(conv_transpose1d(x, wt, bt, 3), 2); }, p2));

  auto x2 = random_tensor({2, 2, 7, 6}, 16);
  auto w2 = random_tensor({3, 2, 3, 3}, 17, -1, 1, true);
  auto b2 = random_tensor({3}, 18, -1, 1, true);
  std::vector<Tensor> p3{w2, b2};
  Conv2dOptions o2{2, 1, 1, 1, 2, 0};
  expect_pass(grad_check([&](const Tensor& xx) { return probe(conv2d(xx, w2, b2, o2), 3); }, x2));
  expect_pass(grad_check_params([&] { return probe(conv2d(x2, w2, b2, o2), 3); }, p3));
}

TEST_CASE("conv2d matches a direct loop") {
  auto x = random_tensor({1, 2, 5, 4}, 19);
  auto w = random_tensor({2, 2, 3, 3}, 20);
  Conv2dOptions o{2, 1, 1, 1, 2, 0};
  auto y = conv2d(x, w, Tensor(), o);
  const std::size_t Ho = (5 + 2 - 3) / 2 + 1, Wo = (4 + 2 - 3) + 1;
  REQUIRE(y.shape() == Shape{1, 2, Ho, Wo});
  for (std::size_t oc = 0; oc < 2; ++oc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t bb = 0; bb < 3; ++bb) {
              const long long h = static_cast<long long>(i * 2 + a) - 1;
              const long long v = static_cast<long long>(j + bb) - 2;
              if (h < 0 || h >= 5 || v < 0 || v >= 4) continue;
              acc += w.values()[((oc * 2 + c) * 3 + a) * 3 + bb] *
                     x.values()[(c * 5 + h) * 4 + v];
            }
        CHECK(y.values()[(oc * Ho + i) * Wo + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("batchnorm2d normalises in training and is affine in eval") {
  const std::size_t C = 3;
  auto x = random_tensor({4, C, 5, 6}, 21, -2.0, 3.0);
  auto gamma = Tensor::full({C}, 1.0);
  auto beta = Tensor::full({C}, 0.0);
  BatchNormState st(C);
  auto y = batchnorm2d(x, gamma, beta, st, true);
  const std::size_t per = 5 * 6;
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0, v = 0.0, xm = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < per; ++i) {
        m += y.values()[(n * C + c) * per + i];
        xm += x.values()[(n * C + c) * per + i];
      }
    m /= 4 * per;
    xm /= 4 * per;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < per; ++i) v += std::pow(y.values()[(n * C + c) * per + i] - m, 2);
    v /= 4 * per;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(st.running_mean[c] == doctest::Approx(0.1 * xm));
  }
  BatchNormState fixed(C);
  fixed.running_mean = {0.5, -1.0, 2.0};
  fixed.running_var = {4.0, 1.0, 0.25};
  auto ye = batchnorm2d(x, gamma, beta, fixed, false);
  for (std::size_t c = 0; c < C; ++c) {
    const double expect = (x.values()[c * per] - fixed.running_mean[c]) /
                          std::sqrt(fixed.running_var[c] + fixed.eps);
    CHECK(ye.values()[c * per] == doctest::Approx(expect));
  }
  CHECK(fixed.running_mean[0] == 0.5);
}

TEST_CASE("batchnorm2d passes the finite-difference check") {
  auto x = random_tensor({2, 2, 3, 4}, 22);
  auto gamma = random_tensor({2}, 23, 0.5, 1.5, true);
  auto beta = random_tensor({2}, 24, -1, 1, true);
  BatchNormState st(2);
  st.running_var = {0.7, 1.3};
  for (bool training : {true, false}) {
    CAPTURE(training);
    std::vector<Tensor> params{gamma, beta};
    expect_pass(grad_check([&](const Tensor& xx) {
      BatchNormState s = st;
      return probe(batchnorm2d(xx, gamma, beta, s, training), 4);
    }, x));
    expect_pass(grad_check_params([&] {
      BatchNormState s = st;
      return probe(batchnorm2d(x, gamma, beta, s, training), 4);
    }, params));
  }
}

TEST_CASE("linear, glu, concat, slice and transposes pass the finite-difference check") {
  auto x = random_tensor({2, 4, 5}, 25);
  auto w = random_tensor({6, 4}, 26, -1, 1, true);
  auto b = random_tensor({6}, 27, -1, 1, true);
  std::vector<Tensor> params{w, b};
  expect_pass(grad_check([&](const Tensor& xx) { return probe(linear(xx, w, b), 5); }, x));
  expect_pass(grad_check_params([&] { return probe(linear(x, w, b), 5); }, params));
  expect_pass(grad_check([](const Tensor& xx) { return probe(glu(xx, 1), 6); }, x));
  expect_pass(grad_check([](const Tensor& xx) { return probe(glu(xx, 0), 6); }, x));
  auto other = random_tensor({2, 3, 5}, 28);
  expect_pass(grad_check([&](const Tensor& xx) {
    std::vector<Tensor> parts{other, xx, xx};
    return probe(concat(parts, 1), 7);
  }, x));
  expect_pass(grad_check([](const Tensor& xx) { return probe(slice_last(xx, 1, 3), 8); }, x));
  expect_pass(grad_check([](const Tensor& xx) { return probe(bct_to_tbc(xx), 9); }, x));
  expect_pass(grad_check([](const Tensor& xx) { return probe(tbc_to_bct(xx), 9); }, x));
}

TEST_CASE("glu and transposes compute the expected values") {
  auto x = Tensor::from({1, 2, 1}, {3.0, 0.0});
  CHECK(glu(x, 1).item() == doctest::Approx(1.5));
  auto t = random_tensor({2, 3, 4}, 29);
  CHECK(tbc_to_bct(bct_to_tbc(t)).values() == t.values());
  auto p = bct_to_tbc(t);
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.values()[(3 * 2 + 1) * 3 + 2] == t.values()[(1 * 3 + 2) * 4 + 3]);
  CHECK_THROWS_AS(glu(Tensor::zeros({1, 3, 2}), 1), ShapeError);
  CHECK_THROWS_AS(slice_last(t, 2, 3), ShapeError);
}

TEST_CASE("lstm matches a scalar recurrence") {
  const std::size_t T = 6, B = 2, F = 3, H = 2;
  LstmLayerParams p{random_tensor({4 * H, F}, 30), random_tensor({4 * H, H}, 31),
                    random_tensor({4 * H}, 32), random_tensor({4 * H}, 33)};
  auto x = random_tensor({T, B, F}, 34);
  auto y = lstm_layer(x, p);
  REQUIRE(y.shape() == Shape{T, B, H});
  auto sg = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t n = 0; n < B; ++n) {
    std::vector<double> h(H, 0.0), c(H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> z(4 * H);
      for (std::size_t r = 0; r < 4 * H; ++r) {
        double acc = p.b_ih.values()[r] + p.b_hh.values()[r];
        for (std::size_t f = 0; f < F; ++f)
          acc += p.w_ih.values()[r * F + f] * x.values()[(t * B + n) * F + f];
        for (std::size_t k = 0; k < H; ++k) acc += p.w_hh.values()[r * H + k] * h[k];
        z[r] = acc;
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double i = sg(z[k]), f = sg(z[H + k]), g = std::tanh(z[2 * H + k]),
                     o = sg(z[3 * H + k]);
        c[k] = f * c[k] + i * g;
        h[k] = o * std::tanh(c[k]);
        CHECK(y.values()[(t * B + n) * H + k] == doctest::Approx(h[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("stacked lstm passes the finite-difference check") {
  const std::size_t F = 3, H = 3;
  std::vector<LstmLayerParams> layers;
  std::vector<Tensor> params;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::size_t in = l == 0 ? F : H;
    LstmLayerParams p{random_tensor({4 * H, in}, 40 + l, -0.5, 0.5, true),
                      random_tensor({4 * H, H}, 50 + l, -0.5, 0.5, true),
                      random_tensor({4 * H}, 60 + l, -0.5, 0.5, true),
                      random_tensor({4 * H}, 70 + l, -0.5, 0.5, true)};
    params.insert(params.end(), {p.w_ih, p.w_hh, p.b_ih, p.b_hh});
    layers.push_back(p);
  }
  auto x = random_tensor({5, 2, F}, 35);
  expect_pass(grad_check([&](const Tensor& xx) { return probe(lstm(xx, layers), 10); }, x));
  expect_pass(grad_check_params([&] { return probe(lstm(x, layers), 10); }, params));
}

TEST_CASE("ParameterStore seeds per name and rejects duplicates") {
  ParameterStore a, b;
  auto wa = a.uniform("encoder.0.conv.weight", {4, 2, 8}, 16, 42);
  b.uniform("something.else", {3}, 3, 42);
  auto wb = b.uniform("encoder.0.conv.weight", {4, 2, 8}, 16, 42);
  CHECK(wa.values() == wb.values());
  for (double v : wa.values()) CHECK(std::abs(v) <= 0.25);
  auto wc = a.uniform("encoder.1.conv.weight", {4, 2, 8}, 16, 42);
  CHECK(wa.values() != wc.values());
  CHECK_THROWS_AS(a.uniform("encoder.0.conv.weight", {1}, 1, 42), InvalidArgument);
  CHECK_THROWS_AS(a.at("missing"), InvalidArgument);
  CHECK(a.scalar_count() == 128);
  CHECK(a.at("encoder.0.conv.weight").requires_grad());
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("layer anchor examples") {
  auto x = random_tensor({1, 3, 6}, 80);
  Tensor eye = Tensor::zeros({3, 3, 1});
  for (std::size_t i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  CHECK(conv1d(x, eye, Tensor(), Conv1dOptions{}).values() == x.values());

  auto y = conv1d(Tensor::from({1, 1, 3}, {1, 2, 3}), Tensor::from({1, 1, 2}, {1, 1}),
                  Tensor(), Conv1dOptions{});
  CHECK(y.values() == std::vector<double>{3.0, 5.0});

  auto gated = glu(Tensor::from({1, 2, 1}, {0.7, -50.0}), 1);
  CHECK(std::abs(gated.item()) < 1e-20);
  auto half = glu(Tensor::from({1, 4, 1}, {0.3, -1.2, 0.0, 0.0}), 1);
  CHECK(half.values() == std::vector<double>{0.15, -0.6});
  auto a = random_tensor({1, 2, 3}, 81), bb = random_tensor({1, 2, 3}, 82);
  std::vector<Tensor> parts{a, bb};
  auto g = glu(concat(parts, 1), 1);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(g.values()[i] ==
          doctest::Approx(a.values()[i] / (1.0 + std::exp(-bb.values()[i]))).epsilon(1e-14));
  }

  CHECK(elu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(elu(Tensor::scalar(-100.0)).item() == doctest::Approx(-1.0));
  CHECK(relu(Tensor::scalar(-5.0)).item() == 0.0);

  BatchNormState st(2);
  auto cst = Tensor::full({2, 2, 3, 3}, 4.2);
  auto bn = batchnorm2d(cst, Tensor::full({2}, 1.0), Tensor::full({2}, 0.0), st, true);
  for (double v : bn.values()) CHECK(v == 0.0);
}

TEST_CASE("lstm zero case and a single hand-computed step") {
  const std::size_t H = 2;
  LstmLayerParams z{Tensor::zeros({4 * H, 3}), Tensor::zeros({4 * H, H}),
                    Tensor::zeros({4 * H}), Tensor::zeros({4 * H})};
  auto zero_out = lstm_layer(Tensor::zeros({4, 1, 3}), z);
  for (double v : zero_out.values()) CHECK(v == 0.0);

  // One unit, one feature: gates are set through the biases alone.
  LstmLayerParams p{Tensor::zeros({4, 1}), Tensor::zeros({4, 1}),
                    Tensor::from({4}, {1.0, 0.0, 0.5, -1.0}), Tensor::zeros({4})};
  auto h = lstm_layer(Tensor::zeros({1, 1, 1}), p).item();
  const double i = 1.0 / (1.0 + std::exp(-1.0)), g = std::tanh(0.5),
               o = 1.0 / (1.0 + std::exp(1.0));
  CHECK(h == doctest::Approx(o * std::tanh(i * g)).epsilon(1e-15));
}

TEST_CASE("resampling and frame gather pass the finite-difference check") {
  auto x = random_tensor({2, 1, 70}, 90);
  expect_pass(grad_check([](const Tensor& xx) { return probe(upsample_last(xx, 4), 11); }, x));
  expect_pass(grad_check([](const Tensor& xx) { return probe(downsample_last(xx, 2), 12); }, x));
  FrameGather plan{{0, 3, 3, 9}, {1, 4, 3, 9}, {0.25, 1.0, 0.5, 1.0}, {0.75, 0.0, 0.5, 0.0}};
  auto f = random_tensor({2, 3, 10}, 91);
  expect_pass(grad_check([&](const Tensor& xx) { return probe(gather_frames(xx, plan), 13); }, f));
  auto y = gather_frames(f, plan);
  CHECK(y.shape() == Shape{2, 3, 4});
  CHECK(y.values()[0] == doctest::Approx(0.25 * f.values()[0] + 0.75 * f.values()[1]));
  CHECK(y.values()[3] == f.values()[9]);
  FrameGather bad{{10}, {0}, {1.0}, {0.0}};
  CHECK_THROWS_AS(gather_frames(f, bad), ShapeError);
}
