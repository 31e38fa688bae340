// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "msdemucs/error.hpp"
#include "msdemucs/metrics.hpp"
#include "test_util.hpp"

using namespace msd;
using msd::testing::random_vector;
using msd::testing::speech_like;

namespace {

std::vector<double> plus(const std::vector<double>& a, const std::vector<double>& b,
                         double gain = 1.0) {
  std::vector<double> o(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = a[i] + gain * b[i];
  return o;
}

double power(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

// Frame loop written from the definition.
double segsnr_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> snr, energy;
  for (std::size_t s = 0; s + 512 <= x.size(); s += 256) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = s; i < s + 512; ++i) {
      num += x[i] * x[i];
      den += (x[i] - y[i]) * (x[i] - y[i]);
    }
    energy.push_back(num);
    snr.push_back(den == 0.0 ? 35.0 : std::min(35.0, std::max(-10.0, 10 * std::log10(num / den))));
  }
  const double peak = *std::max_element(energy.begin(), energy.end());
  double total = 0.0;
  int used = 0;
  for (std::size_t f = 0; f < snr.size(); ++f) {
    if (energy[f] >= peak * 1e-4) {
      total += snr[f];
      ++used;
    }
  }
  return total / used;
}

// Exact autocorrelation of x[n] = a1 x[n-1] + a2 x[n-2] + e[n], var(e) = 1.
std::vector<double> ar2_autocorrelation(double a1, double a2, std::size_t order) {
  std::vector<double> rho(order + 1);
  rho[0] = 1.0;
  rho[1] = a1 / (1.0 - a2);
  for (std::size_t k = 2; k <= order; ++k) rho[k] = a1 * rho[k - 1] + a2 * rho[k - 2];
  const double r0 = 1.0 / (1.0 - a1 * rho[1] - a2 * rho[2]);
  for (double& v : rho) v *= r0;
  return rho;
}

std::vector<double> ar2_process(double a1, double a2, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> e(0.0, 1.0);
  std::vector<double> x(n + 500, 0.0);
  for (std::size_t i = 2; i < x.size(); ++i) x[i] = a1 * x[i - 1] + a2 * x[i - 2] + e(rng);
  return std::vector<double>(x.begin() + 500, x.end());
}

}  // namespace

TEST_CASE("segsnr identities and oracle") {
  auto x = speech_like(16000, 1);
  CHECK(segsnr(AudioBuffer{x}, AudioBuffer{x}) == 35.0);

  // Noise with the same power as the reference in every 256-sample block
  // gives exactly 0 dB in every overlapping frame.
  auto n = random_vector(x.size(), 2);
  for (std::size_t b = 0; b + 256 <= x.size(); b += 256) {
    double px = 0.0, pn = 0.0;
    for (std::size_t i = b; i < b + 256; ++i) {
      px += x[i] * x[i];
      pn += n[i] * n[i];
    }
    for (std::size_t i = b; i < b + 256; ++i) n[i] *= std::sqrt(px / pn);
  }
  CHECK(std::abs(segsnr(AudioBuffer{x}, AudioBuffer{plus(x, n)})) < 1e-9);

  for (int trial = 0; trial < 5; ++trial) {
    auto r = speech_like(12000, 10 + trial);
    auto d = plus(r, random_vector(r.size(), 20 + trial), 0.05 * (trial + 1));
    CHECK(segsnr(AudioBuffer{r}, AudioBuffer{d}) ==
          doctest::Approx(segsnr_oracle(r, d)).epsilon(1e-12));
  }

  // Half-silent reference: silent frames are excluded, not clamped.
  auto half = x;
  std::fill(half.begin() + 8000, half.end(), 0.0);
  auto dh = plus(half, random_vector(half.size(), 3), 0.01);
  CHECK(segsnr(AudioBuffer{half}, AudioBuffer{dh}) ==
        doctest::Approx(segsnr_oracle(half, dh)).epsilon(1e-12));

  CHECK_THROWS_AS(segsnr(AudioBuffer{std::vector<double>(4000, 0.0)}, AudioBuffer{x}),
                  InvalidArgument);
  CHECK_THROWS_AS(segsnr(AudioBuffer{std::vector<double>(4000, 0.0)},
                         AudioBuffer{random_vector(4000, 4)}),
                  UndefinedMetric);
}

TEST_CASE("segsnr is invariant to joint scaling") {
  auto r = speech_like(9000, 5);
  auto d = plus(r, random_vector(r.size(), 6), 0.03);
  const double base = segsnr(AudioBuffer{r}, AudioBuffer{d});
  for (double s : {0.01, 3.7, 250.0}) {
    std::vector<double> rs(r), ds(d);
    for (auto& v : rs) v *= s;
    for (auto& v : ds) v *= s;
    CHECK(std::abs(segsnr(AudioBuffer{rs}, AudioBuffer{ds}) - base) <= 1e-9);
  }
}

TEST_CASE("levinson recovers an AR(2) model from its exact autocorrelation") {
  auto r = ar2_autocorrelation(1.2, -0.6, 10);
  auto a = levinson(r);
  REQUIRE(a);
  CHECK((*a)[0] == 1.0);
  CHECK((*a)[1] == doctest::Approx(-1.2).epsilon(1e-12));
  CHECK((*a)[2] == doctest::Approx(0.6).epsilon(1e-12));
  for (std::size_t k = 3; k <= 10; ++k) CHECK(std::abs((*a)[k]) < 1e-12);
  CHECK_FALSE(levinson(std::vector<double>{0.0, 0.0}));
  CHECK_FALSE(levinson(std::vector<double>{1.0, 1.0, 1.0}));
}

TEST_CASE("llr of two AR(2) processes matches the closed form") {
  const double ar[2] = {1.2, -0.6}, ad[2] = {0.5, 0.3};
  auto rr = ar2_autocorrelation(ar[0], ar[1], 10);
  auto rd = ar2_autocorrelation(ad[0], ad[1], 10);
  // A_ref R_ref A_ref^T is the innovation variance, 1 by construction.
  const double A[3] = {1.0, -ad[0], -ad[1]};
  double num = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) num += A[i] * rr[static_cast<std::size_t>(std::abs(i - j))] * A[j];
  auto v = llr_from_autocorrelation(rr, rd);
  REQUIRE(v);
  CHECK(*v == doctest::Approx(std::log(num)).epsilon(1e-10));
  CHECK(*llr_from_autocorrelation(rr, rr) == 0.0);

  // Long realisations land near the same value.
  auto xr = ar2_process(ar[0], ar[1], 48000, 7);
  auto xd = ar2_process(ad[0], ad[1], 48000, 8);
  for (auto* s : {&xr, &xd}) {
    for (auto& t : *s) t *= 0.01;
  }
  auto res = llr_detail(AudioBuffer{xr}, AudioBuffer{xd});
  MESSAGE("realised llr " << res.value << " closed form " << std::log(num));
  CHECK(std::abs(res.value - std::log(num)) < 0.25 * std::log(num));
}

TEST_CASE("llr identities and skipped frames") {
  auto x = speech_like(16000, 9);
  CHECK(llr(AudioBuffer{x}, AudioBuffer{x}) == 0.0);
  auto w = random_vector(16000, 10, -0.3, 0.3);
  CHECK(llr(AudioBuffer{w}, AudioBuffer{w}) == 0.0);
  auto gap = x;
  std::fill(gap.begin() + 4000, gap.begin() + 8000, 0.0);
  auto res = llr_detail(AudioBuffer{gap}, AudioBuffer{plus(gap, w, 0.01)});
  CHECK(res.frames_skipped > 0);
  CHECK(res.frames_used + res.frames_skipped == (16000 - 480) / 120 + 1);
  CHECK_THROWS_AS(llr(AudioBuffer{std::vector<double>(2000, 0.0)}, AudioBuffer{w}),
                  InvalidArgument);
}

TEST_CASE("wss identities") {
  auto x = speech_like(16000, 11);
  CHECK(wss(AudioBuffer{x}, AudioBuffer{x}) == 0.0);
  std::vector<double> x2(x);
  for (auto& v : x2) v *= 2.0;
  CHECK(std::abs(wss(AudioBuffer{x}, AudioBuffer{x2})) < 1e-9);
  std::vector<double> flat_a(kWssBands, -3.0), flat_b(kWssBands, 12.5);
  CHECK(wss_band_distortion(flat_a, flat_b) == 0.0);
  CHECK(wss(AudioBuffer{x}, AudioBuffer{plus(x, random_vector(x.size(), 12), 0.05)}) > 1.0);
}

TEST_CASE("wss single-frame two-band oracle") {
  // Reference flat at 0 dB; the degraded frame raises bands 10 and 11 by d.
  // Slopes: +d at 9, -d at 11, zero elsewhere. Weights worked out by hand:
  //   reference: 1 everywhere;
  //   degraded:  q = 20/(20+d) below band 10, 1 at 10 and 11, q/(1+d) above.
  const double d = 6.0, q = 20.0 / (20.0 + d);
  std::vector<double> ref(kWssBands, 0.0), deg(kWssBands, 0.0);
  deg[10] = deg[11] = d;
  std::vector<double> wd(kWssBands - 1);
  for (std::size_t i = 0; i < wd.size(); ++i) {
    wd[i] = i <= 9 ? q : (i <= 11 ? 1.0 : q / (1.0 + d));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < wd.size(); ++i) {
    const double w = 0.5 * (1.0 + wd[i]);
    const double diff = (i == 9 ? -d : (i == 11 ? d : 0.0));
    num += w * diff * diff;
    den += w;
  }
  CHECK(wss_band_distortion(ref, deg) == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("wss band energies of a single bin") {
  std::vector<double> p(kWssFft / 2, 0.0);
  auto silent = wss_band_energies(p);
  for (double e : silent) CHECK(e == doctest::Approx(-100.0));
  p[64] = 1.0;  // 1 kHz, closest to band 12's centre bin
  auto e = wss_band_energies(p);
  CHECK(std::max_element(e.begin(), e.end()) - e.begin() == 12);
}

TEST_CASE("resample_poly converts a sine from 16 kHz to 10 kHz") {
  std::vector<double> x(8000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * 700.0 * i / 16000.0);
  auto y = resample_poly(x, 5, 8);
  CHECK(y.size() == 5000);
  double worst = 0.0;
  for (std::size_t m = 200; m < 4800; ++m) {
    worst = std::max(worst, std::abs(y[m] - std::sin(2 * std::numbers::pi * 700.0 * m / 10000.0)));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("stoi identities and bounds") {
  auto x = speech_like(24000, 13);
  CHECK(std::abs(stoi(AudioBuffer{x}, AudioBuffer{x}) - 1.0) <= 1e-9);
  std::vector<double> x2(x);
  for (auto& v : x2) v *= 2.0;
  CHECK(std::abs(stoi(AudioBuffer{x}, AudioBuffer{x2}) - 1.0) <= 1e-9);
  for (int t = 0; t < 10; ++t) {
    auto n = random_vector(x.size(), 100 + t, -0.2, 0.2);
    const double s = stoi(AudioBuffer{x}, AudioBuffer{n});
    CHECK(s < 0.3);
  }
  CHECK_THROWS_AS(stoi(AudioBuffer{speech_like(4000, 1)}, AudioBuffer{speech_like(4000, 1)}),
                  InvalidArgument);
}

TEST_CASE("stoi decreases with the SNR of added noise") {
  auto x = speech_like(32000, 14);
  auto n = random_vector(x.size(), 15);
  double prev = 2.0;
  for (double snr : {20.0, 10.0, 0.0, -10.0}) {
    const double g = std::sqrt(power(x) / power(n) * std::pow(10.0, -snr / 10.0));
    const double s = stoi(AudioBuffer{x}, AudioBuffer{plus(x, n, g)});
    MESSAGE("snr " << snr << " stoi " << s);
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("composite combinations") {
  MeasureVector m{0.4, 30.0, 8.0, 2.5};
  CompositeCoefficients zero;
  zero.csig = zero.cbak = zero.covl = CompositeWeights{3.0, 0, 0, 0, 0};
  auto z = composite(m, zero);
  CHECK(z.csig == 3.0);
  CHECK(z.cbak == 3.0);
  CHECK(z.covl == 3.0);

  CompositeCoefficients unit = zero;
  unit.csig = {1.0, 1.0, 0, 0, 0};
  unit.cbak = {-2.0, 0, 0, 1.0, 0};
  unit.covl = {0.5, 0, 0, 0, 1.0};
  auto u = composite(m, unit);
  CHECK(u.csig == 1.4);
  CHECK(u.cbak == 28.0);
  CHECK(u.covl == 8.5);

  auto c = composite(m, CompositeCoefficients{});
  CHECK(c.csig == doctest::Approx(3.093 - 1.029 * 0.4 + 0.603 * 2.5 - 0.009 * 30.0));
  CHECK(c.cbak == doctest::Approx(1.634 + 0.478 * 2.5 - 0.007 * 30.0 + 0.063 * 8.0));
  CHECK(c.covl == doctest::Approx(1.594 + 0.805 * 2.5 - 0.512 * 0.4 - 0.007 * 30.0));

  MeasureVector no_pesq{0.4, 30.0, 8.0, std::nullopt};
  CHECK_THROWS_AS(composite(no_pesq, CompositeCoefficients{}), InvalidArgument);
  CHECK_NOTHROW(composite(no_pesq, unit));

  auto back = composite_coefficients_from_json(composite_coefficients_to_json(unit));
  CHECK(composite(m, back).cbak == 28.0);
  auto partial = composite_coefficients_from_json({{"cbak", {{"segsnr", 0.1}}}});
  CHECK(partial.cbak.segsnr == 0.1);
  CHECK(partial.cbak.pesq == 0.478);
  CHECK_THROWS_AS(composite_coefficients_from_json(nlohmann::json::array()), InvalidArgument);
}

TEST_CASE("evaluate_pair on identical inputs and corpus mean") {
  std::vector<MetricReport> rows;
  for (int i = 0; i < 3; ++i) {
    AudioBuffer x{speech_like(16000, 30 + i)};
    auto r = evaluate_pair(x, x, 3.0 + i, nullptr);
    CHECK(r.segsnr == 35.0);
    CHECK(r.llr == 0.0);
    CHECK(r.wss == 0.0);
    CHECK(std::abs(r.stoi - 1.0) <= 1e-9);
    CHECK_FALSE(r.csig);
    rows.push_back(r);
  }
  AudioBuffer a{speech_like(16000, 40)};
  AudioBuffer b{plus(a.samples, random_vector(a.size(), 41), 0.05)};
  CompositeCoefficients coeffs;
  rows.push_back(evaluate_pair(a, b, 2.0, &coeffs));
  auto mean = mean_report(rows);
  double s = 0.0;
  for (const auto& r : rows) s += r.wss;
  CHECK(mean.wss == doctest::Approx(s / 4));
  CHECK(*mean.pesq == doctest::Approx((3.0 + 4.0 + 5.0 + 2.0) / 4));
  CHECK_FALSE(mean.csig);
  CHECK(metric_columns().front() == "segsnr");
  auto j = metric_report_to_json(rows.back());
  CHECK(j["csig"].is_number());
  CHECK(metric_report_to_json(rows.front())["csig"].is_null());
}
