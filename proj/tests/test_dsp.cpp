// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "msdemucs/dsp.hpp"
#include "msdemucs/error.hpp"
#include "test_util.hpp"

using namespace msd;
using namespace msd::dsp;
using msd::testing::bandlimited_signal;
using msd::testing::oracle_stft;
using msd::testing::random_vector;

namespace {

std::vector<StftConfig> all_presets() {
  auto p = conventional_loss_presets();
  auto e = encoder_presets();
  p.insert(p.end(), e.begin(), e.end());
  return p;
}

}  // namespace

TEST_CASE("hann_window anchors and closed form") {
  CHECK(hann_window(1) == std::vector<double>{1.0});
  auto w3 = hann_window(3);
  CHECK(w3[0] == doctest::Approx(0.0));
  CHECK(w3[1] == doctest::Approx(1.0));
  CHECK(w3[2] == doctest::Approx(0.0));
  auto w8 = hann_window(8);
  for (std::size_t n = 0; n < 8; ++n) {
    const double expected = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / 7.0));
    CHECK(w8[n] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(w8[n] == doctest::Approx(w8[7 - n]).epsilon(1e-15));
    CHECK(w8[n] <= 1.0);
  }
  auto p8 = hann_window(8, true);
  CHECK(p8[4] == doctest::Approx(1.0));
  CHECK_THROWS_AS(hann_window(0), InvalidArgument);
}

TEST_CASE("StftConfig presets convert to integer samples") {
  for (const auto& cfg : conventional_loss_presets()) CHECK_NOTHROW(cfg.validate());
  for (const auto& cfg : stationary_loss_presets()) CHECK_NOTHROW(cfg.validate());
  for (const auto& cfg : encoder_presets()) CHECK_NOTHROW(cfg.validate());
  auto conv = conventional_loss_presets();
  CHECK(conv[0].hop_len() == 50);
  CHECK(conv[1].win_len() == 600);
  CHECK(conv[2].fft_len() == 2048);
  CHECK_THROWS_AS((StftConfig{32.0, 3.1, 15.0}.validate()), InvalidArgument);
  CHECK_THROWS_AS((StftConfig{8.0, 4.0, 16.0}.validate()), InvalidArgument);
}

TEST_CASE("stft of zeros is zero") {
  AudioBuffer x{std::vector<double>(1000, 0.0)};
  for (const auto& cfg : all_presets()) {
    auto s = stft(x, cfg);
    for (const auto& v : s.complex_values) CHECK(std::abs(v) == 0.0);
  }
}

TEST_CASE("stft of an impulse reproduces window samples") {
  StftConfig cfg{0.25, 0.25, 0.25, false};  // 4-sample frames
  AudioBuffer x{{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
  auto s = stft(x, cfg);
  const auto w = hann_window(4);
  for (std::size_t k = 0; k < s.bins; ++k) CHECK(std::abs(s.at(0, k) - w[0]) < 1e-15);
  // Impulse at offset m inside a frame: every bin has modulus w[m].
  AudioBuffer y{{0.0, 1.0, 0.0, 0.0}};
  auto sy = magnitude(stft(y, cfg));
  for (std::size_t k = 0; k < sy.bins; ++k) CHECK(sy.value(0, k) == doctest::Approx(w[1]));
}

TEST_CASE("stft matches a brute-force DFT on 256 random samples") {
  StftConfig cfg{8.0, 4.0, 8.0};
  auto x = random_vector(256, 7);
  std::size_t frames = 0, oracle_frames = 0;
  auto fast = stft(x, cfg, &frames);
  auto slow = oracle_stft(x, cfg, &oracle_frames);
  REQUIRE(frames == oracle_frames);
  double err = 0.0;
  for (std::size_t i = 0; i < fast.size(); ++i) err = std::max(err, std::abs(fast[i] - slow[i]));
  CHECK(err < 1e-6);
}

TEST_CASE("frame_count examples and consistency with stft") {
  StftConfig cfg{16.0, 8.0, 16.0, false};
  CHECK(frame_count(cfg.win_len(), cfg) == 1);
  CHECK(frame_count(cfg.win_len() + cfg.hop_len(), cfg) == 2);
  CHECK(frame_count(10, cfg) == 0);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(300, 3000);
  for (const auto& preset : all_presets()) {
    for (int i = 0; i < 5; ++i) {
      const std::size_t n = len(rng);
      std::size_t frames = 0;
      stft(random_vector(n, i), preset, &frames);
      CHECK(frames == frame_count(n, preset));
    }
  }
  CHECK_THROWS_AS(stft(AudioBuffer{{0.1, 0.2}}, cfg), InvalidArgument);
}

TEST_CASE("magnitude is the elementwise modulus") {
  Spectrogram s;
  s.frames = 1;
  s.bins = 3;
  s.complex_values = {{3.0, 4.0}, {0.0, 0.0}, {-1.5, 2.0}};
  auto m = magnitude(s);
  CHECK(m.kind == SpectrogramKind::kMagnitude);
  CHECK(m.value(0, 0) == 5.0);
  CHECK(m.value(0, 1) == 0.0);
  CHECK(m.value(0, 2) == doctest::Approx(std::sqrt(1.5 * 1.5 + 4.0)));
  CHECK_THROWS_AS(magnitude(m), InvalidArgument);
}

TEST_CASE("Parseval holds for a full-length rectangular frame") {
  for (std::size_t n : {64u, 100u, 512u}) {
    auto x = random_vector(n, n);
    std::vector<Complex> buf(x.begin(), x.end());
    dft(buf, -1);
    double time_energy = 0.0, freq_energy = 0.0;
    for (double v : x) time_energy += v * v;
    for (const auto& v : buf) freq_energy += std::norm(v);
    CHECK(std::abs(time_energy - freq_energy / n) <= 1e-9 * time_energy);
  }
}

TEST_CASE("stft is linear") {
  const double a = 0.7, b = -1.3;
  auto x = random_vector(2000, 11), y = random_vector(2000, 12);
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  for (const auto& cfg : all_presets()) {
    std::size_t f = 0;
    auto sx = stft(x, cfg, &f), sy = stft(y, cfg, &f), sz = stft(z, cfg, &f);
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < sz.size(); ++i) {
      scale = std::max(scale, std::abs(sz[i]));
      err = std::max(err, std::abs(sz[i] - (a * sx[i] + b * sy[i])));
    }
    CHECK(err <= 1e-9 * scale);
  }
}

TEST_CASE("stft_adjoint satisfies the inner-product identity") {
  for (const auto& cfg : all_presets()) {
    auto x = random_vector(1500, 21);
    std::size_t frames = 0;
    auto spec = stft(x, cfg, &frames);
    auto gre = random_vector(spec.size(), 22), gim = random_vector(spec.size(), 23);
    std::vector<Complex> g(spec.size());
    double lhs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = {gre[i], gim[i]};
      lhs += spec[i].real() * gre[i] + spec[i].imag() * gim[i];
    }
    auto adj = stft_adjoint(g, x.size(), cfg);
    double rhs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * adj[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("reflect_index mirrors without repeating edges") {
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(-4, 5) == 4);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(-6, 5) == 2);
  CHECK(reflect_index(3, 1) == 0);
}

TEST_CASE("sinc_resample of zeros is zeros") {
  AudioBuffer z{std::vector<double>(500, 0.0)};
  for (auto f : {ResampleFactor{2, 1}, ResampleFactor{4, 1}, ResampleFactor{1, 2},
                 ResampleFactor{1, 4}}) {
    auto out = sinc_resample(z, f);
    CHECK(out.size() == static_cast<std::size_t>(std::lround(500 * f.value())));
    for (double v : out.samples) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(sinc_resample(z, ResampleFactor{3, 1}), InvalidArgument);
  CHECK_THROWS_AS(sinc_resample(z, ResampleFactor{2, 3}), InvalidArgument);
}

TEST_CASE("sinc up x4 then down x4 reconstructs band-limited signals") {
  const std::size_t n = 1024, edge = 2 * kSincZeroCrossings;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    AudioBuffer x{bandlimited_signal(n, 6000.0, 100 + trial)};
    auto up = sinc_resample(x, {4, 1});
    CHECK(up.sample_rate == 64000);
    auto back = sinc_resample(up, {1, 4});
    REQUIRE(back.size() == n);
    CHECK(back.sample_rate == 16000);
    for (std::size_t i = edge; i < n - edge; ++i) {
      worst = std::max(worst, std::abs(back.samples[i] - x.samples[i]));
    }
  }
  MESSAGE("worst round-trip error " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("sinc up x2 of a 1 kHz sine is the same sine at 32 kHz") {
  const std::size_t n = 800;
  AudioBuffer x;
  for (std::size_t i = 0; i < n; ++i) {
    x.samples.push_back(std::sin(2.0 * std::numbers::pi * 1000.0 * i / 16000.0));
  }
  auto up = sinc_resample(x, {2, 1});
  REQUIRE(up.size() == 2 * n);
  double worst = 0.0;
  for (std::size_t m = 4 * kSincZeroCrossings; m < 2 * n - 4 * kSincZeroCrossings; ++m) {
    const double expected = std::sin(2.0 * std::numbers::pi * 1000.0 * m / 32000.0);
    worst = std::max(worst, std::abs(up.samples[m] - expected));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("resampler adjoints satisfy the inner-product identity") {
  for (int factor : {2, 4}) {
    auto x = random_vector(300, factor);
    auto up = upsample(x, factor);
    auto gu = random_vector(up.size(), 40 + factor);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * gu[i];
    auto adj = upsample_adjoint(gu, x.size(), factor);
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * adj[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    auto y = random_vector(1203, 50 + factor);
    auto down = downsample(y, factor);
    auto gd = random_vector(down.size(), 60 + factor);
    lhs = rhs = 0.0;
    for (std::size_t i = 0; i < down.size(); ++i) lhs += down[i] * gd[i];
    auto adj2 = downsample_adjoint(gd, y.size(), factor);
    for (std::size_t i = 0; i < y.size(); ++i) rhs += y[i] * adj2[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}
