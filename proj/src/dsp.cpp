// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/dsp.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "msdemucs/error.hpp"

namespace msd {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kShape: return "shape-error";
    case ErrorCode::kState: return "state-error";
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kUnsupportedFormat: return "unsupported-format";
    case ErrorCode::kVersion: return "version-error";
    case ErrorCode::kNumeric: return "numeric-failure";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kUnpaired: return "unpaired-file";
  }
  return "unknown";
}

void validate_pipeline_audio(const AudioBuffer& buf, const char* what) {
  if (buf.sample_rate != kSampleRate) {
    throw InvalidArgument(std::string(what) + ": sample rate " +
                          std::to_string(buf.sample_rate) +
                          " Hz, expected 16000 Hz");
  }
  for (double v : buf.samples) {
    if (!std::isfinite(v)) {
      throw InvalidArgument(std::string(what) + ": non-finite sample");
    }
  }
}

namespace dsp {
namespace {

std::size_t ms_to_samples(double ms, const char* field) {
  const double samples = ms * kSampleRate / 1000.0;
  const double rounded = std::round(samples);
  if (!(samples > 0.0) || std::abs(samples - rounded) > 1e-9) {
    std::ostringstream os;
    os << "StftConfig." << field << "=" << ms
       << " ms is not a positive integer sample count at 16 kHz";
    throw InvalidArgument(os.str());
  }
  return static_cast<std::size_t>(rounded);
}

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

const std::vector<Complex>& twiddles(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<Complex>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<Complex> w(n / 2 + 1);
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
    w[k] = {std::cos(angle), std::sin(angle)};
  }
  return cache.emplace(n, std::move(w)).first->second;
}

void fft_radix2(std::span<Complex> a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto& w = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        Complex tw = w[k * step];
        if (sign > 0) tw = std::conj(tw);
        const Complex u = a[i + k];
        const Complex v = a[i + k + len / 2] * tw;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void dft_direct(std::span<Complex> a, int sign) {
  const std::size_t n = a.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = sign * 2.0 * std::numbers::pi *
                           static_cast<double>((k * j) % n) /
                           static_cast<double>(n);
      acc += a[j] * Complex(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

}  // namespace

std::size_t StftConfig::fft_len() const { return ms_to_samples(fft_ms, "fft_ms"); }
std::size_t StftConfig::hop_len() const { return ms_to_samples(hop_ms, "hop_ms"); }
std::size_t StftConfig::win_len() const { return ms_to_samples(win_ms, "win_ms"); }
std::size_t StftConfig::pad_len() const { return center_pad ? win_len() / 2 : 0; }

void StftConfig::validate() const {
  const std::size_t fft = fft_len();
  hop_len();
  if (win_len() > fft) {
    throw InvalidArgument("StftConfig: win_ms " + std::to_string(win_ms) +
                          " exceeds fft_ms " + std::to_string(fft_ms));
  }
}

std::string StftConfig::describe() const {
  std::ostringstream os;
  os << "fft=" << fft_ms << "ms hop=" << hop_ms << "ms win=" << win_ms << "ms";
  return os.str();
}

std::vector<StftConfig> conventional_loss_presets() {
  return {{32.0, 3.125, 15.0}, {64.0, 7.5, 37.5}, {128.0, 15.0, 75.0}};
}

std::vector<StftConfig> stationary_loss_presets() {
  return {{8.0, 0.75, 3.75}, {16.0, 1.5625, 7.5}, {32.0, 3.125, 15.0}};
}

std::vector<StftConfig> single_32ms_loss_presets() {
  return {{32.0, 3.125, 15.0}};
}

std::vector<StftConfig> encoder_presets() {
  return {{8.0, 4.0, 8.0}, {16.0, 8.0, 16.0}, {32.0, 16.0, 32.0}};
}

std::vector<StftConfig> nonstationary_encoder_presets() {
  return {{32.0, 16.0, 32.0}, {64.0, 32.0, 64.0}, {128.0, 64.0, 128.0}};
}

std::vector<double> hann_window(std::size_t length, bool periodic) {
  if (length == 0) throw InvalidArgument("hann_window: length must be >= 1");
  if (length == 1) return {1.0};
  const double denom = static_cast<double>(periodic ? length : length - 1);
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n) {
    w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi *
                                 static_cast<double>(n) / denom));
  }
  return w;
}

void dft(std::span<Complex> data, int sign) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_radix2(data, sign);
  } else {
    dft_direct(data, sign);
  }
}

std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * static_cast<long long>(n - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

std::size_t frame_count(std::size_t len, const StftConfig& cfg) {
  const std::size_t padded = len + 2 * cfg.pad_len();
  const std::size_t win = cfg.win_len();
  if (len == 0 || padded < win) return 0;
  return (padded - win) / cfg.hop_len() + 1;
}

std::vector<Complex> stft(std::span<const double> x, const StftConfig& cfg,
                          std::size_t* frames_out) {
  cfg.validate();
  if (x.empty()) throw InvalidArgument("stft: empty signal");
  const std::size_t frames = frame_count(x.size(), cfg);
  if (frames == 0) {
    throw InvalidArgument("stft: signal of " + std::to_string(x.size()) +
                          " samples is shorter than one window (" +
                          cfg.describe() + ")");
  }
  const std::size_t n_fft = cfg.fft_len();
  const std::size_t hop = cfg.hop_len();
  const std::size_t win = cfg.win_len();
  const std::size_t bins = n_fft / 2 + 1;
  const long long pad = static_cast<long long>(cfg.pad_len());
  const auto window = hann_window(win, cfg.periodic_window);

  std::vector<Complex> out(frames * bins);
  std::vector<Complex> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), Complex{});
    const long long start = static_cast<long long>(t * hop) - pad;
    for (std::size_t n = 0; n < win; ++n) {
      const long long idx = start + static_cast<long long>(n);
      buf[n] = window[n] * x[reflect_index(idx, x.size())];
    }
    dft(buf, -1);
    std::copy_n(buf.begin(), bins, out.begin() + t * bins);
  }
  if (frames_out) *frames_out = frames;
  return out;
}

std::vector<double> stft_adjoint(std::span<const Complex> grad,
                                 std::size_t signal_len,
                                 const StftConfig& cfg) {
  const std::size_t frames = frame_count(signal_len, cfg);
  const std::size_t n_fft = cfg.fft_len();
  const std::size_t bins = n_fft / 2 + 1;
  if (grad.size() != frames * bins) {
    throw ShapeError("stft_adjoint: gradient has " +
                     std::to_string(grad.size()) + " cells, expected " +
                     std::to_string(frames * bins));
  }
  const std::size_t hop = cfg.hop_len();
  const std::size_t win = cfg.win_len();
  const long long pad = static_cast<long long>(cfg.pad_len());
  const auto window = hann_window(win, cfg.periodic_window);

  std::vector<double> out(signal_len, 0.0);
  std::vector<Complex> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), Complex{});
    std::copy_n(grad.begin() + t * bins, bins, buf.begin());
    dft(buf, +1);
    const long long start = static_cast<long long>(t * hop) - pad;
    for (std::size_t n = 0; n < win; ++n) {
      const long long idx = start + static_cast<long long>(n);
      out[reflect_index(idx, signal_len)] += window[n] * buf[n].real();
    }
  }
  return out;
}

Spectrogram stft(const AudioBuffer& x, const StftConfig& cfg) {
  Spectrogram s;
  s.config = cfg;
  s.kind = SpectrogramKind::kComplex;
  s.complex_values = stft(x.samples, cfg, &s.frames);
  s.bins = cfg.bins();
  return s;
}

Spectrogram magnitude(const Spectrogram& s) {
  if (s.kind != SpectrogramKind::kComplex) {
    throw InvalidArgument("magnitude: spectrogram is not complex");
  }
  Spectrogram m;
  m.frames = s.frames;
  m.bins = s.bins;
  m.config = s.config;
  m.kind = SpectrogramKind::kMagnitude;
  m.real_values.resize(s.complex_values.size());
  for (std::size_t i = 0; i < s.complex_values.size(); ++i) {
    m.real_values[i] = std::abs(s.complex_values[i]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Windowed-sinc resampling

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 500; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

double kaiser_sinc(double u, int half_width, double beta) {
  const double au = std::abs(u);
  if (au >= half_width) return 0.0;
  if (u == 0.0) return 1.0;
  // Integer offsets are exact zeros of the sinc.
  if (au == std::floor(au)) return 0.0;
  const double pu = std::numbers::pi * u;
  const double r = u / half_width;
  const double win = bessel_i0(beta * std::sqrt(1.0 - r * r)) / bessel_i0(beta);
  return std::sin(pu) / pu * win;
}

namespace {

void check_factor(int factor, const char* what) {
  if (factor != 2 && factor != 4 && factor != 1) {
    throw InvalidArgument(std::string(what) + ": unsupported factor " +
                          std::to_string(factor) + " (expected 2 or 4)");
  }
}

// Polyphase table for upsampling: coef[p][j + Z] = h(p/L - j).
std::vector<double> upsample_table(int factor) {
  const int z = kSincZeroCrossings;
  std::vector<double> table(static_cast<std::size_t>(factor) * (2 * z + 1));
  for (int p = 0; p < factor; ++p) {
    for (int j = -z; j <= z; ++j) {
      table[static_cast<std::size_t>(p) * (2 * z + 1) + (j + z)] = kaiser_sinc(
          static_cast<double>(p) / factor - j, z, kKaiserBeta);
    }
  }
  return table;
}

// Lowpass taps for decimation: coef[d + Z*L] = h(d/L) / L.
std::vector<double> downsample_table(int factor) {
  const int span = kSincZeroCrossings * factor;
  std::vector<double> table(static_cast<std::size_t>(2 * span + 1));
  for (int d = -span; d <= span; ++d) {
    table[static_cast<std::size_t>(d + span)] =
        kaiser_sinc(static_cast<double>(d) / factor, kSincZeroCrossings,
                    kKaiserBeta) /
        factor;
  }
  return table;
}

const std::vector<double>& cached_up(int factor) {
  static const std::vector<double> t2 = upsample_table(2);
  static const std::vector<double> t4 = upsample_table(4);
  return factor == 2 ? t2 : t4;
}

const std::vector<double>& cached_down(int factor) {
  static const std::vector<double> t2 = downsample_table(2);
  static const std::vector<double> t4 = downsample_table(4);
  return factor == 2 ? t2 : t4;
}

}  // namespace

std::size_t downsampled_len(std::size_t len, int factor) {
  return (len + static_cast<std::size_t>(factor) / 2) /
         static_cast<std::size_t>(factor);
}

std::vector<double> upsample(std::span<const double> x, int factor) {
  check_factor(factor, "upsample");
  if (factor == 1) return {x.begin(), x.end()};
  const int z = kSincZeroCrossings;
  const auto& table = cached_up(factor);
  const long long n = static_cast<long long>(x.size());
  std::vector<double> out(x.size() * factor, 0.0);
  for (long long q = 0; q < n; ++q) {
    for (int p = 0; p < factor; ++p) {
      const double* coef = &table[static_cast<std::size_t>(p) * (2 * z + 1)];
      double acc = 0.0;
      const long long lo = std::max(-static_cast<long long>(z), -q);
      const long long hi = std::min(static_cast<long long>(z), n - 1 - q);
      for (long long j = lo; j <= hi; ++j) acc += x[q + j] * coef[j + z];
      out[q * factor + p] = acc;
    }
  }
  return out;
}

std::vector<double> upsample_adjoint(std::span<const double> grad,
                                     std::size_t input_len, int factor) {
  check_factor(factor, "upsample_adjoint");
  if (factor == 1) return {grad.begin(), grad.end()};
  if (grad.size() != input_len * factor) {
    throw ShapeError("upsample_adjoint: gradient length mismatch");
  }
  const int z = kSincZeroCrossings;
  const auto& table = cached_up(factor);
  const long long n = static_cast<long long>(input_len);
  std::vector<double> out(input_len, 0.0);
  for (long long q = 0; q < n; ++q) {
    for (int p = 0; p < factor; ++p) {
      const double* coef = &table[static_cast<std::size_t>(p) * (2 * z + 1)];
      const double g = grad[q * factor + p];
      const long long lo = std::max(-static_cast<long long>(z), -q);
      const long long hi = std::min(static_cast<long long>(z), n - 1 - q);
      for (long long j = lo; j <= hi; ++j) out[q + j] += g * coef[j + z];
    }
  }
  return out;
}

std::vector<double> downsample(std::span<const double> x, int factor) {
  check_factor(factor, "downsample");
  if (factor == 1) return {x.begin(), x.end()};
  const long long span = static_cast<long long>(kSincZeroCrossings) * factor;
  const auto& table = cached_down(factor);
  const long long n = static_cast<long long>(x.size());
  std::vector<double> out(downsampled_len(x.size(), factor), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const long long centre = static_cast<long long>(k) * factor;
    const long long lo = std::max(-span, -centre);
    const long long hi = std::min(span, n - 1 - centre);
    double acc = 0.0;
    for (long long d = lo; d <= hi; ++d) acc += x[centre + d] * table[d + span];
    out[k] = acc;
  }
  return out;
}

std::vector<double> downsample_adjoint(std::span<const double> grad,
                                       std::size_t input_len, int factor) {
  check_factor(factor, "downsample_adjoint");
  if (factor == 1) return {grad.begin(), grad.end()};
  if (grad.size() != downsampled_len(input_len, factor)) {
    throw ShapeError("downsample_adjoint: gradient length mismatch");
  }
  const long long span = static_cast<long long>(kSincZeroCrossings) * factor;
  const auto& table = cached_down(factor);
  const long long n = static_cast<long long>(input_len);
  std::vector<double> out(input_len, 0.0);
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const long long centre = static_cast<long long>(k) * factor;
    const long long lo = std::max(-span, -centre);
    const long long hi = std::min(span, n - 1 - centre);
    for (long long d = lo; d <= hi; ++d) out[centre + d] += grad[k] * table[d + span];
  }
  return out;
}

AudioBuffer sinc_resample(const AudioBuffer& x, ResampleFactor factor) {
  AudioBuffer out;
  if (factor == ResampleFactor{2, 1} || factor == ResampleFactor{4, 1}) {
    out.samples = upsample(x.samples, factor.num);
    out.sample_rate = x.sample_rate * factor.num;
  } else if (factor == ResampleFactor{1, 2} || factor == ResampleFactor{1, 4}) {
    out.samples = downsample(x.samples, factor.den);
    out.sample_rate = x.sample_rate / factor.den;
  } else {
    throw InvalidArgument("sinc_resample: unsupported factor " +
                          std::to_string(factor.num) + "/" +
                          std::to_string(factor.den));
  }
  return out;
}

}  // namespace dsp
}  // namespace msd
