// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace msd {

inline constexpr int kSampleRate = 16000;

/// Mono waveform. Pipeline entry points require 16 kHz; resampled
/// intermediates carry their own rate.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
};

/// Throws InvalidArgument unless the buffer is 16 kHz with finite samples.
void validate_pipeline_audio(const AudioBuffer& buf, const char* what);

namespace dsp {

using Complex = std::complex<double>;

/// Windowing parameters expressed in milliseconds at 16 kHz. Every field
/// must convert to an integer sample count.
struct StftConfig {
  double fft_ms = 32.0;
  double hop_ms = 8.0;
  double win_ms = 32.0;
  bool center_pad = true;
  bool periodic_window = false;

  std::size_t fft_len() const;
  std::size_t hop_len() const;
  std::size_t win_len() const;
  /// Reflect padding applied on each side when center_pad is set.
  std::size_t pad_len() const;
  std::size_t bins() const { return fft_len() / 2 + 1; }

  /// Throws InvalidArgument on non-integral sample counts, hop <= 0 or
  /// win > fft.
  void validate() const;
  std::string describe() const;

  bool operator==(const StftConfig&) const = default;
};

/// {32, 64, 128} ms FFTs with {3.125, 7.5, 15} ms hops and {15, 37.5, 75} ms
/// Hann windows: the conventional multi-resolution loss.
std::vector<StftConfig> conventional_loss_presets();
/// {8, 16, 32} ms FFTs with {0.75, 1.5625, 3.125} ms hops and
/// {3.75, 7.5, 15} ms windows.
std::vector<StftConfig> stationary_loss_presets();
/// The 32 ms conventional resolution alone.
std::vector<StftConfig> single_32ms_loss_presets();
/// {8, 16, 32} ms FFTs, {4, 8, 16} ms hops, {8, 16, 32} ms windows: the
/// encoder spectrogram inputs.
std::vector<StftConfig> encoder_presets();
/// {32, 64, 128} ms encoder inputs, hop = fft/2 and window = fft.
std::vector<StftConfig> nonstationary_encoder_presets();

enum class SpectrogramKind { kComplex, kMagnitude, kLogMagnitude };

/// Time-frequency array, row-major [frames x bins].
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  SpectrogramKind kind = SpectrogramKind::kComplex;
  StftConfig config;
  std::vector<Complex> complex_values;  // kComplex only
  std::vector<double> real_values;      // magnitude kinds

  const Complex& at(std::size_t frame, std::size_t bin) const {
    return complex_values[frame * bins + bin];
  }
  double value(std::size_t frame, std::size_t bin) const {
    return real_values[frame * bins + bin];
  }
};

/// Symmetric Hann window (denominator length-1); periodic variant uses
/// denominator length.
std::vector<double> hann_window(std::size_t length, bool periodic = false);

/// In-place complex DFT, sign -1 forward, +1 inverse (unnormalised).
/// Radix-2 for powers of two, direct evaluation otherwise.
void dft(std::span<Complex> data, int sign);

/// Mirror-reflect index into [0, n) without repeating the edge sample.
std::size_t reflect_index(long long i, std::size_t n);

std::size_t frame_count(std::size_t len, const StftConfig& cfg);

Spectrogram stft(const AudioBuffer& x, const StftConfig& cfg);
/// Raw-span form used by the loss and the model front-end.
std::vector<Complex> stft(std::span<const double> x, const StftConfig& cfg,
                          std::size_t* frames_out);
/// Adjoint of the real-input STFT: given dL/dRe and dL/dIm per cell (packed
/// as complex grad = dRe + i dIm), returns dL/dx.
std::vector<double> stft_adjoint(std::span<const Complex> grad,
                                 std::size_t signal_len,
                                 const StftConfig& cfg);

Spectrogram magnitude(const Spectrogram& s);

/// Ratio restricted to 2, 4, 1/2 and 1/4.
struct ResampleFactor {
  int num = 1;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  bool operator==(const ResampleFactor&) const = default;
};

/// Kaiser-windowed sinc kernel, 32 zero crossings per side, beta 8.
inline constexpr int kSincZeroCrossings = 32;
inline constexpr double kKaiserBeta = 8.0;

AudioBuffer sinc_resample(const AudioBuffer& x, ResampleFactor factor);

/// Span forms, with adjoints for backpropagation through the model's
/// resampling boundaries.
std::vector<double> upsample(std::span<const double> x, int factor);
std::vector<double> upsample_adjoint(std::span<const double> grad,
                                     std::size_t input_len, int factor);
std::vector<double> downsample(std::span<const double> x, int factor);
std::vector<double> downsample_adjoint(std::span<const double> grad,
                                       std::size_t input_len, int factor);
std::size_t downsampled_len(std::size_t len, int factor);

/// Lookahead, in samples at the lower rate, of one resampling pass.
inline constexpr std::size_t resample_lookahead() {
  return static_cast<std::size_t>(kSincZeroCrossings);
}

/// Zeroth-order modified Bessel function of the first kind.
double bessel_i0(double x);
/// Kaiser-windowed sinc evaluated at u (in zero-crossing units), zero
/// outside |u| < half_width.
double kaiser_sinc(double u, int half_width, double beta);

}  // namespace dsp
}  // namespace msd
