// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdemucs/dsp.hpp"

namespace msd {

// segSNR: 32 ms frames with a 16 ms hop at 16 kHz.
inline constexpr std::size_t kSegSnrFrame = 512;
inline constexpr std::size_t kSegSnrHop = 256;
inline constexpr double kSegSnrMin = -10.0;
inline constexpr double kSegSnrMax = 35.0;
/// Frames whose reference energy is this far below the loudest frame are skipped.
inline constexpr double kSegSnrSilenceDb = 40.0;

// LLR and WSS: 30 ms frames, 7.5 ms hop.
inline constexpr std::size_t kLpcFrame = 480;
inline constexpr std::size_t kLpcHop = 120;
inline constexpr std::size_t kLpcOrder = 10;
/// Fraction of the best frames kept by the LLR and WSS trimmed means.
inline constexpr double kTrimFraction = 0.95;
inline constexpr std::size_t kWssBands = 25;
inline constexpr std::size_t kWssFft = 1024;

// STOI constants (10 kHz analysis).
inline constexpr int kStoiRate = 10000;
inline constexpr std::size_t kStoiFrame = 256;
inline constexpr std::size_t kStoiFft = 512;
inline constexpr std::size_t kStoiBands = 15;
inline constexpr std::size_t kStoiSegment = 30;

double segsnr(const AudioBuffer& ref, const AudioBuffer& deg);

struct LlrResult {
  double value = 0.0;
  std::size_t frames_used = 0;
  std::size_t frames_skipped = 0;  // unstable or silent LPC frames
};
LlrResult llr_detail(const AudioBuffer& ref, const AudioBuffer& deg);
double llr(const AudioBuffer& ref, const AudioBuffer& deg);

/// Autocorrelation r[0..order] of one (already windowed) frame.
std::vector<double> autocorrelation(std::span<const double> frame, std::size_t order);
/// Levinson-Durbin. Returns a = [1, a1, ..., ap] with the prediction error
/// filter A(z) = sum a_k z^-k, or nullopt if the recursion is unstable.
std::optional<std::vector<double>> levinson(std::span<const double> r);
/// Single-frame LLR from the two autocorrelation sequences.
std::optional<double> llr_from_autocorrelation(std::span<const double> r_ref,
                                               std::span<const double> r_deg);

double wss(const AudioBuffer& ref, const AudioBuffer& deg);
/// Critical-band energies in dB of one power spectrum (kWssFft/2 bins).
std::array<double, kWssBands> wss_band_energies(std::span<const double> power);
/// Weighted slope distance between two band-energy vectors (one frame).
double wss_band_distortion(std::span<const double> ref_db, std::span<const double> deg_db);

/// Raw STOI value in [-1, 1].
double stoi(const AudioBuffer& ref, const AudioBuffer& deg);
/// Polyphase windowed-sinc rate conversion by up/down.
std::vector<double> resample_poly(std::span<const double> x, int up, int down);

struct CompositeWeights {
  double intercept = 0.0;
  double llr = 0.0;
  double pesq = 0.0;
  double wss = 0.0;
  double segsnr = 0.0;
};

struct CompositeCoefficients {
  CompositeWeights csig{3.093, -1.029, 0.603, -0.009, 0.0};
  CompositeWeights cbak{1.634, 0.0, 0.478, -0.007, 0.063};
  CompositeWeights covl{1.594, -0.512, 0.805, -0.007, 0.0};

  void validate() const;
};

nlohmann::json composite_coefficients_to_json(const CompositeCoefficients& c);
CompositeCoefficients composite_coefficients_from_json(const nlohmann::json& j);

struct MeasureVector {
  double llr = 0.0;
  double wss = 0.0;
  double segsnr = 0.0;
  std::optional<double> pesq;
};

struct CompositeScores {
  double csig = 0.0;
  double cbak = 0.0;
  double covl = 0.0;
};

CompositeScores composite(const MeasureVector& m, const CompositeCoefficients& coeffs);

struct MetricReport {
  double segsnr = 0.0;
  double llr = 0.0;
  double wss = 0.0;
  double stoi = 0.0;  // clamped to [0, 1]
  std::optional<double> pesq;
  std::optional<double> csig;
  std::optional<double> cbak;
  std::optional<double> covl;
};

/// Fixed column order of evaluation reports.
const std::vector<std::string>& metric_columns();

/// All measures for one pair. Composite scores are filled when `coeffs` is
/// given; that requires `pesq` unless no composite weight references it.
MetricReport evaluate_pair(const AudioBuffer& ref, const AudioBuffer& deg,
                           std::optional<double> pesq = std::nullopt,
                           const CompositeCoefficients* coeffs = nullptr);

/// Column-wise mean; optional fields are averaged only when every row has them.
MetricReport mean_report(const std::vector<MetricReport>& rows);

nlohmann::json metric_report_to_json(const MetricReport& r);

}  // namespace msd
