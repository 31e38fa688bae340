// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdemucs/autograd.hpp"
#include "msdemucs/dsp.hpp"

namespace msd {

using ag::Tensor;

/// Floor on the squared magnitude inside the log, and on the
/// spectral-convergence denominator.
inline constexpr double kLossEps = 1e-7;
/// The same floor expressed on the magnitude: log sqrt(max(|X|^2, eps)).
inline const double kMagFloor = std::sqrt(kLossEps);

enum class MaeTarget { kAverage, kPerHead };

struct LossConfig {
  double alpha = 0.5;
  std::vector<dsp::StftConfig> resolutions = dsp::conventional_loss_presets();
  /// MRD only: head i is scored at resolutions[head_assignment[i]]. Empty
  /// means head i <-> resolution i.
  std::vector<std::size_t> head_assignment;
  MaeTarget mae_target = MaeTarget::kAverage;

  void validate() const;
  /// Resolution index of every head for `heads` outputs. Throws
  /// InvalidArgument when heads and resolutions are not in bijection.
  std::vector<std::size_t> assignment(std::size_t heads) const;
};

nlohmann::json loss_config_to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

struct LossReport {
  double mae = 0.0;
  std::vector<double> sc;   // per resolution
  std::vector<double> mag;  // per resolution
  double total = 0.0;

  /// One structured log record.
  nlohmann::json to_json(std::size_t step) const;
};

struct LossResult {
  Tensor total;
  LossReport report;
};

/// Differentiable |STFT| of every row of x [..., T], shaped [rows, frames, bins].
Tensor stft_magnitude(const Tensor& x, const dsp::StftConfig& cfg);

// Terms on [..., T] tensors. Only `est` is differentiated; the reference is
// treated as a constant. Several rows are pooled into one array.
Tensor l_mae(const Tensor& est, const Tensor& ref);
Tensor l_sc(const Tensor& est, const Tensor& ref, const dsp::StftConfig& cfg);
Tensor l_mag(const Tensor& est, const Tensor& ref, const dsp::StftConfig& cfg);

/// `heads` holds one output (non-MRD) or three (MRD); `average` is the
/// output the time-domain term is measured on by default.
LossResult l_demucs(const std::vector<Tensor>& heads, const Tensor& average,
                    const Tensor& clean, const LossConfig& cfg);

// Plain-value conveniences.
double l_mae(const AudioBuffer& est, const AudioBuffer& ref);
double l_sc(const AudioBuffer& est, const AudioBuffer& ref, const dsp::StftConfig& cfg);
double l_mag(const AudioBuffer& est, const AudioBuffer& ref, const dsp::StftConfig& cfg);

}  // namespace msd
