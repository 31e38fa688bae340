// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdemucs/autograd.hpp"
#include "msdemucs/dsp.hpp"
#include "msdemucs/nn.hpp"

namespace msd {

using ag::Tensor;

inline constexpr std::size_t kLstmLayers = 2;
inline constexpr std::size_t kNumMrdHeads = 3;
inline constexpr double kNormFloor = 1e-3;

struct ModelConfig {
  std::size_t depth = 5;
  std::size_t base_channels = 16;
  std::size_t kernel = 8;
  std::size_t stride = 4;
  /// 0 selects the channel count of the deepest encoder layer.
  std::size_t lstm_hidden = 0;
  int resample_factor = 4;
  bool causal = true;
  bool mre_enabled = false;
  std::vector<dsp::StftConfig> mre_resolutions = dsp::encoder_presets();
  bool mrd_enabled = false;
  std::vector<dsp::StftConfig> mrd_head_resolutions = dsp::conventional_loss_presets();
  std::uint64_t seed = 0;

  /// Throws InvalidArgument when any invariant is violated.
  void validate() const;

  /// Time-branch channels of encoder layer `layer` (1-based).
  std::size_t channels(std::size_t layer) const;
  /// Frequency-branch channels of encoder layer `layer` (1-based).
  std::size_t freq_channels(std::size_t layer) const;
  std::size_t hidden() const;
  std::size_t num_heads() const { return mrd_enabled ? kNumMrdHeads : 1; }
  /// "demucs", "demucs-mre", "demucs-mrd" or "demucs-mre-mrd".
  std::string variant() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json stft_config_to_json(const dsp::StftConfig& cfg);
dsp::StftConfig stft_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; the result is validated.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Magnitude spectrograms of `y` at each preset, each shaped
/// [1, 1, bins, frames].
std::vector<Tensor> spectrogram_frontend(const AudioBuffer& y,
                                         std::span<const dsp::StftConfig> presets);

struct ModelOutput {
  /// One [B, 1, T] waveform per head; a single entry without MRD.
  std::vector<Tensor> heads;
  /// Mean of the three heads with MRD, otherwise heads[0].
  Tensor average;
};

/// Intermediate activations of one forward pass, indexed by encoder layer.
struct ForwardTrace {
  std::vector<Tensor> time_hidden;                // h-hat per layer
  std::vector<std::vector<Tensor>> freq_hidden;   // H-hat_B per layer, per resolution
  std::vector<std::vector<Tensor>> freq_extract;  // H-hat_B^IE per layer, per resolution
  std::vector<Tensor> skips;                      // f-hat (or h-hat) per layer
};

struct FreqLayerOutput {
  Tensor hidden;   // next layer's frequency input
  Tensor extract;  // fusion feature
};

struct EnhanceResult {
  AudioBuffer average;
  std::vector<AudioBuffer> heads;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  /// Samples of future input (at 16 kHz) a causal model may read before
  /// emitting an output sample. Throws StateError for non-causal models.
  std::size_t lookahead() const;
  /// Shortest accepted input, in samples.
  std::size_t min_input_length() const;
  /// Length after the internal right zero-padding.
  std::size_t padded_length(std::size_t len) const;

  /// noisy [B, 1, T] -> per-head enhanced waveforms of the same length.
  /// Batch normalisation uses batch statistics when `training` is set and
  /// running estimates otherwise.
  ModelOutput forward(const Tensor& noisy, bool training = false,
                      ForwardTrace* trace = nullptr);
  /// Inference on one waveform without recording a graph.
  EnhanceResult enhance(const AudioBuffer& noisy);

  // Layer-level entry points. Layer indices are 0-based here.
  Tensor encoder_time(std::size_t layer, const Tensor& h) const;
  FreqLayerOutput encoder_freq(std::size_t layer, std::size_t res,
                               const Tensor& spec, bool training);
  /// Flattens H-hat_B^IE [B, C, F, N] to [B, C*F, N] and maps its frames to
  /// the `time_frames` frames of the time branch at `layer`.
  Tensor align(std::size_t layer, std::size_t res, const Tensor& extract,
               std::size_t time_frames) const;
  nn::FrameGather alignment_plan(std::size_t layer, std::size_t res,
                                 std::size_t frames, std::size_t time_frames) const;
  Tensor fuse(std::size_t layer, const Tensor& h_hat,
              std::span<const Tensor> aligned) const;
  /// Decoder layer `index` counts from the bottleneck; `head` selects one of
  /// the parallel last layers and must be 0 elsewhere.
  Tensor decoder_layer(std::size_t index, std::size_t head, const Tensor& d,
                       const Tensor& skip) const;

  /// Per-resolution frequency extent after encoder layer `layer` (0-based).
  std::size_t freq_bins(std::size_t layer, std::size_t res) const;
  /// Frames any aligned spectrogram frame may reach beyond the time position
  /// it is used at.
  std::size_t frame_lookahead() const;

 private:
  struct EncoderTime {
    Tensor w1, b1, w2, b2;
  };
  struct FreqBlock {
    Tensor w, b, gamma, beta;
    nn::BatchNormState* bn = nullptr;
  };
  struct FreqBranch {
    FreqBlock blocks[3];
    Tensor fuse_w, fuse_b;
  };
  struct Fusion {
    Tensor w1, b1, w2, b2;
  };
  struct Decoder {
    Tensor w1, b1, wt, bt;
  };

  Tensor freq_block(const FreqBlock& p, const Tensor& x, bool first, bool training) const;
  Decoder make_decoder(const std::string& prefix, std::size_t cin, std::size_t cout);

  ModelConfig cfg_;
  nn::ParameterStore store_;
  std::deque<nn::BatchNormState> bn_states_;
  std::vector<EncoderTime> enc_;
  std::vector<std::vector<FreqBranch>> freq_;  // [layer][resolution]
  std::vector<Fusion> fusion_;
  std::vector<nn::LstmLayerParams> lstm_;
  std::vector<Decoder> dec_;    // shared layers, bottleneck first
  std::vector<Decoder> heads_;  // last layer(s)
};

}  // namespace msd
