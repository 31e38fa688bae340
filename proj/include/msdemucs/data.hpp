// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdemucs/autograd.hpp"
#include "msdemucs/dsp.hpp"

namespace msd {

/// Portable random source: the same seed yields the same stream with any
/// standard library, unlike the std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  std::uint64_t next() { return gen_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform in [0, n).
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class CleanKind { kHarmonicVowel, kChirp, kFile };
enum class NoiseKind { kWhite, kPink, kBabble, kFile };

const char* clean_kind_name(CleanKind k);
const char* noise_kind_name(NoiseKind k);

struct MixSpec {
  CleanKind clean_kind = CleanKind::kHarmonicVowel;
  NoiseKind noise_kind = NoiseKind::kWhite;
  double snr_db = 5.0;
  double duration_s = 1.0;
  std::uint64_t seed = 0;
  std::string clean_path;  // kFile only
  std::string noise_path;  // kFile only

  void validate() const;
  std::size_t samples() const;
};

nlohmann::json mix_spec_to_json(const MixSpec& s);
MixSpec mix_spec_from_json(const nlohmann::json& j);

/// Parameters of the harmonic-vowel source, derived from the seed.
struct HarmonicPlan {
  double f0 = 0.0;           // Hz
  double drift_depth = 0.0;  // relative F0 excursion
  double drift_rate = 0.0;   // Hz
  double drift_phase = 0.0;
  std::vector<double> formants;    // Hz
  std::vector<double> bandwidths;  // Hz

  double f0_at(double t) const;
  double envelope(double hz) const;
};

HarmonicPlan harmonic_plan(std::uint64_t seed);

/// Peak level of every synthetic clean source.
inline constexpr double kCleanPeak = 0.5;

AudioBuffer synth_clean(const MixSpec& spec);
AudioBuffer synth_noise(const MixSpec& spec);

struct Mixture {
  AudioBuffer noisy;
  AudioBuffer noise;  // scaled
};

Mixture mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db);
/// 10 log10(P_clean / P_noise) over the whole signal.
double measured_snr_db(const AudioBuffer& clean, const AudioBuffer& noise);

// PCM16 mono 16 kHz WAV.
AudioBuffer wav_read(const std::filesystem::path& path);
void wav_write(const std::filesystem::path& path, const AudioBuffer& buf);
std::vector<std::uint8_t> wav_encode(const AudioBuffer& buf);
AudioBuffer wav_decode(const std::vector<std::uint8_t>& bytes, const std::string& what = "wav");

struct ManifestEntry {
  std::string clean;  // relative to the manifest directory
  std::string noisy;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

/// Tab-separated, one header line, paths relative to the manifest.
std::string manifest_text(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Writes clean/NNNN.wav, noisy/NNNN.wav and manifest.tsv under `dir`.
std::vector<ManifestEntry> synth_corpus(const std::vector<MixSpec>& specs,
                                        const std::filesystem::path& dir);

/// `count` specs cycling through the synthetic kinds, all seeded from `seed`.
std::vector<MixSpec> default_specs(std::size_t count, std::uint64_t seed, double duration_s,
                                   double snr_lo = -5.0, double snr_hi = 15.0);

struct Pair {
  AudioBuffer noisy;
  AudioBuffer clean;
};

std::vector<Pair> load_corpus(const std::filesystem::path& manifest);

struct Crop {
  std::size_t file = 0;
  std::size_t offset = 0;
};

struct Batch {
  ag::Tensor noisy;  // [B, 1, L]
  ag::Tensor clean;  // [B, 1, L]
  std::vector<Crop> crops;
};

/// Endless stream of aligned random crops. Each epoch visits every usable
/// file once in a seeded shuffled order; batches run across epoch
/// boundaries.
class BatchStream {
 public:
  BatchStream(const std::vector<Pair>& corpus, double segment_s, std::size_t batch,
              std::uint64_t seed);

  Batch next();
  /// Advances by n batches without building tensors.
  void skip(std::size_t n);
  std::size_t segment_samples() const { return segment_; }

 private:
  Crop next_crop();

  const std::vector<Pair>* corpus_;
  std::vector<std::size_t> usable_;
  std::size_t segment_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace msd
