// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msdemucs/loss.hpp"
#include "msdemucs/metrics.hpp"
#include "msdemucs/model.hpp"

namespace msd {

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

/// "MSDEMUCS", u32 version, u32 meta length, meta JSON, u64 array count,
/// then per array: u32 name length, name, u32 rank, u64 dims, f64 data.
/// All integers and doubles little-endian.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what);
/// Written to a temporary file first and renamed, so a crash never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Optimiser

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

class Adam {
 public:
  Adam(nn::ParameterStore& params, AdamConfig cfg);

  /// One update from the gradients currently held by the parameters.
  void step();
  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void save(Checkpoint& ck) const;
  void restore(const Checkpoint& ck);

 private:
  nn::ParameterStore* params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Parameters and batch-norm running statistics of `model`, its config in
/// the meta block, and the optimiser state when given.
Checkpoint make_checkpoint(const Model& model, const Adam* adam, std::uint64_t step);
/// Model rebuilt from a checkpoint. Throws VersionError when `expected` is
/// given and differs from the stored config, or when arrays are missing or
/// misshapen.
Model model_from_checkpoint(const Checkpoint& ck, const ModelConfig* expected = nullptr);
void restore_model(const Checkpoint& ck, Model& model);

// ---------------------------------------------------------------------------
// Experiment configuration

inline constexpr int kConfigSchemaVersion = 1;

struct OptimizerConfig {
  AdamConfig adam;
  std::size_t steps = 100;
  std::size_t batch = 4;
  double segment_s = 1.0;
};

struct SynthConfig {
  std::size_t count = 8;
  double duration_s = 1.0;
  double snr_lo_db = -5.0;
  double snr_hi_db = 15.0;
  std::string output = "corpus";
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  SynthConfig synth;
  std::string manifest;  // empty: <synth.output>/manifest.tsv
  std::string checkpoint = "run/model.ckpt";
  std::size_t checkpoint_every = 50;
  std::string log = "run/train.log";

  void validate() const;
  std::string manifest_path() const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Commands

/// Synthesises the corpus described by cfg.synth and returns the manifest path.
std::filesystem::path run_synth_data(const ExperimentConfig& cfg);

struct TrainOptions {
  /// Continue from cfg.checkpoint when it exists.
  bool resume = true;
  /// Testing hook: make the loss of this (1-based) step non-finite.
  std::size_t poison_step = 0;
};

struct TrainResult {
  std::size_t start_step = 0;
  std::size_t final_step = 0;
  std::vector<LossReport> reports;  // steps run in this call
};

/// Adam on the configured variant. Appends one JSON record per step to the
/// log and checkpoints every cfg.checkpoint_every steps and at the end.
/// A non-finite loss or gradient throws NumericError and leaves the last
/// checkpoint untouched.
TrainResult run_train(const ExperimentConfig& cfg, const TrainOptions& opt = {});

/// Writes the enhanced waveform to `out` and, with `emit_heads`, the three
/// head outputs next to it as <stem>.head1.wav ... Returns all written paths.
std::vector<std::filesystem::path> run_enhance(const std::filesystem::path& checkpoint,
                                               const std::filesystem::path& in,
                                               const std::filesystem::path& out, bool emit_heads,
                                               const ModelConfig* expected = nullptr);

struct EvalOptions {
  std::optional<std::filesystem::path> pesq_sidecar;  // JSON {"file.wav": pesq}
  bool composite = false;
  CompositeCoefficients coefficients;
};

struct EvalRow {
  std::string file;
  MetricReport report;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  std::optional<MetricReport> mean;
  std::vector<std::string> unpaired;  // "<dir>/<file>" present on one side only
};

EvalResult run_evaluate(const std::filesystem::path& ref_dir, const std::filesystem::path& deg_dir,
                        const EvalOptions& opt);
/// Tab-separated report: header, one row per file, then a "mean" row.
std::string eval_report_text(const EvalResult& r);

}  // namespace msd
