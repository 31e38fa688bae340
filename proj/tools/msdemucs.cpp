// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "msdemucs/error.hpp"
#include "msdemucs/train.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNumeric = 3;

std::string one_line(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\n' || c == '\r') {
      out += ' ';
    } else {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
  }
  return out;
}

int fail(const char* code, const std::string& message, int status) {
  std::cerr << "msdemucs: error code=" << code << " message=\"" << one_line(message) << "\"\n";
  return status;
}

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("msdemucs");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MSDEMUCS_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honour it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<bool> mre, mrd;
  std::optional<double> alpha;
  std::optional<std::size_t> steps;
};

void add_flag(CLI::App* cmd, const std::string& name, std::optional<bool>& target,
              const std::string& help) {
  cmd->add_option_function<std::string>(
         name,
         [&target, name](const std::string& v) {
           if (v.empty() || v == "true" || v == "1") {
             target = true;
           } else if (v == "false" || v == "0") {
             target = false;
           } else {
             throw CLI::ValidationError(name, "expected true or false");
           }
         },
         help)
      ->expected(0, 1)
      ->default_str("true");
}

void add_overrides(CLI::App* cmd, Overrides& o, bool training) {
  cmd->add_option("--seed", o.seed, "Override the config seed (data, model and batches)");
  add_flag(cmd, "--mre", o.mre, "Multi-resolution encoder (--mre=false to disable)");
  add_flag(cmd, "--mrd", o.mrd, "Multi-resolution decoder heads (--mrd=false to disable)");
  if (training) {
    cmd->add_option("--alpha", o.alpha, "Weight of the waveform term in the loss");
    cmd->add_option("--steps", o.steps, "Number of optimiser steps");
  }
}

msd::ExperimentConfig resolve(const std::string& path, const Overrides& o) {
  auto cfg = msd::load_experiment_config(path);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.model.seed = *o.seed;
  }
  if (o.mre) cfg.model.mre_enabled = *o.mre;
  if (o.mrd) {
    cfg.model.mrd_enabled = *o.mrd;
    if (!*o.mrd) cfg.loss.head_assignment.clear();
  }
  if (o.alpha) cfg.loss.alpha = *o.alpha;
  if (o.steps) cfg.optimizer.steps = *o.steps;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-resolution DEMUCS speech enhancement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "msdemucs 0.1.0");

  std::string config;
  Overrides ov;

  auto* synth = app.add_subcommand("synth-data", "Synthesise a paired noisy/clean corpus");
  synth->add_option("--config", config, "Experiment config (JSON)")->required();
  synth->add_option("--seed", ov.seed, "Override the config seed");

  bool fresh = false;
  auto* train = app.add_subcommand("train", "Train a model on the configured corpus");
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  add_overrides(train, ov, true);
  train->add_flag("--fresh", fresh, "Ignore an existing checkpoint instead of resuming");

  std::string checkpoint, in_wav, out_wav;
  bool emit_heads = false;
  auto* enhance = app.add_subcommand("enhance", "Enhance one WAV file");
  enhance->add_option("checkpoint", checkpoint, "Model checkpoint")->required();
  enhance->add_option("input", in_wav, "Noisy 16 kHz mono PCM16 WAV")->required();
  enhance->add_option("output", out_wav, "Enhanced WAV to write")->required();
  enhance->add_flag("--emit-heads", emit_heads, "Also write the three MRD head outputs");
  enhance->add_option("--config", config, "Check the checkpoint against this config");
  add_overrides(enhance, ov, false);

  std::string ref_dir, deg_dir, pesq_sidecar, coefficients, report;
  bool composite = false;
  auto* evaluate = app.add_subcommand("evaluate", "Score degraded files against references");
  evaluate->add_option("ref_dir", ref_dir, "Directory of reference WAVs")->required();
  evaluate->add_option("deg_dir", deg_dir, "Directory of degraded WAVs")->required();
  evaluate->add_option("--pesq-sidecar", pesq_sidecar, "JSON map from file name to PESQ");
  evaluate->add_flag("--composite", composite, "Report Csig, Cbak and Covl (needs PESQ)");
  evaluate->add_option("--coefficients", coefficients, "JSON composite regression coefficients");
  evaluate->add_option("--report", report, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kExitUsage);
  }

  setup_logging();
  try {
    if (synth->parsed()) {
      const auto cfg = resolve(config, ov);
      std::cout << msd::run_synth_data(cfg).string() << "\n";
    } else if (train->parsed()) {
      const auto cfg = resolve(config, ov);
      msd::TrainOptions opt;
      opt.resume = !fresh;
      const auto res = msd::run_train(cfg, opt);
      if (!res.reports.empty()) {
        spdlog::info("step {} total {:.6f}", res.final_step, res.reports.back().total);
      }
      spdlog::info("checkpoint {}", cfg.checkpoint);
    } else if (enhance->parsed()) {
      std::optional<msd::ModelConfig> expected;
      if (!config.empty()) expected = resolve(config, ov).model;
      const auto written = msd::run_enhance(checkpoint, in_wav, out_wav, emit_heads,
                                            expected ? &*expected : nullptr);
      for (const auto& p : written) std::cout << p.string() << "\n";
    } else if (evaluate->parsed()) {
      msd::EvalOptions opt;
      if (!pesq_sidecar.empty()) opt.pesq_sidecar = pesq_sidecar;
      opt.composite = composite;
      if (!coefficients.empty()) {
        std::ifstream in(coefficients);
        if (!in) throw msd::IoError("cannot open coefficients " + coefficients);
        try {
          opt.coefficients = msd::composite_coefficients_from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
          throw msd::InvalidArgument(coefficients + ": " + e.what());
        }
      }
      const auto res = msd::run_evaluate(ref_dir, deg_dir, opt);
      const auto text = msd::eval_report_text(res);
      if (report.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(report);
        if (!out || !(out << text)) throw msd::IoError("cannot write report " + report);
      }
      if (!res.unpaired.empty()) {
        std::string list;
        for (const auto& u : res.unpaired) list += (list.empty() ? "" : ", ") + u;
        return fail(msd::error_code_name(msd::ErrorCode::kUnpaired),
                    std::to_string(res.unpaired.size()) + " unpaired file(s) skipped: " + list,
                    kExitRuntime);
      }
    }
  } catch (const msd::Error& e) {
    const int status = e.code() == msd::ErrorCode::kNumeric          ? kExitNumeric
                       : e.code() == msd::ErrorCode::kInvalidArgument ? kExitUsage
                                                                      : kExitRuntime;
    return fail(msd::error_code_name(e.code()), e.what(), status);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kExitRuntime);
  }
  return 0;
}
