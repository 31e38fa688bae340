// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/loss.hpp"

#include <algorithm>
#include <cmath>

#include "msdemucs/error.hpp"
#include "msdemucs/model.hpp"

namespace msd {

using ag::TensorImpl;

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("loss alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (resolutions.empty()) throw InvalidArgument("loss needs at least one resolution");
  for (const auto& r : resolutions) r.validate();
  for (std::size_t a : head_assignment) {
    if (a >= resolutions.size()) {
      throw InvalidArgument("head assignment refers to resolution " + std::to_string(a) +
                            " of " + std::to_string(resolutions.size()));
    }
  }
}

std::vector<std::size_t> LossConfig::assignment(std::size_t heads) const {
  if (heads != resolutions.size()) {
    throw InvalidArgument(std::to_string(heads) + " heads cannot be paired with " +
                          std::to_string(resolutions.size()) + " resolutions");
  }
  std::vector<std::size_t> a = head_assignment;
  if (a.empty()) {
    for (std::size_t i = 0; i < heads; ++i) a.push_back(i);
  }
  if (a.size() != heads) {
    throw InvalidArgument("head assignment lists " + std::to_string(a.size()) +
                          " heads, model has " + std::to_string(heads));
  }
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != i) throw InvalidArgument("head assignment is not a bijection");
  }
  return a;
}

nlohmann::json loss_config_to_json(const LossConfig& cfg) {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : cfg.resolutions) res.push_back(stft_config_to_json(r));
  return {{"alpha", cfg.alpha},
          {"resolutions", res},
          {"head_assignment", cfg.head_assignment},
          {"mae_target", cfg.mae_target == MaeTarget::kAverage ? "average" : "per_head"}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig cfg;
  if (!j.is_object()) throw InvalidArgument("loss config must be a JSON object");
  try {
    cfg.alpha = j.value("alpha", cfg.alpha);
    if (j.contains("resolutions")) {
      const auto& r = j.at("resolutions");
      if (r.is_string()) {
        const auto name = r.get<std::string>();
        if (name == "conventional") cfg.resolutions = dsp::conventional_loss_presets();
        else if (name == "stationary") cfg.resolutions = dsp::stationary_loss_presets();
        else if (name == "single_32ms") cfg.resolutions = dsp::single_32ms_loss_presets();
        else throw InvalidArgument("unknown loss preset \"" + name + "\"");
      } else {
        cfg.resolutions.clear();
        for (const auto& e : r) cfg.resolutions.push_back(stft_config_from_json(e));
      }
    }
    cfg.head_assignment =
        j.value("head_assignment", std::vector<std::size_t>{});
    const auto target = j.value("mae_target", std::string("average"));
    if (target == "average") cfg.mae_target = MaeTarget::kAverage;
    else if (target == "per_head") cfg.mae_target = MaeTarget::kPerHead;
    else throw InvalidArgument("unknown mae_target \"" + target + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid loss config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json LossReport::to_json(std::size_t step) const {
  return {{"step", step}, {"mae", mae}, {"sc", sc}, {"mag", mag}, {"total", total}};
}

Tensor stft_magnitude(const Tensor& x, const dsp::StftConfig& cfg) {
  if (!x.defined() || x.rank() == 0) throw ShapeError("stft_magnitude: scalar input");
  const std::size_t T = x.shape().back();
  if (T == 0) throw InvalidArgument("stft_magnitude: empty signal");
  const std::size_t rows = x.numel() / T;
  const std::size_t bins = cfg.bins();
  std::size_t frames = dsp::frame_count(T, cfg);
  if (frames == 0) {
    throw InvalidArgument("signal of " + std::to_string(T) +
                          " samples is shorter than one frame of " + cfg.describe());
  }
  std::vector<dsp::Complex> spec;
  spec.reserve(rows * frames * bins);
  for (std::size_t r = 0; r < rows; ++r) {
    auto s = dsp::stft(x.data().subspan(r * T, T), cfg, &frames);
    spec.insert(spec.end(), s.begin(), s.end());
  }
  std::vector<double> mag(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  auto xi = x.impl();
  const std::size_t cells = frames * bins;
  return ag::make_result(
      "stft_magnitude", {rows, frames, bins}, mag, {x},
      [xi, spec = std::move(spec), mag, cfg, T, rows, cells](const TensorImpl& o) {
        if (!xi->requires_grad) return;
        auto& g = ag::grad_buffer(*xi);
        std::vector<dsp::Complex> gc(cells);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cells; ++c) {
            const std::size_t k = r * cells + c;
            // d|X|/dRe = Re/|X|, d|X|/dIm = Im/|X|; zero at |X| = 0.
            gc[c] = mag[k] > 0.0 ? o.grad[k] * spec[k] / mag[k] : dsp::Complex{};
          }
          auto gx = dsp::stft_adjoint(gc, T, cfg);
          for (std::size_t t = 0; t < T; ++t) g[r * T + t] += gx[t];
        }
      });
}

namespace {

void require_same_length(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": length mismatch " + ag::shape_str(a.shape()) +
                          " vs " + ag::shape_str(b.shape()));
  }
}

Tensor constant_magnitude(const Tensor& ref, const dsp::StftConfig& cfg) {
  ag::NoGradGuard guard;
  return stft_magnitude(ref.detach(), cfg);
}

Tensor as_tensor(const AudioBuffer& b) { return Tensor::from({b.size()}, b.samples); }

}  // namespace

Tensor l_mae(const Tensor& est, const Tensor& ref) {
  require_same_length("l_mae", est, ref);
  return ag::mean(ag::abs(ag::sub(est, ref.detach())));
}

Tensor l_sc(const Tensor& est, const Tensor& ref, const dsp::StftConfig& cfg) {
  require_same_length("l_sc", est, ref);
  auto m_ref = constant_magnitude(ref, cfg);
  auto m_est = stft_magnitude(est, cfg);
  double ref_energy = 0.0;
  for (double v : m_ref.values()) ref_energy += v * v;
  const double denom = std::max(std::sqrt(ref_energy), kLossEps);
  return ag::scale(ag::sqrt(ag::sum(ag::square(ag::sub(m_est, m_ref)))), 1.0 / denom);
}

Tensor l_mag(const Tensor& est, const Tensor& ref, const dsp::StftConfig& cfg) {
  require_same_length("l_mag", est, ref);
  auto m_ref = constant_magnitude(ref, cfg);
  auto m_est = stft_magnitude(est, cfg);
  return ag::mean(ag::abs(ag::sub(ag::log_floor(m_est, kMagFloor),
                                  ag::log_floor(m_ref, kMagFloor))));
}

LossResult l_demucs(const std::vector<Tensor>& heads, const Tensor& average,
                    const Tensor& clean, const LossConfig& cfg) {
  cfg.validate();
  if (heads.empty()) throw InvalidArgument("l_demucs: no outputs");
  if (heads.size() != 1 && heads.size() != kNumMrdHeads) {
    throw InvalidArgument("l_demucs: expected 1 or 3 outputs, got " +
                          std::to_string(heads.size()));
  }
  LossResult res;
  auto& rep = res.report;
  const std::size_t R = cfg.resolutions.size();
  rep.sc.assign(R, 0.0);
  rep.mag.assign(R, 0.0);

  Tensor mae;
  if (heads.size() == 1 || cfg.mae_target == MaeTarget::kAverage) {
    mae = l_mae(heads.size() == 1 ? heads[0] : average, clean);
  } else {
    mae = ag::scale(ag::add(ag::add(l_mae(heads[0], clean), l_mae(heads[1], clean)),
                            l_mae(heads[2], clean)),
                    1.0 / 3.0);
  }
  rep.mae = mae.item();

  Tensor spectral;
  auto accumulate = [&](const Tensor& out, std::size_t r) {
    auto sc = l_sc(out, clean, cfg.resolutions[r]);
    auto mag = l_mag(out, clean, cfg.resolutions[r]);
    rep.sc[r] = sc.item();
    rep.mag[r] = mag.item();
    auto term = ag::add(sc, mag);
    spectral = spectral.defined() ? ag::add(spectral, term) : term;
  };
  if (heads.size() == 1) {
    for (std::size_t r = 0; r < R; ++r) accumulate(heads[0], r);
  } else {
    const auto assign = cfg.assignment(heads.size());
    for (std::size_t h = 0; h < heads.size(); ++h) accumulate(heads[h], assign[h]);
  }
  res.total = ag::add(ag::scale(mae, cfg.alpha), ag::scale(spectral, 1.0 - cfg.alpha));
  rep.total = res.total.item();
  return res;
}

double l_mae(const AudioBuffer& est, const AudioBuffer& ref) {
  ag::NoGradGuard guard;
  return l_mae(as_tensor(est), as_tensor(ref)).item();
}

double l_sc(const AudioBuffer& est, const AudioBuffer& ref, const dsp::StftConfig& cfg) {
  ag::NoGradGuard guard;
  return l_sc(as_tensor(est), as_tensor(ref), cfg).item();
}

double l_mag(const AudioBuffer& est, const AudioBuffer& ref, const dsp::StftConfig& cfg) {
  ag::NoGradGuard guard;
  return l_mag(as_tensor(est), as_tensor(ref), cfg).item();
}

}  // namespace msd
