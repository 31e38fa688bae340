// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/model.hpp"

#include <algorithm>
#include <cmath>

#include "msdemucs/error.hpp"

namespace msd {

using ag::Shape;
using nn::Conv1dOptions;
using nn::Conv2dOptions;

namespace {

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

std::string layer_name(const char* kind, std::size_t index) {
  return std::string(kind) + "." + std::to_string(index);
}

}  // namespace

// --- configuration -----------------------------------------------------------

void ModelConfig::validate() const {
  if (depth != 5) {
    throw InvalidArgument("model depth must be 5, got " + std::to_string(depth));
  }
  if (base_channels == 0 || kernel == 0 || stride == 0) {
    throw InvalidArgument("model base_channels, kernel and stride must be positive");
  }
  if (kernel < stride) {
    throw InvalidArgument("model kernel " + std::to_string(kernel) +
                          " is shorter than stride " + std::to_string(stride));
  }
  if (resample_factor != 1 && resample_factor != 2 && resample_factor != 4) {
    throw InvalidArgument("resample_factor must be 1, 2 or 4, got " +
                          std::to_string(resample_factor));
  }
  if (ipow(stride, depth) % static_cast<std::size_t>(resample_factor) != 0) {
    throw InvalidArgument("total stride is not a multiple of resample_factor");
  }
  if (mre_enabled && mre_resolutions.size() != 3) {
    throw InvalidArgument("MRE needs exactly 3 resolutions, got " +
                          std::to_string(mre_resolutions.size()));
  }
  if (mrd_enabled && mrd_head_resolutions.size() != kNumMrdHeads) {
    throw InvalidArgument("MRD needs exactly 3 head resolutions, got " +
                          std::to_string(mrd_head_resolutions.size()));
  }
  if (lstm_hidden != 0 && lstm_hidden != channels(depth)) {
    throw InvalidArgument("lstm_hidden must be 0 or the deepest encoder width " +
                          std::to_string(channels(depth)));
  }
  for (const auto& r : mre_resolutions) r.validate();
  for (const auto& r : mrd_head_resolutions) r.validate();
}

std::size_t ModelConfig::channels(std::size_t layer) const {
  return base_channels * ipow(2, layer - 1);
}

std::size_t ModelConfig::freq_channels(std::size_t layer) const {
  return std::max<std::size_t>(1, base_channels / 2) * ipow(2, layer - 1);
}

std::size_t ModelConfig::hidden() const {
  return lstm_hidden == 0 ? channels(depth) : lstm_hidden;
}

std::string ModelConfig::variant() const {
  std::string v = "demucs";
  if (mre_enabled) v += "-mre";
  if (mrd_enabled) v += "-mrd";
  return v;
}

nlohmann::json stft_config_to_json(const dsp::StftConfig& cfg) {
  return {{"fft_ms", cfg.fft_ms},
          {"hop_ms", cfg.hop_ms},
          {"win_ms", cfg.win_ms},
          {"center_pad", cfg.center_pad},
          {"periodic_window", cfg.periodic_window}};
}

dsp::StftConfig stft_config_from_json(const nlohmann::json& j) {
  dsp::StftConfig cfg;
  try {
    cfg.fft_ms = j.at("fft_ms").get<double>();
    cfg.hop_ms = j.at("hop_ms").get<double>();
    cfg.win_ms = j.at("win_ms").get<double>();
    cfg.center_pad = j.value("center_pad", true);
    cfg.periodic_window = j.value("periodic_window", false);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid STFT config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json mre = nlohmann::json::array(), mrd = nlohmann::json::array();
  for (const auto& r : cfg.mre_resolutions) mre.push_back(stft_config_to_json(r));
  for (const auto& r : cfg.mrd_head_resolutions) mrd.push_back(stft_config_to_json(r));
  return {{"depth", cfg.depth},
          {"base_channels", cfg.base_channels},
          {"kernel", cfg.kernel},
          {"stride", cfg.stride},
          {"lstm_hidden", cfg.lstm_hidden},
          {"resample_factor", cfg.resample_factor},
          {"causal", cfg.causal},
          {"mre_enabled", cfg.mre_enabled},
          {"mre_resolutions", mre},
          {"mrd_enabled", cfg.mrd_enabled},
          {"mrd_head_resolutions", mrd},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  if (!j.is_object()) throw InvalidArgument("model config must be a JSON object");
  try {
    cfg.depth = j.value("depth", cfg.depth);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.kernel = j.value("kernel", cfg.kernel);
    cfg.stride = j.value("stride", cfg.stride);
    cfg.lstm_hidden = j.value("lstm_hidden", cfg.lstm_hidden);
    cfg.resample_factor = j.value("resample_factor", cfg.resample_factor);
    cfg.causal = j.value("causal", cfg.causal);
    cfg.mre_enabled = j.value("mre_enabled", cfg.mre_enabled);
    cfg.mrd_enabled = j.value("mrd_enabled", cfg.mrd_enabled);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("mre_resolutions")) {
      cfg.mre_resolutions.clear();
      for (const auto& r : j.at("mre_resolutions")) {
        cfg.mre_resolutions.push_back(stft_config_from_json(r));
      }
    }
    if (j.contains("mrd_head_resolutions")) {
      cfg.mrd_head_resolutions.clear();
      for (const auto& r : j.at("mrd_head_resolutions")) {
        cfg.mrd_head_resolutions.push_back(stft_config_from_json(r));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// --- front-end -----------------------------------------------------------------

namespace {

// Magnitudes of one signal laid out [bins, frames].
std::vector<double> magnitude_bins_by_frames(std::span<const double> x,
                                             const dsp::StftConfig& cfg,
                                             std::size_t* frames) {
  auto spec = dsp::stft(x, cfg, frames);
  const std::size_t bins = cfg.bins();
  std::vector<double> out(spec.size());
  for (std::size_t t = 0; t < *frames; ++t)
    for (std::size_t k = 0; k < bins; ++k) out[k * *frames + t] = std::abs(spec[t * bins + k]);
  return out;
}

// Spectrograms of every batch row of x [B, T], stacked to [B, 1, bins, frames].
Tensor batch_spectrogram(const std::vector<std::vector<double>>& rows,
                         const dsp::StftConfig& cfg) {
  std::vector<double> data;
  std::size_t frames = 0;
  for (const auto& row : rows) {
    auto m = magnitude_bins_by_frames(row, cfg, &frames);
    data.insert(data.end(), m.begin(), m.end());
  }
  return Tensor::from({rows.size(), 1, cfg.bins(), frames}, std::move(data));
}

}  // namespace

std::vector<Tensor> spectrogram_frontend(const AudioBuffer& y,
                                         std::span<const dsp::StftConfig> presets) {
  if (y.samples.empty()) throw InvalidArgument("spectrogram_frontend: empty input");
  std::vector<Tensor> out;
  for (const auto& cfg : presets) out.push_back(batch_spectrogram({y.samples}, cfg));
  return out;
}

// --- construction ------------------------------------------------------------

Model::Decoder Model::make_decoder(const std::string& prefix, std::size_t cin,
                                   std::size_t cout) {
  const std::size_t K = cfg_.kernel;
  const std::uint64_t s = cfg_.seed;
  Decoder d;
  d.w1 = store_.uniform(prefix + ".glu_conv.weight", {2 * cin, cin, 1}, cin, s);
  d.b1 = store_.uniform(prefix + ".glu_conv.bias", {2 * cin}, cin, s);
  d.wt = store_.uniform(prefix + ".convt.weight", {cin, cout, K}, cin * K, s);
  d.bt = store_.uniform(prefix + ".convt.bias", {cout}, cin * K, s);
  return d;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t D = cfg_.depth, K = cfg_.kernel;
  const std::uint64_t s = cfg_.seed;

  for (std::size_t l = 1; l <= D; ++l) {
    const std::string p = layer_name("encoder", l - 1);
    const std::size_t cin = l == 1 ? 1 : cfg_.channels(l - 1), c = cfg_.channels(l);
    EncoderTime e;
    e.w1 = store_.uniform(p + ".conv.weight", {c, cin, K}, cin * K, s);
    e.b1 = store_.uniform(p + ".conv.bias", {c}, cin * K, s);
    e.w2 = store_.uniform(p + ".glu_conv.weight", {2 * c, c, 1}, c, s);
    e.b2 = store_.uniform(p + ".glu_conv.bias", {2 * c}, c, s);
    enc_.push_back(e);
  }

  if (cfg_.mre_enabled) {
    for (std::size_t l = 1; l <= D; ++l) {
      const std::string p = layer_name("encoder", l - 1);
      const std::size_t c = cfg_.channels(l), fc = cfg_.freq_channels(l);
      const std::size_t fin = l == 1 ? 1 : cfg_.freq_channels(l - 1);
      std::vector<FreqBranch> branches;
      for (std::size_t r = 0; r < cfg_.mre_resolutions.size(); ++r) {
        const std::string fp = p + ".freq" + std::to_string(r);
        FreqBranch br;
        for (std::size_t k = 0; k < 3; ++k) {
          const std::string bp = fp + ".block" + std::to_string(k);
          const std::size_t ci = k == 0 ? fin : fc;
          FreqBlock& blk = br.blocks[k];
          blk.w = store_.uniform(bp + ".conv.weight", {fc, ci, 3, 3}, ci * 9, s);
          blk.b = store_.uniform(bp + ".conv.bias", {fc}, ci * 9, s);
          blk.gamma = store_.constant(bp + ".bn.gamma", {fc}, 1.0);
          blk.beta = store_.constant(bp + ".bn.beta", {fc}, 0.0);
          blk.bn = &bn_states_.emplace_back(fc);
          store_.add_buffer(bp + ".bn", *blk.bn);
        }
        const std::size_t fin_lin = c + fc * freq_bins(l - 1, r);
        br.fuse_w = store_.uniform(fp + ".fuse.weight", {c, fin_lin}, fin_lin, s);
        br.fuse_b = store_.uniform(fp + ".fuse.bias", {c}, fin_lin, s);
        branches.push_back(br);
      }
      freq_.push_back(std::move(branches));
      Fusion f;
      f.w1 = store_.uniform(p + ".fusion.lin1.weight", {c, c}, c, s);
      f.b1 = store_.uniform(p + ".fusion.lin1.bias", {c}, c, s);
      f.w2 = store_.uniform(p + ".fusion.lin2.weight", {c, c}, c, s);
      f.b2 = store_.uniform(p + ".fusion.lin2.bias", {c}, c, s);
      fusion_.push_back(f);
    }
  }

  const std::size_t H = cfg_.hidden();
  for (std::size_t k = 0; k < kLstmLayers; ++k) {
    const std::string p = layer_name("lstm", k);
    const std::size_t in = k == 0 ? cfg_.channels(D) : H;
    nn::LstmLayerParams lp;
    lp.w_ih = store_.uniform(p + ".w_ih", {4 * H, in}, H, s);
    lp.w_hh = store_.uniform(p + ".w_hh", {4 * H, H}, H, s);
    lp.b_ih = store_.uniform(p + ".b_ih", {4 * H}, H, s);
    lp.b_hh = store_.uniform(p + ".b_hh", {4 * H}, H, s);
    lstm_.push_back(lp);
  }

  for (std::size_t i = 0; i + 1 < D; ++i) {
    const std::size_t l = D - i;  // encoder layer mirrored by this decoder
    dec_.push_back(make_decoder(layer_name("decoder", i), cfg_.channels(l),
                                cfg_.channels(l - 1)));
  }
  const std::string last = layer_name("decoder", D - 1);
  heads_.push_back(make_decoder(last, cfg_.channels(1), 1));
  for (std::size_t h = 1; h < cfg_.num_heads(); ++h) {
    heads_.push_back(make_decoder(last + ".head" + std::to_string(h), cfg_.channels(1), 1));
  }
}

// --- geometry ------------------------------------------------------------------

std::size_t Model::freq_bins(std::size_t layer, std::size_t res) const {
  std::size_t f = cfg_.mre_resolutions.at(res).bins();
  for (std::size_t l = 0; l <= layer; ++l) f = (f - 1) / 2 + 1;
  return f;
}

std::size_t Model::frame_lookahead() const {
  std::size_t a = 0;
  for (const auto& r : cfg_.mre_resolutions) {
    const std::size_t pad = r.center_pad ? r.pad_len() : 0;
    a = std::max(a, r.win_len() - pad - 1);
  }
  return a;
}

std::size_t Model::lookahead() const {
  if (!cfg_.causal) throw StateError("lookahead is only defined for causal models");
  const std::size_t z = cfg_.resample_factor > 1 ? dsp::resample_lookahead() : 0;
  std::size_t encoder_side = z;
  if (cfg_.mre_enabled) encoder_side = std::max(encoder_side, frame_lookahead());
  return z + encoder_side;
}

std::size_t Model::min_input_length() const {
  return ipow(cfg_.stride, cfg_.depth) / static_cast<std::size_t>(cfg_.resample_factor);
}

std::size_t Model::padded_length(std::size_t len) const {
  const std::size_t q = min_input_length();
  return (len + q - 1) / q * q;
}

// --- layers --------------------------------------------------------------------

Tensor Model::encoder_time(std::size_t layer, const Tensor& h) const {
  const auto& p = enc_.at(layer);
  const auto opts = cfg_.causal ? Conv1dOptions::causal(cfg_.kernel, cfg_.stride)
                                : Conv1dOptions::centred(cfg_.kernel, cfg_.stride);
  auto a = ag::relu(nn::conv1d(h, p.w1, p.b1, opts));
  return nn::glu(nn::conv1d(a, p.w2, p.b2, Conv1dOptions{}), 1);
}

Tensor Model::freq_block(const FreqBlock& p, const Tensor& x, bool first,
                         bool training) const {
  Conv2dOptions o;
  o.stride_h = first ? 2 : 1;
  o.stride_w = 1;
  o.pad_top = o.pad_bottom = 1;
  o.pad_left = cfg_.causal ? 2 : 1;
  o.pad_right = cfg_.causal ? 0 : 1;
  auto y = nn::conv2d(x, p.w, p.b, o);
  return ag::elu(nn::batchnorm2d(y, p.gamma, p.beta, *p.bn, training));
}

FreqLayerOutput Model::encoder_freq(std::size_t layer, std::size_t res,
                                    const Tensor& spec, bool training) {
  if (!cfg_.mre_enabled) throw StateError("encoder_freq: MRE is disabled");
  const auto& br = freq_.at(layer).at(res);
  FreqLayerOutput out;
  out.hidden = freq_block(br.blocks[0], spec, true, training);
  auto ie = freq_block(br.blocks[1], out.hidden, false, training);
  out.extract = freq_block(br.blocks[2], ie, false, training);
  return out;
}

nn::FrameGather Model::alignment_plan(std::size_t layer, std::size_t res,
                                      std::size_t frames,
                                      std::size_t time_frames) const {
  const auto& r = cfg_.mre_resolutions.at(res);
  const double hop = static_cast<double>(r.hop_len());
  const long long reach =
      static_cast<long long>(r.win_len() - (r.center_pad ? r.pad_len() : 0) - 1);
  const long long ahead = static_cast<long long>(frame_lookahead());
  // Input samples (at 16 kHz) per frame of the time branch at this layer.
  const double step = static_cast<double>(ipow(cfg_.stride, layer + 1)) /
                      static_cast<double>(cfg_.resample_factor);
  const long long last = static_cast<long long>(frames) - 1;
  nn::FrameGather plan;
  for (std::size_t t = 0; t < time_frames; ++t) {
    const double p = static_cast<double>(t) * step;
    if (cfg_.causal) {
      // Most recent frame whose last sample lies within p + lookahead.
      long long j = static_cast<long long>(
          std::floor((p + static_cast<double>(ahead - reach)) / hop));
      j = std::clamp<long long>(j, 0, last);
      plan.i0.push_back(static_cast<std::size_t>(j));
      plan.i1.push_back(static_cast<std::size_t>(j));
      plan.w0.push_back(1.0);
      plan.w1.push_back(0.0);
    } else {
      const double pos = std::min(p / hop, static_cast<double>(last));
      const long long j = static_cast<long long>(std::floor(pos));
      const double frac = pos - static_cast<double>(j);
      plan.i0.push_back(static_cast<std::size_t>(j));
      plan.i1.push_back(static_cast<std::size_t>(std::min(j + 1, last)));
      plan.w0.push_back(1.0 - frac);
      plan.w1.push_back(frac);
    }
  }
  return plan;
}

Tensor Model::align(std::size_t layer, std::size_t res, const Tensor& extract,
                    std::size_t time_frames) const {
  if (extract.rank() != 4 || extract.dim(2) != freq_bins(layer, res)) {
    throw ShapeError("align: resolution " + cfg_.mre_resolutions.at(res).describe() +
                     " at layer " + std::to_string(layer) + " has shape " +
                     ag::shape_str(extract.shape()) + ", expected " +
                     std::to_string(freq_bins(layer, res)) + " bins");
  }
  const std::size_t B = extract.dim(0), CF = extract.dim(1) * extract.dim(2),
                    N = extract.dim(3);
  auto flat = ag::reshape(extract, {B, CF, N});
  return nn::gather_frames(flat, alignment_plan(layer, res, N, time_frames));
}

Tensor Model::fuse(std::size_t layer, const Tensor& h_hat,
                   std::span<const Tensor> aligned) const {
  const auto& branches = freq_.at(layer);
  if (aligned.size() != branches.size()) {
    throw ShapeError("fuse: expected " + std::to_string(branches.size()) +
                     " aligned features, got " + std::to_string(aligned.size()));
  }
  Tensor acc = h_hat;
  for (std::size_t r = 0; r < branches.size(); ++r) {
    if (aligned[r].rank() != 3 || aligned[r].dim(2) != h_hat.dim(2)) {
      throw ShapeError("fuse: resolution " + cfg_.mre_resolutions[r].describe() +
                       " is not aligned to " + std::to_string(h_hat.dim(2)) + " frames");
    }
    const Tensor parts[2] = {h_hat, aligned[r]};
    acc = ag::add(acc, nn::linear(nn::concat(parts, 1), branches[r].fuse_w,
                                  branches[r].fuse_b));
  }
  const auto& f = fusion_.at(layer);
  return nn::linear(ag::relu(nn::linear(acc, f.w1, f.b1)), f.w2, f.b2);
}

Tensor Model::decoder_layer(std::size_t index, std::size_t head, const Tensor& d,
                            const Tensor& skip) const {
  const bool is_last = index + 1 == cfg_.depth;
  if (!is_last && head != 0) throw InvalidArgument("decoder_layer: heads exist only on the last layer");
  const Decoder& p = is_last ? heads_.at(head) : dec_.at(index);
  if (d.shape() != skip.shape()) {
    throw ShapeError("decoder_layer " + std::to_string(index) + ": skip " +
                     ag::shape_str(skip.shape()) + " does not match " +
                     ag::shape_str(d.shape()));
  }
  auto x = nn::glu(nn::conv1d(ag::add(d, skip), p.w1, p.b1, Conv1dOptions{}), 1);
  auto y = nn::conv_transpose1d(x, p.wt, p.bt, cfg_.stride);
  const std::size_t offset = cfg_.causal ? 0 : (cfg_.kernel - 1) / 2;
  y = nn::slice_last(y, offset, d.dim(2) * cfg_.stride);
  return is_last ? y : ag::relu(y);
}

// --- forward -------------------------------------------------------------------

ModelOutput Model::forward(const Tensor& noisy, bool training, ForwardTrace* trace) {
  if (noisy.rank() != 3 || noisy.dim(1) != 1) {
    throw ShapeError("model input must be [batch, 1, time], got " +
                     ag::shape_str(noisy.shape()));
  }
  const std::size_t B = noisy.dim(0), T = noisy.dim(2);
  if (T < min_input_length()) {
    throw InvalidArgument("input has " + std::to_string(T) +
                          " samples; the model needs at least " +
                          std::to_string(min_input_length()));
  }
  const std::size_t P = padded_length(T);

  // Normalisation scale per sample. It is treated as a constant of the graph.
  std::vector<std::vector<double>> rows(B, std::vector<double>(P, 0.0));
  std::vector<double> scale(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    auto y = noisy.data().subspan(b * T, T);
    if (cfg_.causal) {
      double energy = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        energy += y[t] * y[t];
        scale[b * T + t] = std::sqrt(energy / static_cast<double>(t + 1)) + kNormFloor;
      }
    } else {
      double mean = 0.0, var = 0.0;
      for (double v : y) mean += v;
      mean /= static_cast<double>(T);
      for (double v : y) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(T)) + kNormFloor;
      std::fill_n(scale.begin() + b * T, T, sd);
    }
    for (std::size_t t = 0; t < T; ++t) rows[b][t] = y[t] / scale[b * T + t];
  }
  std::vector<double> flat;
  flat.reserve(B * P);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  Tensor h = Tensor::from({B, 1, P}, std::move(flat));

  std::vector<Tensor> specs;
  if (cfg_.mre_enabled) {
    for (const auto& r : cfg_.mre_resolutions) specs.push_back(batch_spectrogram(rows, r));
  }

  if (cfg_.resample_factor > 1) h = nn::upsample_last(h, cfg_.resample_factor);

  std::vector<Tensor> skips;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    Tensor h_hat = encoder_time(l, h);
    Tensor f = h_hat;
    if (cfg_.mre_enabled) {
      std::vector<Tensor> aligned, hidden, extract;
      for (std::size_t r = 0; r < specs.size(); ++r) {
        auto fo = encoder_freq(l, r, specs[r], training);
        aligned.push_back(align(l, r, fo.extract, h_hat.dim(2)));
        specs[r] = fo.hidden;
        if (trace) {
          hidden.push_back(fo.hidden);
          extract.push_back(fo.extract);
        }
      }
      f = fuse(l, h_hat, aligned);
      if (trace) {
        trace->freq_hidden.push_back(std::move(hidden));
        trace->freq_extract.push_back(std::move(extract));
      }
    }
    if (trace) {
      trace->time_hidden.push_back(h_hat);
      trace->skips.push_back(f);
    }
    skips.push_back(f);
    h = f;
  }

  Tensor d = nn::tbc_to_bct(nn::lstm(nn::bct_to_tbc(h), lstm_));
  for (std::size_t i = 0; i + 1 < cfg_.depth; ++i) {
    d = decoder_layer(i, 0, d, skips[cfg_.depth - 1 - i]);
  }

  const Tensor scale_t = Tensor::from({B, 1, T}, std::move(scale));
  ModelOutput out;
  for (std::size_t head = 0; head < cfg_.num_heads(); ++head) {
    Tensor y = decoder_layer(cfg_.depth - 1, head, d, skips[0]);
    if (cfg_.resample_factor > 1) y = nn::downsample_last(y, cfg_.resample_factor);
    y = nn::slice_last(y, 0, T);
    out.heads.push_back(ag::mul(y, scale_t));
  }
  out.average = out.heads.size() == kNumMrdHeads
                    ? ag::mean_of_three(out.heads[0], out.heads[1], out.heads[2])
                    : out.heads[0];
  return out;
}

EnhanceResult Model::enhance(const AudioBuffer& noisy) {
  validate_pipeline_audio(noisy, "enhance input");
  ag::NoGradGuard guard;
  auto out = forward(Tensor::from({1, 1, noisy.size()}, noisy.samples), false);
  EnhanceResult r;
  r.average.samples = out.average.values();
  if (cfg_.mrd_enabled) {
    for (const auto& h : out.heads) r.heads.push_back(AudioBuffer{h.values()});
  }
  return r;
}

}  // namespace msd
