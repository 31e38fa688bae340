// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "msdemucs/error.hpp"

namespace msd {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_pair(const char* op, const AudioBuffer& ref, const AudioBuffer& deg) {
  validate_pipeline_audio(ref, op);
  validate_pipeline_audio(deg, op);
  if (ref.size() != deg.size()) {
    throw InvalidArgument(std::string(op) + ": length mismatch " + std::to_string(ref.size()) +
                          " vs " + std::to_string(deg.size()));
  }
  if (ref.size() == 0) throw InvalidArgument(std::string(op) + ": empty signals");
}

// Hann without the zero end points: 0.5 (1 - cos(2 pi (n + 1) / (N + 1))).
std::vector<double> inner_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i + 1) /
                                 static_cast<double>(n + 1)));
  }
  return w;
}

std::size_t full_frames(std::size_t len, std::size_t frame, std::size_t hop, const char* op) {
  if (len < frame) {
    throw InvalidArgument(std::string(op) + ": signal of " + std::to_string(len) +
                          " samples is shorter than one " + std::to_string(frame) +
                          "-sample frame");
  }
  return (len - frame) / hop + 1;
}

double trimmed_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(static_cast<double>(v.size()) * kTrimFraction)));
  double s = 0.0;
  for (std::size_t i = 0; i < keep; ++i) s += v[i];
  return s / static_cast<double>(keep);
}

std::vector<double> windowed(std::span<const double> x, std::size_t start,
                             const std::vector<double>& w) {
  std::vector<double> f(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) f[i] = x[start + i] * w[i];
  return f;
}

double toeplitz_form(std::span<const double> a, std::span<const double> r) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      s += a[i] * r[i > j ? i - j : j - i] * a[j];
    }
  }
  return s;
}

}  // namespace

double segsnr(const AudioBuffer& ref, const AudioBuffer& deg) {
  check_pair("segsnr", ref, deg);
  const std::size_t n = ref.size();
  const std::size_t frame = std::min(n, kSegSnrFrame);
  const std::size_t count = (n - frame) / kSegSnrHop + 1;
  std::vector<double> sig(count), err(count);
  double peak = 0.0;
  for (std::size_t f = 0; f < count; ++f) {
    const std::size_t s0 = f * kSegSnrHop;
    for (std::size_t i = s0; i < s0 + frame; ++i) {
      const double d = ref.samples[i] - deg.samples[i];
      sig[f] += ref.samples[i] * ref.samples[i];
      err[f] += d * d;
    }
    peak = std::max(peak, sig[f]);
  }
  if (peak == 0.0) throw UndefinedMetric("segsnr: reference is silent");
  const double floor = peak * std::pow(10.0, -kSegSnrSilenceDb / 10.0);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < count; ++f) {
    if (sig[f] < floor) continue;
    const double snr = err[f] == 0.0 ? kSegSnrMax : 10.0 * std::log10(sig[f] / err[f]);
    total += std::clamp(snr, kSegSnrMin, kSegSnrMax);
    ++used;
  }
  return total / static_cast<double>(used);
}

std::vector<double> autocorrelation(std::span<const double> frame, std::size_t order) {
  std::vector<double> r(order + 1, 0.0);
  for (std::size_t k = 0; k <= order && k < frame.size(); ++k) {
    for (std::size_t i = k; i < frame.size(); ++i) r[k] += frame[i] * frame[i - k];
  }
  return r;
}

std::optional<std::vector<double>> levinson(std::span<const double> r) {
  if (r.empty() || !(r[0] > 0.0)) return std::nullopt;
  const std::size_t p = r.size() - 1;
  std::vector<double> a(p + 1, 0.0), prev;
  a[0] = 1.0;
  double err = r[0];
  for (std::size_t i = 1; i <= p; ++i) {
    double acc = r[i];
    for (std::size_t j = 1; j < i; ++j) acc += a[j] * r[i - j];
    const double k = -acc / err;
    if (!(std::abs(k) < 1.0)) return std::nullopt;
    prev = a;
    for (std::size_t j = 1; j < i; ++j) a[j] = prev[j] + k * prev[i - j];
    a[i] = k;
    err *= 1.0 - k * k;
  }
  return a;
}

std::optional<double> llr_from_autocorrelation(std::span<const double> r_ref,
                                               std::span<const double> r_deg) {
  if (r_ref.size() != r_deg.size()) throw InvalidArgument("llr: autocorrelation orders differ");
  auto a_ref = levinson(r_ref);
  auto a_deg = levinson(r_deg);
  if (!a_ref || !a_deg) return std::nullopt;
  const double num = toeplitz_form(*a_deg, r_ref);
  const double den = toeplitz_form(*a_ref, r_ref);
  if (!(num > 0.0) || !(den > 0.0)) return std::nullopt;
  return std::log(num / den);
}

LlrResult llr_detail(const AudioBuffer& ref, const AudioBuffer& deg) {
  check_pair("llr", ref, deg);
  const std::size_t count = full_frames(ref.size(), kLpcFrame, kLpcHop, "llr");
  const auto w = inner_hann(kLpcFrame);
  std::vector<double> dist;
  LlrResult res;
  for (std::size_t f = 0; f < count; ++f) {
    auto fr = windowed(ref.samples, f * kLpcHop, w);
    auto fd = windowed(deg.samples, f * kLpcHop, w);
    auto v = llr_from_autocorrelation(autocorrelation(fr, kLpcOrder),
                                      autocorrelation(fd, kLpcOrder));
    if (v) {
      dist.push_back(*v);
    } else {
      ++res.frames_skipped;
    }
  }
  if (dist.empty()) throw UndefinedMetric("llr: no frame has a stable LPC model");
  res.frames_used = dist.size();
  res.value = trimmed_mean(std::move(dist));
  return res;
}

double llr(const AudioBuffer& ref, const AudioBuffer& deg) { return llr_detail(ref, deg).value; }

namespace {

constexpr std::array<double, kWssBands> kCentreHz = {
    50.0000, 120.000, 190.000, 260.000, 330.000, 400.000, 470.000, 540.000, 617.372,
    703.378, 798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70, 1794.16,
    1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63};
constexpr std::array<double, kWssBands> kBandwidthHz = {
    70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 77.3724, 86.0056,
    95.3398, 105.411, 116.256, 127.914, 140.423, 153.823, 168.154, 183.457, 199.776,
    217.153, 235.631, 255.255, 276.072, 298.126, 321.465, 346.136};
constexpr double kWssKmax = 20.0;
constexpr double kWssKlocmax = 1.0;

const std::vector<std::vector<double>>& critical_filters() {
  static const auto filters = [] {
    const std::size_t half = kWssFft / 2;
    const double nyquist = kSampleRate / 2.0;
    const double min_factor = std::exp(-30.0 / (2.0 * 2.303));
    std::vector<std::vector<double>> f(kWssBands, std::vector<double>(half, 0.0));
    for (std::size_t b = 0; b < kWssBands; ++b) {
      const double f0 = std::floor(kCentreHz[b] / nyquist * static_cast<double>(half));
      const double bw = kBandwidthHz[b] / nyquist * static_cast<double>(half);
      const double norm = std::log(kBandwidthHz[0]) - std::log(kBandwidthHz[b]);
      for (std::size_t j = 0; j < half; ++j) {
        const double u = (static_cast<double>(j) - f0) / bw;
        const double v = std::exp(-11.0 * u * u + norm);
        f[b][j] = v > min_factor ? v : 0.0;
      }
    }
    return f;
  }();
  return filters;
}

std::vector<double> power_spectrum(const std::vector<double>& frame) {
  std::vector<dsp::Complex> buf(kWssFft);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  dsp::dft(buf, -1);
  std::vector<double> p(kWssFft / 2);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::norm(buf[i]);
  return p;
}

std::array<double, kWssBands - 1> local_peaks(std::span<const double> e,
                                              std::span<const double> slope) {
  const std::size_t m = kWssBands - 1;
  std::array<double, kWssBands - 1> peak{};
  for (std::size_t i = 0; i < m; ++i) {
    if (slope[i] > 0.0) {
      std::size_t n = i;
      while (n < m && slope[n] > 0.0) ++n;
      peak[i] = e[n - 1];
    } else {
      long long n = static_cast<long long>(i);
      while (n >= 0 && slope[static_cast<std::size_t>(n)] <= 0.0) --n;
      peak[i] = e[static_cast<std::size_t>(n + 1)];
    }
  }
  return peak;
}

}  // namespace

std::array<double, kWssBands> wss_band_energies(std::span<const double> power) {
  if (power.size() != kWssFft / 2) {
    throw InvalidArgument("wss: expected " + std::to_string(kWssFft / 2) + " power bins");
  }
  const auto& filt = critical_filters();
  std::array<double, kWssBands> e{};
  for (std::size_t b = 0; b < kWssBands; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < power.size(); ++j) s += filt[b][j] * power[j];
    e[b] = 10.0 * std::log10(std::max(s, 1e-10));
  }
  return e;
}

double wss_band_distortion(std::span<const double> ref_db, std::span<const double> deg_db) {
  if (ref_db.size() != kWssBands || deg_db.size() != kWssBands) {
    throw InvalidArgument("wss: expected " + std::to_string(kWssBands) + " band energies");
  }
  const std::size_t m = kWssBands - 1;
  std::array<double, kWssBands - 1> sr{}, sd{};
  for (std::size_t i = 0; i < m; ++i) {
    sr[i] = ref_db[i + 1] - ref_db[i];
    sd[i] = deg_db[i + 1] - deg_db[i];
  }
  const auto pr = local_peaks(ref_db, sr);
  const auto pd = local_peaks(deg_db, sd);
  const double max_r = *std::max_element(ref_db.begin(), ref_db.end());
  const double max_d = *std::max_element(deg_db.begin(), deg_db.end());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double wr = kWssKmax / (kWssKmax + max_r - ref_db[i]) *
                      (kWssKlocmax / (kWssKlocmax + pr[i] - ref_db[i]));
    const double wd = kWssKmax / (kWssKmax + max_d - deg_db[i]) *
                      (kWssKlocmax / (kWssKlocmax + pd[i] - deg_db[i]));
    const double w = 0.5 * (wr + wd);
    num += w * (sr[i] - sd[i]) * (sr[i] - sd[i]);
    den += w;
  }
  return num / den;
}

double wss(const AudioBuffer& ref, const AudioBuffer& deg) {
  check_pair("wss", ref, deg);
  const std::size_t count = full_frames(ref.size(), kLpcFrame, kLpcHop, "wss");
  const auto w = inner_hann(kLpcFrame);
  std::vector<double> dist(count);
  for (std::size_t f = 0; f < count; ++f) {
    const auto er = wss_band_energies(power_spectrum(windowed(ref.samples, f * kLpcHop, w)));
    const auto ed = wss_band_energies(power_spectrum(windowed(deg.samples, f * kLpcHop, w)));
    dist[f] = wss_band_distortion(er, ed);
  }
  return trimmed_mean(std::move(dist));
}

std::vector<double> resample_poly(std::span<const double> x, int up, int down) {
  if (up <= 0 || down <= 0) throw InvalidArgument("resample_poly: factors must be positive");
  constexpr int kHalfWidth = 16;
  const int d = std::max(up, down);
  const long long span = static_cast<long long>(kHalfWidth) * d;
  const std::size_t out_len = (x.size() * static_cast<std::size_t>(up) + down - 1) / down;
  std::vector<double> y(out_len, 0.0);
  const double gain = static_cast<double>(up) / d;
  const auto n_in = static_cast<long long>(x.size());
  for (std::size_t m = 0; m < out_len; ++m) {
    const long long c = static_cast<long long>(m) * down;
    long long k0 = (c - span + up - 1) / up;
    if (c - span < 0) k0 = 0;
    const long long k1 = std::min(n_in - 1, (c + span) / up);
    double acc = 0.0;
    for (long long k = std::max(0LL, k0); k <= k1; ++k) {
      acc += x[static_cast<std::size_t>(k)] *
             dsp::kaiser_sinc(static_cast<double>(c - k * up) / d, kHalfWidth, dsp::kKaiserBeta);
    }
    y[m] = gain * acc;
  }
  return y;
}

namespace {

constexpr double kStoiDynRange = 40.0;
constexpr double kStoiBeta = -15.0;
constexpr double kStoiMinFreq = 150.0;

void remove_silent_frames(std::vector<double>& x, std::vector<double>& y) {
  const std::size_t len = kStoiFrame, hop = kStoiFrame / 2;
  const auto w = inner_hann(len);
  std::vector<std::vector<double>> xf, yf;
  std::vector<double> energy;
  for (std::size_t i = 0; i + len < x.size(); i += hop) {
    xf.push_back(windowed(x, i, w));
    yf.push_back(windowed(y, i, w));
    double s = 0.0;
    for (double v : xf.back()) s += v * v;
    energy.push_back(20.0 * std::log10(std::sqrt(s) + kEps));
  }
  if (xf.empty()) {
    x.clear();
    y.clear();
    return;
  }
  const double top = *std::max_element(energy.begin(), energy.end());
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < energy.size(); ++i) {
    if (top - kStoiDynRange - energy[i] < 0.0) keep.push_back(i);
  }
  const std::size_t n = (keep.size() - 1) * hop + len;
  std::vector<double> xs(n, 0.0), ys(n, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    for (std::size_t t = 0; t < len; ++t) {
      xs[j * hop + t] += xf[keep[j]][t];
      ys[j * hop + t] += yf[keep[j]][t];
    }
  }
  x = std::move(xs);
  y = std::move(ys);
}

// Third-octave band envelopes [band][frame].
std::vector<std::vector<double>> third_octave(const std::vector<double>& x) {
  const std::size_t hop = kStoiFrame / 2, bins = kStoiFft / 2 + 1;
  static const auto obm = [] {
    std::vector<std::pair<std::size_t, std::size_t>> r;
    auto nearest = [](double hz) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < kStoiFft / 2 + 1; ++j) {
        const double f = static_cast<double>(j) * kStoiRate / kStoiFft;
        const double dd = (f - hz) * (f - hz);
        if (dd < bd) {
          bd = dd;
          best = j;
        }
      }
      return best;
    };
    for (std::size_t k = 0; k < kStoiBands; ++k) {
      const double kk = static_cast<double>(k);
      r.emplace_back(nearest(kStoiMinFreq * std::pow(2.0, (2 * kk - 1) / 6.0)),
                     nearest(kStoiMinFreq * std::pow(2.0, (2 * kk + 1) / 6.0)));
    }
    return r;
  }();
  const auto w = inner_hann(kStoiFrame);
  std::vector<std::vector<double>> out(kStoiBands);
  std::vector<dsp::Complex> buf(kStoiFft);
  std::vector<double> pw(bins);
  for (std::size_t i = 0; i + kStoiFrame < x.size(); i += hop) {
    std::fill(buf.begin(), buf.end(), dsp::Complex{});
    for (std::size_t t = 0; t < kStoiFrame; ++t) buf[t] = x[i + t] * w[t];
    dsp::dft(buf, -1);
    for (std::size_t j = 0; j < bins; ++j) pw[j] = std::norm(buf[j]);
    for (std::size_t b = 0; b < kStoiBands; ++b) {
      double s = 0.0;
      for (std::size_t j = obm[b].first; j < obm[b].second; ++j) s += pw[j];
      out[b].push_back(std::sqrt(s));
    }
  }
  return out;
}

double norm_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double stoi(const AudioBuffer& ref, const AudioBuffer& deg) {
  check_pair("stoi", ref, deg);
  auto x = resample_poly(ref.samples, 5, 8);
  auto y = resample_poly(deg.samples, 5, 8);
  remove_silent_frames(x, y);
  const auto xt = third_octave(x);
  const auto yt = third_octave(y);
  const std::size_t frames = xt[0].size();
  if (frames < kStoiSegment) {
    throw InvalidArgument("stoi: needs at least 384 ms of non-silent signal, got " +
                          std::to_string(frames) + " frames of " +
                          std::to_string(kStoiSegment));
  }
  const double clip = std::pow(10.0, -kStoiBeta / 20.0);
  const std::size_t N = kStoiSegment;
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> xs(N), ys(N);
  for (std::size_t m = N; m <= frames; ++m) {
    for (std::size_t b = 0; b < kStoiBands; ++b) {
      std::copy(xt[b].begin() + (m - N), xt[b].begin() + m, xs.begin());
      std::copy(yt[b].begin() + (m - N), yt[b].begin() + m, ys.begin());
      const double c = norm_of(xs) / (norm_of(ys) + kEps);
      double mx = 0.0, my = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        ys[n] = std::min(ys[n] * c, xs[n] * (1.0 + clip));
        mx += xs[n];
        my += ys[n];
      }
      mx /= N;
      my /= N;
      for (std::size_t n = 0; n < N; ++n) {
        xs[n] -= mx;
        ys[n] -= my;
      }
      const double nx = norm_of(xs) + kEps, ny = norm_of(ys) + kEps;
      double corr = 0.0;
      for (std::size_t n = 0; n < N; ++n) corr += (xs[n] / nx) * (ys[n] / ny);
      total += corr;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void CompositeCoefficients::validate() const {
  for (const auto* w : {&csig, &cbak, &covl}) {
    for (double v : {w->intercept, w->llr, w->pesq, w->wss, w->segsnr}) {
      if (!std::isfinite(v)) throw InvalidArgument("composite coefficients must be finite");
    }
  }
}

namespace {

nlohmann::json weights_to_json(const CompositeWeights& w) {
  return {{"intercept", w.intercept}, {"llr", w.llr}, {"pesq", w.pesq}, {"wss", w.wss},
          {"segsnr", w.segsnr}};
}

CompositeWeights weights_from_json(const nlohmann::json& j, CompositeWeights w) {
  w.intercept = j.value("intercept", w.intercept);
  w.llr = j.value("llr", w.llr);
  w.pesq = j.value("pesq", w.pesq);
  w.wss = j.value("wss", w.wss);
  w.segsnr = j.value("segsnr", w.segsnr);
  return w;
}

double apply(const CompositeWeights& w, const MeasureVector& m) {
  return w.intercept + w.llr * m.llr + w.pesq * m.pesq.value_or(0.0) + w.wss * m.wss +
         w.segsnr * m.segsnr;
}

}  // namespace

nlohmann::json composite_coefficients_to_json(const CompositeCoefficients& c) {
  return {{"csig", weights_to_json(c.csig)},
          {"cbak", weights_to_json(c.cbak)},
          {"covl", weights_to_json(c.covl)}};
}

CompositeCoefficients composite_coefficients_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("composite coefficients must be a JSON object");
  CompositeCoefficients c;
  try {
    if (j.contains("csig")) c.csig = weights_from_json(j.at("csig"), c.csig);
    if (j.contains("cbak")) c.cbak = weights_from_json(j.at("cbak"), c.cbak);
    if (j.contains("covl")) c.covl = weights_from_json(j.at("covl"), c.covl);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid composite coefficients: ") + e.what());
  }
  c.validate();
  return c;
}

CompositeScores composite(const MeasureVector& m, const CompositeCoefficients& coeffs) {
  coeffs.validate();
  if (!m.pesq && (coeffs.csig.pesq != 0.0 || coeffs.cbak.pesq != 0.0 ||
                  coeffs.covl.pesq != 0.0)) {
    throw InvalidArgument("composite measures need a PESQ value (supply a PESQ sidecar)");
  }
  return {apply(coeffs.csig, m), apply(coeffs.cbak, m), apply(coeffs.covl, m)};
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"segsnr", "llr",  "wss",  "stoi",
                                                "pesq",   "csig", "cbak", "covl"};
  return cols;
}

MetricReport evaluate_pair(const AudioBuffer& ref, const AudioBuffer& deg,
                           std::optional<double> pesq, const CompositeCoefficients* coeffs) {
  MetricReport r;
  r.segsnr = segsnr(ref, deg);
  r.llr = llr(ref, deg);
  r.wss = wss(ref, deg);
  r.stoi = std::clamp(stoi(ref, deg), 0.0, 1.0);
  r.pesq = pesq;
  if (coeffs) {
    auto c = composite({r.llr, r.wss, r.segsnr, pesq}, *coeffs);
    r.csig = c.csig;
    r.cbak = c.cbak;
    r.covl = c.covl;
  }
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& rows) {
  if (rows.empty()) throw InvalidArgument("mean_report: no rows");
  const double n = static_cast<double>(rows.size());
  MetricReport m;
  auto opt_mean = [&](std::optional<double> MetricReport::*field) -> std::optional<double> {
    double s = 0.0;
    for (const auto& r : rows) {
      if (!(r.*field)) return std::nullopt;
      s += *(r.*field);
    }
    return s / n;
  };
  for (const auto& r : rows) {
    m.segsnr += r.segsnr;
    m.llr += r.llr;
    m.wss += r.wss;
    m.stoi += r.stoi;
  }
  m.segsnr /= n;
  m.llr /= n;
  m.wss /= n;
  m.stoi /= n;
  m.pesq = opt_mean(&MetricReport::pesq);
  m.csig = opt_mean(&MetricReport::csig);
  m.cbak = opt_mean(&MetricReport::cbak);
  m.covl = opt_mean(&MetricReport::covl);
  return m;
}

nlohmann::json metric_report_to_json(const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json out;
  out["segsnr"] = r.segsnr;
  out["llr"] = r.llr;
  out["wss"] = r.wss;
  out["stoi"] = r.stoi;
  out["pesq"] = opt(r.pesq);
  out["csig"] = opt(r.csig);
  out["cbak"] = opt(r.cbak);
  out["covl"] = opt(r.covl);
  return out;
}

}  // namespace msd
