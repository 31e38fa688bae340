// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "msdemucs/error.hpp"

namespace msd {

namespace fs = std::filesystem;

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw InvalidArgument("Rng::index: empty range");
  return static_cast<std::size_t>(gen_() % n);
}

const char* clean_kind_name(CleanKind k) {
  switch (k) {
    case CleanKind::kHarmonicVowel: return "harmonic-vowel";
    case CleanKind::kChirp: return "chirp";
    case CleanKind::kFile: return "file";
  }
  return "?";
}

const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kWhite: return "white";
    case NoiseKind::kPink: return "pink";
    case NoiseKind::kBabble: return "filtered-babble-surrogate";
    case NoiseKind::kFile: return "file";
  }
  return "?";
}

void MixSpec::validate() const {
  if (!(duration_s >= 0.5) || !std::isfinite(duration_s)) {
    throw InvalidArgument("mix duration must be at least 0.5 s, got " +
                          std::to_string(duration_s));
  }
  if (!std::isfinite(snr_db)) throw InvalidArgument("mix snr_db must be finite");
  if (clean_kind == CleanKind::kFile && clean_path.empty()) {
    throw InvalidArgument("clean kind 'file' needs clean_path");
  }
  if (noise_kind == NoiseKind::kFile && noise_path.empty()) {
    throw InvalidArgument("noise kind 'file' needs noise_path");
  }
}

std::size_t MixSpec::samples() const {
  return static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
}

nlohmann::json mix_spec_to_json(const MixSpec& s) {
  nlohmann::json j = {{"clean_kind", clean_kind_name(s.clean_kind)},
                      {"noise_kind", noise_kind_name(s.noise_kind)},
                      {"snr_db", s.snr_db},
                      {"duration_s", s.duration_s},
                      {"seed", s.seed}};
  if (!s.clean_path.empty()) j["clean_path"] = s.clean_path;
  if (!s.noise_path.empty()) j["noise_path"] = s.noise_path;
  return j;
}

MixSpec mix_spec_from_json(const nlohmann::json& j) {
  MixSpec s;
  try {
    const auto ck = j.value("clean_kind", std::string("harmonic-vowel"));
    if (ck == "harmonic-vowel") s.clean_kind = CleanKind::kHarmonicVowel;
    else if (ck == "chirp") s.clean_kind = CleanKind::kChirp;
    else if (ck == "file") s.clean_kind = CleanKind::kFile;
    else throw InvalidArgument("unknown clean_kind \"" + ck + "\"");
    const auto nk = j.value("noise_kind", std::string("white"));
    if (nk == "white") s.noise_kind = NoiseKind::kWhite;
    else if (nk == "pink") s.noise_kind = NoiseKind::kPink;
    else if (nk == "filtered-babble-surrogate" || nk == "babble") s.noise_kind = NoiseKind::kBabble;
    else if (nk == "file") s.noise_kind = NoiseKind::kFile;
    else throw InvalidArgument("unknown noise_kind \"" + nk + "\"");
    s.snr_db = j.value("snr_db", s.snr_db);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.seed = j.value("seed", s.seed);
    s.clean_path = j.value("clean_path", std::string());
    s.noise_path = j.value("noise_path", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid mix spec: ") + e.what());
  }
  s.validate();
  return s;
}

double HarmonicPlan::f0_at(double t) const {
  return f0 * (1.0 + drift_depth * std::sin(2.0 * std::numbers::pi * drift_rate * t + drift_phase));
}

double HarmonicPlan::envelope(double hz) const {
  double e = 0.02;
  for (std::size_t i = 0; i < formants.size(); ++i) {
    const double u = (hz - formants[i]) / bandwidths[i];
    e += 1.0 / (1.0 + u * u);
  }
  return e;
}

HarmonicPlan harmonic_plan(std::uint64_t seed) {
  Rng rng(seed ^ 0x5851f42d4c957f2dULL);
  HarmonicPlan p;
  p.f0 = rng.uniform(100.0, 220.0);
  p.drift_depth = 0.03;
  p.drift_rate = rng.uniform(0.3, 0.8);
  p.drift_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.formants = {rng.uniform(300.0, 800.0), rng.uniform(900.0, 2300.0),
                rng.uniform(2400.0, 3200.0)};
  p.bandwidths = {80.0, 120.0, 160.0};
  return p;
}

namespace {

constexpr double kMaxHarmonicHz = 7000.0;
constexpr double kFadeS = 0.02;

void peak_normalise(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m == 0.0) return;
  for (double& v : x) v *= peak / m;
}

void fade(std::vector<double>& x) {
  const auto n = std::min(x.size() / 2, static_cast<std::size_t>(kFadeS * kSampleRate));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(i) / n));
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }
}

std::vector<double> harmonic_voice(const HarmonicPlan& p, std::size_t n, Rng& rng,
                                   double syllable_hz) {
  const int harmonics = static_cast<int>(kMaxHarmonicHz / (p.f0 * (1.0 + p.drift_depth)));
  std::vector<double> phases(static_cast<std::size_t>(harmonics));
  for (double& ph : phases) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double syl_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> x(n, 0.0);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double f0 = p.f0_at(t);
    const double am =
        0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * syllable_hz * t + syl_phase);
    double s = 0.0;
    for (int k = 1; k <= harmonics; ++k) {
      s += p.envelope(k * f0) * std::sin(k * phase + phases[static_cast<std::size_t>(k - 1)]);
    }
    x[i] = am * s;
    phase += 2.0 * std::numbers::pi * f0 / kSampleRate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
  }
  return x;
}

// Repeats or truncates a file to n samples.
std::vector<double> fit_length(const AudioBuffer& b, std::size_t n, const std::string& what) {
  if (b.size() == 0) throw InvalidArgument(what + " is empty");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b.samples[i % b.size()];
  return x;
}

}  // namespace

AudioBuffer synth_clean(const MixSpec& spec) {
  spec.validate();
  const std::size_t n = spec.samples();
  AudioBuffer out;
  Rng rng(spec.seed);
  switch (spec.clean_kind) {
    case CleanKind::kHarmonicVowel: {
      out.samples = harmonic_voice(harmonic_plan(spec.seed), n, rng, rng.uniform(2.0, 4.0));
      break;
    }
    case CleanKind::kChirp: {
      const double f_start = rng.uniform(150.0, 300.0), f_end = rng.uniform(2500.0, 4000.0);
      const double dur = static_cast<double>(n) / kSampleRate;
      const double k = std::log(f_end / f_start) / dur;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        out.samples[i] = std::sin(2.0 * std::numbers::pi * f_start * (std::exp(k * t) - 1.0) / k);
      }
      break;
    }
    case CleanKind::kFile:
      return AudioBuffer{fit_length(wav_read(spec.clean_path), n, spec.clean_path)};
  }
  fade(out.samples);
  peak_normalise(out.samples, kCleanPeak);
  return out;
}

AudioBuffer synth_noise(const MixSpec& spec) {
  spec.validate();
  const std::size_t n = spec.samples();
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  AudioBuffer out;
  out.samples.resize(n);
  switch (spec.noise_kind) {
    case NoiseKind::kWhite:
      for (double& v : out.samples) v = rng.normal();
      break;
    case NoiseKind::kPink: {
      // Kellet's economy filter: -3 dB/octave within 0.5 dB above 20 Hz.
      double b0 = 0, b1 = 0, b2 = 0;
      for (double& v : out.samples) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseKind::kBabble: {
      constexpr int kTalkers = 6;
      std::fill(out.samples.begin(), out.samples.end(), 0.0);
      for (int t = 0; t < kTalkers; ++t) {
        auto voice = harmonic_voice(harmonic_plan(rng.next()), n, rng, rng.uniform(3.0, 6.0));
        peak_normalise(voice, rng.uniform(0.5, 1.0));
        for (std::size_t i = 0; i < n; ++i) out.samples[i] += voice[i];
      }
      // One-pole low-pass near 3 kHz.
      const double a = std::exp(-2.0 * std::numbers::pi * 3000.0 / kSampleRate);
      double y = 0.0;
      for (double& v : out.samples) {
        y = (1.0 - a) * v + a * y;
        v = y;
      }
      break;
    }
    case NoiseKind::kFile:
      return AudioBuffer{fit_length(wav_read(spec.noise_path), n, spec.noise_path)};
  }
  return out;
}

namespace {

double mean_power(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

}  // namespace

double measured_snr_db(const AudioBuffer& clean, const AudioBuffer& noise) {
  if (clean.size() != noise.size() || clean.size() == 0) {
    throw InvalidArgument("measured_snr_db: signals must be non-empty and of equal length");
  }
  return 10.0 * std::log10(mean_power(clean.samples) / mean_power(noise.samples));
}

Mixture mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw InvalidArgument("mix_at_snr: clean has " + std::to_string(clean.size()) +
                          " samples, noise " + std::to_string(noise.size()));
  }
  if (clean.size() == 0) throw InvalidArgument("mix_at_snr: empty signals");
  if (!std::isfinite(snr_db)) throw InvalidArgument("mix_at_snr: snr_db must be finite");
  const double pc = mean_power(clean.samples), pn = mean_power(noise.samples);
  if (pc == 0.0) throw InvalidArgument("mix_at_snr: clean signal is silent");
  if (pn == 0.0) throw InvalidArgument("mix_at_snr: noise signal is silent");
  const double gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  Mixture m;
  m.noise.samples.resize(clean.size());
  m.noisy.samples.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    m.noise.samples[i] = gain * noise.samples[i];
    m.noisy.samples[i] = clean.samples[i] + m.noise.samples[i];
  }
  return m;
}

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

}  // namespace

std::vector<std::uint8_t> wav_encode(const AudioBuffer& buf) {
  if (buf.sample_rate != kSampleRate) {
    throw InvalidArgument("wav_write: only 16 kHz audio is written, got " +
                          std::to_string(buf.sample_rate) + " Hz");
  }
  const auto data_bytes = static_cast<std::uint32_t>(buf.size() * 2);
  std::vector<std::uint8_t> b;
  b.reserve(44 + data_bytes);
  for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, kSampleRate);
  put_u32(b, kSampleRate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, data_bytes);
  for (double v : buf.samples) {
    const double s = std::isfinite(v) ? std::round(v * 32768.0) : 0.0;
    const auto q = static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
    put_u16(b, static_cast<std::uint16_t>(q));
  }
  return b;
}

AudioBuffer wav_decode(const std::vector<std::uint8_t>& b, const std::string& what) {
  auto fail = [&](const std::string& msg) { return UnsupportedFormat(what + ": " + msg); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::string id(reinterpret_cast<const char*>(b.data() + pos), 4);
    const std::size_t size = get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size() && id != "data") throw fail("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw fail("short fmt chunk");
      const auto format = get_u16(b, body), channels = get_u16(b, body + 2);
      const auto rate = get_u32(b, body + 4);
      const auto bits = get_u16(b, body + 14);
      if (format != 1) throw fail("audio format " + std::to_string(format) + " is not PCM");
      if (channels != 1) throw fail(std::to_string(channels) + " channels, expected mono");
      if (bits != 16) throw fail(std::to_string(bits) + "-bit samples, expected 16-bit");
      if (rate != kSampleRate) {
        throw fail("sample rate " + std::to_string(rate) + " Hz, expected 16000 Hz");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (body + size > b.size()) throw fail("truncated data chunk");
      AudioBuffer out;
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = static_cast<std::int16_t>(get_u16(b, body + 2 * i)) / 32768.0;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw fail("no data chunk");
}

AudioBuffer wav_read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return wav_decode(bytes, path.string());
}

namespace {

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::string number_text(double v) { return nlohmann::json(v).dump(); }

}  // namespace

void wav_write(const fs::path& path, const AudioBuffer& buf) {
  const auto bytes = wav_encode(buf);
  write_bytes(path, bytes.data(), bytes.size());
}

std::string manifest_text(const std::vector<ManifestEntry>& entries) {
  std::string s = "clean\tnoisy\tsnr_db\tseed\n";
  for (const auto& e : entries) {
    s += e.clean + "\t" + e.noisy + "\t" + number_text(e.snr_db) + "\t" + std::to_string(e.seed) +
         "\n";
  }
  return s;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "clean\tnoisy\tsnr_db\tseed") {
    throw InvalidArgument(path.string() + ": missing manifest header");
  }
  std::vector<ManifestEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 4) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) +
                            ": expected 4 tab-separated fields");
    }
    try {
      out.push_back({f[0], f[1], std::stod(f[2]), std::stoull(f[3])});
    } catch (const std::exception&) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

std::vector<ManifestEntry> synth_corpus(const std::vector<MixSpec>& specs, const fs::path& dir) {
  try {
    fs::create_directories(dir / "clean");
    fs::create_directories(dir / "noisy");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create corpus directory " + dir.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    auto clean = synth_clean(spec);
    auto mix = mix_at_snr(clean, synth_noise(spec), spec.snr_db);
    // A joint gain keeps the mixture inside PCM16 range without changing the SNR.
    double peak = 0.0;
    for (double v : mix.noisy.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.99) {
      const double g = 0.99 / peak;
      for (double& v : clean.samples) v *= g;
      for (double& v : mix.noisy.samples) v *= g;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu.wav", i);
    ManifestEntry e{std::string("clean/") + name, std::string("noisy/") + name, spec.snr_db,
                    spec.seed};
    wav_write(dir / e.clean, clean);
    wav_write(dir / e.noisy, mix.noisy);
    entries.push_back(e);
  }
  const auto text = manifest_text(entries);
  write_bytes(dir / "manifest.tsv", text.data(), text.size());
  return entries;
}

std::vector<MixSpec> default_specs(std::size_t count, std::uint64_t seed, double duration_s,
                                   double snr_lo, double snr_hi) {
  Rng rng(seed);
  std::vector<MixSpec> specs;
  for (std::size_t i = 0; i < count; ++i) {
    MixSpec s;
    s.clean_kind = i % 4 == 3 ? CleanKind::kChirp : CleanKind::kHarmonicVowel;
    s.noise_kind = static_cast<NoiseKind>(i % 3);
    s.snr_db = std::round(rng.uniform(snr_lo, snr_hi) * 100.0) / 100.0;
    s.duration_s = duration_s;
    s.seed = rng.next() >> 1;
    s.validate();
    specs.push_back(s);
  }
  return specs;
}

std::vector<Pair> load_corpus(const fs::path& manifest) {
  const auto base = manifest.parent_path();
  std::vector<Pair> out;
  for (const auto& e : read_manifest(manifest)) {
    Pair p{wav_read(base / e.noisy), wav_read(base / e.clean)};
    if (p.noisy.size() != p.clean.size()) {
      throw InvalidArgument("corpus pair " + e.noisy + " / " + e.clean + " differ in length");
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw InvalidArgument(manifest.string() + ": manifest lists no files");
  return out;
}

BatchStream::BatchStream(const std::vector<Pair>& corpus, double segment_s, std::size_t batch,
                         std::uint64_t seed)
    : corpus_(&corpus),
      segment_(static_cast<std::size_t>(std::llround(segment_s * kSampleRate))),
      batch_(batch),
      rng_(seed) {
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (segment_ == 0) throw InvalidArgument("segment length must be positive");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].clean.size() >= segment_) usable_.push_back(i);
  }
  if (usable_.empty()) {
    throw InvalidArgument("segment of " + std::to_string(segment_) +
                          " samples is longer than every corpus file");
  }
}

Crop BatchStream::next_crop() {
  if (pos_ == order_.size()) {
    order_ = usable_;
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
    pos_ = 0;
  }
  Crop c;
  c.file = order_[pos_++];
  c.offset = rng_.index((*corpus_)[c.file].clean.size() - segment_ + 1);
  return c;
}

void BatchStream::skip(std::size_t n) {
  for (std::size_t i = 0; i < n * batch_; ++i) next_crop();
}

Batch BatchStream::next() {
  Batch b;
  std::vector<double> noisy, clean;
  noisy.reserve(batch_ * segment_);
  clean.reserve(batch_ * segment_);
  for (std::size_t i = 0; i < batch_; ++i) {
    const Crop c = next_crop();
    const auto& p = (*corpus_)[c.file];
    noisy.insert(noisy.end(), p.noisy.samples.begin() + static_cast<std::ptrdiff_t>(c.offset),
                 p.noisy.samples.begin() + static_cast<std::ptrdiff_t>(c.offset + segment_));
    clean.insert(clean.end(), p.clean.samples.begin() + static_cast<std::ptrdiff_t>(c.offset),
                 p.clean.samples.begin() + static_cast<std::ptrdiff_t>(c.offset + segment_));
    b.crops.push_back(c);
  }
  b.noisy = ag::Tensor::from({batch_, 1, segment_}, std::move(noisy));
  b.clean = ag::Tensor::from({batch_, 1, segment_}, std::move(clean));
  return b;
}

}  // namespace msd
