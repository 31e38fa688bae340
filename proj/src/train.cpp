// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "msdemucs/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "msdemucs/data.hpp"
#include "msdemucs/error.hpp"

namespace msd {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'E', 'M', 'U', 'C', 'S'};
constexpr std::uint64_t kStreamSalt = 0xd1b54a32d192ed03ULL;

template <typename T>
void put_le(std::vector<std::uint8_t>& b, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    b.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw UnsupportedFormat(what_ + ": truncated checkpoint");
  }
  const std::vector<std::uint8_t>& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw IoError("write to " + p.string() + " failed");
}

void ensure_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
}

std::vector<std::uint64_t> shape_of(const ag::Shape& s) { return {s.begin(), s.end()}; }

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> b(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(b, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  put_le<std::uint32_t>(b, static_cast<std::uint32_t>(meta.size()));
  b.insert(b.end(), meta.begin(), meta.end());
  put_le<std::uint64_t>(b, ck.arrays.size());
  for (const auto& a : ck.arrays) {
    std::uint64_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.data.size()) throw ShapeError("checkpoint array " + a.name + ": shape/data mismatch");
    put_le<std::uint32_t>(b, static_cast<std::uint32_t>(a.name.size()));
    b.insert(b.end(), a.name.begin(), a.name.end());
    put_le<std::uint32_t>(b, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_le<std::uint64_t>(b, d);
    for (double v : a.data) put_le<std::uint64_t>(b, std::bit_cast<std::uint64_t>(v));
  }
  return b;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  Reader r(bytes, what);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw UnsupportedFormat(what + ": not a msdemucs checkpoint");
  }
  r.text(8);
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError(what + ": checkpoint format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  const auto meta_len = r.le<std::uint32_t>();
  try {
    ck.meta = nlohmann::json::parse(r.text(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw UnsupportedFormat(what + ": corrupt checkpoint metadata: " + e.what());
  }
  const auto count = r.le<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.text(r.le<std::uint32_t>());
    const auto rank = r.le<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      a.shape.push_back(r.le<std::uint64_t>());
      n *= a.shape.back();
    }
    if (n > bytes.size() / 8) throw UnsupportedFormat(what + ": truncated checkpoint");
    a.data.resize(n);
    for (auto& v : a.data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw UnsupportedFormat(what + ": trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  ensure_parent(path);
  const auto bytes = encode_checkpoint(ck);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("adam lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw InvalidArgument("adam eps must be positive");
}

Adam::Adam(nn::ParameterStore& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  cfg_.validate();
  for (const auto& e : params.entries()) {
    m_.emplace_back(e.tensor.numel(), 0.0);
    v_.emplace_back(e.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].tensor;
    const auto g = p.grad();
    auto data = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      data[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

void Adam::save(Checkpoint& ck) const {
  const auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto shape = shape_of(entries[i].tensor.shape());
    ck.arrays.push_back({"adam/m/" + entries[i].name, shape, m_[i]});
    ck.arrays.push_back({"adam/v/" + entries[i].name, shape, v_[i]});
  }
  ck.meta["adam_steps"] = t_;
}

void Adam::restore(const Checkpoint& ck) {
  const auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"adam/m/", &m_[i]}, std::pair{"adam/v/", &v_[i]}}) {
      const auto* a = ck.find(prefix + entries[i].name);
      if (!a || a->data.size() != dst->size()) {
        throw VersionError("checkpoint lacks optimiser state for " + entries[i].name);
      }
      *dst = a->data;
    }
  }
  t_ = ck.meta.value("adam_steps", std::uint64_t{0});
}

Checkpoint make_checkpoint(const Model& model, const Adam* adam, std::uint64_t step) {
  Checkpoint ck;
  ck.meta["format"] = "msdemucs";
  ck.meta["model"] = model_config_to_json(model.config());
  ck.meta["variant"] = model.config().variant();
  ck.meta["step"] = step;
  for (const auto& e : model.params().entries()) {
    ck.arrays.push_back({"param/" + e.name, shape_of(e.tensor.shape()), e.tensor.values()});
  }
  for (const auto& b : model.params().buffers()) {
    const std::uint64_t c = b.state->running_mean.size();
    ck.arrays.push_back({"bn/" + b.name + "/running_mean", {c}, b.state->running_mean});
    ck.arrays.push_back({"bn/" + b.name + "/running_var", {c}, b.state->running_var});
  }
  if (adam) adam->save(ck);
  return ck;
}

void restore_model(const Checkpoint& ck, Model& model) {
  for (auto& e : model.params().entries()) {
    const auto* a = ck.find("param/" + e.name);
    if (!a) throw VersionError("checkpoint has no parameter " + e.name);
    if (a->shape != shape_of(e.tensor.shape())) {
      throw VersionError("checkpoint parameter " + e.name + " has a different shape");
    }
    std::copy(a->data.begin(), a->data.end(), e.tensor.data().begin());
  }
  for (const auto& b : model.params().buffers()) {
    const auto* m = ck.find("bn/" + b.name + "/running_mean");
    const auto* v = ck.find("bn/" + b.name + "/running_var");
    if (!m || !v || m->data.size() != b.state->running_mean.size() ||
        v->data.size() != b.state->running_var.size()) {
      throw VersionError("checkpoint has no batch-norm statistics for " + b.name);
    }
    b.state->running_mean = m->data;
    b.state->running_var = v->data;
  }
}

Model model_from_checkpoint(const Checkpoint& ck, const ModelConfig* expected) {
  if (!ck.meta.contains("model")) throw VersionError("checkpoint has no model config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(ck.meta.at("model"));
  } catch (const InvalidArgument& e) {
    throw VersionError(std::string("checkpoint model config is not readable: ") + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw VersionError("checkpoint holds a " + cfg.variant() + " model (base " +
                       std::to_string(cfg.base_channels) + ") but the config describes a " +
                       expected->variant() + " model (base " +
                       std::to_string(expected->base_channels) + ")");
  }
  Model model(cfg);
  restore_model(ck, model);
  return model;
}

void ExperimentConfig::validate() const {
  model.validate();
  loss.validate();
  optimizer.adam.validate();
  if (optimizer.batch == 0) throw InvalidArgument("optimizer.batch must be positive");
  if (!(optimizer.segment_s > 0.0)) throw InvalidArgument("optimizer.segment_s must be positive");
  if (synth.count == 0) throw InvalidArgument("synth.count must be positive");
  if (!(synth.duration_s >= 0.5)) throw InvalidArgument("synth.duration_s must be at least 0.5");
  if (!(synth.snr_lo_db <= synth.snr_hi_db)) throw InvalidArgument("synth SNR range is empty");
  if (checkpoint.empty()) throw InvalidArgument("checkpoint path must not be empty");
}

std::string ExperimentConfig::manifest_path() const {
  return manifest.empty() ? (fs::path(synth.output) / "manifest.tsv").string() : manifest;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"seed", c.seed},
          {"model", model_config_to_json(c.model)},
          {"loss", loss_config_to_json(c.loss)},
          {"optimizer",
           {{"kind", "adam"},
            {"lr", c.optimizer.adam.lr},
            {"beta1", c.optimizer.adam.beta1},
            {"beta2", c.optimizer.adam.beta2},
            {"eps", c.optimizer.adam.eps},
            {"steps", c.optimizer.steps},
            {"batch", c.optimizer.batch},
            {"segment_s", c.optimizer.segment_s}}},
          {"synth",
           {{"count", c.synth.count},
            {"duration_s", c.synth.duration_s},
            {"snr_lo_db", c.synth.snr_lo_db},
            {"snr_hi_db", c.synth.snr_hi_db},
            {"output", c.synth.output}}},
          {"data", {{"manifest", c.manifest}}},
          {"checkpoint", {{"path", c.checkpoint}, {"every", c.checkpoint_every}}},
          {"log", c.log}};
}

namespace {

void check_keys(const nlohmann::json& j, const char* section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidArgument(std::string(section) + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw InvalidArgument("unknown key \"" + k + "\" in " + section);
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  check_keys(j, "config",
             {"schema_version", "seed", "model", "loss", "optimizer", "synth", "data", "checkpoint",
              "log"});
  if (!j.contains("schema_version")) throw InvalidArgument("config lacks schema_version");
  ExperimentConfig c;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kConfigSchemaVersion) {
      throw VersionError("config schema_version " + std::to_string(version) +
                         ", this build reads version " + std::to_string(kConfigSchemaVersion));
    }
    c.seed = j.value("seed", c.seed);
    auto model = j.value("model", nlohmann::json::object());
    if (!model.contains("seed")) model["seed"] = c.seed;
    c.model = model_config_from_json(model);
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, "optimizer",
                 {"kind", "lr", "beta1", "beta2", "eps", "steps", "batch", "segment_s"});
      if (o.value("kind", std::string("adam")) != "adam") {
        throw InvalidArgument("optimizer.kind must be \"adam\"");
      }
      c.optimizer.adam.lr = o.value("lr", c.optimizer.adam.lr);
      c.optimizer.adam.beta1 = o.value("beta1", c.optimizer.adam.beta1);
      c.optimizer.adam.beta2 = o.value("beta2", c.optimizer.adam.beta2);
      c.optimizer.adam.eps = o.value("eps", c.optimizer.adam.eps);
      c.optimizer.steps = o.value("steps", c.optimizer.steps);
      c.optimizer.batch = o.value("batch", c.optimizer.batch);
      c.optimizer.segment_s = o.value("segment_s", c.optimizer.segment_s);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      check_keys(s, "synth", {"count", "duration_s", "snr_lo_db", "snr_hi_db", "output"});
      c.synth.count = s.value("count", c.synth.count);
      c.synth.duration_s = s.value("duration_s", c.synth.duration_s);
      c.synth.snr_lo_db = s.value("snr_lo_db", c.synth.snr_lo_db);
      c.synth.snr_hi_db = s.value("snr_hi_db", c.synth.snr_hi_db);
      c.synth.output = s.value("output", c.synth.output);
    }
    if (j.contains("data")) {
      check_keys(j.at("data"), "data", {"manifest"});
      c.manifest = j.at("data").value("manifest", c.manifest);
    }
    if (j.contains("checkpoint")) {
      check_keys(j.at("checkpoint"), "checkpoint", {"path", "every"});
      c.checkpoint = j.at("checkpoint").value("path", c.checkpoint);
      c.checkpoint_every = j.at("checkpoint").value("every", c.checkpoint_every);
    }
    c.log = j.value("log", c.log);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path.string() + ": not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

fs::path run_synth_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto specs = default_specs(cfg.synth.count, cfg.seed, cfg.synth.duration_s,
                                   cfg.synth.snr_lo_db, cfg.synth.snr_hi_db);
  const fs::path dir = cfg.synth.output;
  synth_corpus(specs, dir);
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : specs) list.push_back(mix_spec_to_json(s));
  write_file(dir / "specs.json", list.dump(2) + "\n");
  spdlog::info("wrote {} mixtures to {}", specs.size(), dir.string());
  return dir / "manifest.tsv";
}

namespace {

LossConfig loss_for_model(const ExperimentConfig& cfg) {
  LossConfig loss = cfg.loss;
  if (!cfg.model.mrd_enabled || !loss.head_assignment.empty()) return loss;
  for (const auto& r : cfg.model.mrd_head_resolutions) {
    auto it = std::find(loss.resolutions.begin(), loss.resolutions.end(), r);
    if (it == loss.resolutions.end()) {
      throw InvalidArgument("MRD head resolution " + r.describe() +
                            " is not among the loss resolutions");
    }
    loss.head_assignment.push_back(static_cast<std::size_t>(it - loss.resolutions.begin()));
  }
  return loss;
}

std::string log_header(const ExperimentConfig& cfg) {
  return "# msdemucs training log\n# variant: " + cfg.model.variant() +
         "\n# config: " + experiment_config_to_json(cfg).dump() + "\n";
}

// Keeps the header and the records of steps <= `step`.
void truncate_log(const fs::path& path, std::size_t step, const std::string& header) {
  std::string kept = header;
  std::ifstream in(path);
  std::string line;
  while (in && std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    try {
      if (nlohmann::json::parse(line).at("step").get<std::size_t>() <= step) kept += line + "\n";
    } catch (const nlohmann::json::exception&) {
      break;
    }
  }
  in.close();
  write_file(path, kept);
}

bool all_finite(const nn::ParameterStore& params) {
  for (const auto& e : params.entries()) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace

TrainResult run_train(const ExperimentConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  const LossConfig loss_cfg = loss_for_model(cfg);
  const auto corpus = load_corpus(cfg.manifest_path());
  Model model(cfg.model);
  Adam adam(model.params(), cfg.optimizer.adam);
  TrainResult res;

  const fs::path ckpt_path = cfg.checkpoint;
  if (opt.resume && fs::exists(ckpt_path)) {
    const auto ck = load_checkpoint(ckpt_path);
    model = model_from_checkpoint(ck, &cfg.model);
    adam = Adam(model.params(), cfg.optimizer.adam);
    adam.restore(ck);
    res.start_step = ck.meta.value("step", std::size_t{0});
    spdlog::info("resuming from {} at step {}", ckpt_path.string(), res.start_step);
  }

  BatchStream stream(corpus, cfg.optimizer.segment_s, cfg.optimizer.batch, cfg.seed ^ kStreamSalt);
  stream.skip(res.start_step);

  const std::string header = log_header(cfg);
  const fs::path log_path = cfg.log;
  ensure_parent(log_path);
  if (res.start_step > 0 && fs::exists(log_path)) {
    truncate_log(log_path, res.start_step, header);
  } else {
    write_file(log_path, header);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open log " + log_path.string());

  spdlog::info("variant: {}", cfg.model.variant());
  spdlog::info("{} parameters, {} steps of batch {} x {} s", model.parameter_count(),
               cfg.optimizer.steps, cfg.optimizer.batch, cfg.optimizer.segment_s);

  std::size_t last_saved = res.start_step;
  if (res.start_step == 0) {
    // Step 0 is the initialisation; a crash before the first periodic save
    // still leaves a loadable checkpoint behind.
    save_checkpoint(ckpt_path, make_checkpoint(model, &adam, 0));
  }
  for (std::size_t step = res.start_step; step < cfg.optimizer.steps; ++step) {
    const std::size_t n = step + 1;
    auto batch = stream.next();
    model.params().zero_grad();
    auto out = model.forward(batch.noisy, true);
    auto loss = l_demucs(out.heads, out.average, batch.clean, loss_cfg);
    double total = loss.report.total;
    if (opt.poison_step == n) total = std::nan("");
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at step " + std::to_string(n) +
                         "; last good checkpoint is " + ckpt_path.string() + " (step " +
                         std::to_string(last_saved) + ")");
    }
    ag::backward(loss.total);
    if (!all_finite(model.params())) {
      throw NumericError("non-finite gradient at step " + std::to_string(n) +
                         "; last good checkpoint is " + ckpt_path.string() + " (step " +
                         std::to_string(last_saved) + ")");
    }
    adam.step();
    log << loss.report.to_json(n).dump() << "\n";
    log.flush();
    res.reports.push_back(loss.report);
    spdlog::debug("step {} total {:.6f}", n, total);
    if (cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0) {
      save_checkpoint(ckpt_path, make_checkpoint(model, &adam, n));
      last_saved = n;
    }
  }
  res.final_step = std::max(res.start_step, cfg.optimizer.steps);
  if (last_saved != res.final_step || res.final_step == 0) {
    save_checkpoint(ckpt_path, make_checkpoint(model, &adam, res.final_step));
  }
  return res;
}

std::vector<fs::path> run_enhance(const fs::path& checkpoint, const fs::path& in,
                                  const fs::path& out, bool emit_heads,
                                  const ModelConfig* expected) {
  auto model = model_from_checkpoint(load_checkpoint(checkpoint), expected);
  if (emit_heads && !model.config().mrd_enabled) {
    throw InvalidArgument("--emit-heads needs a checkpoint of an MRD model, got " +
                          model.config().variant());
  }
  const auto noisy = wav_read(in);
  const auto result = model.enhance(noisy);
  ensure_parent(out);
  std::vector<fs::path> written{out};
  wav_write(out, result.average);
  if (emit_heads) {
    for (std::size_t h = 0; h < result.heads.size(); ++h) {
      const fs::path p = out.parent_path() /
                         (out.stem().string() + ".head" + std::to_string(h + 1) + ".wav");
      wav_write(p, result.heads[h]);
      written.push_back(p);
    }
  }
  return written;
}

namespace {

std::set<std::string> wav_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") {
      names.insert(e.path().filename().string());
    }
  }
  return names;
}

std::string cell(double v) { return nlohmann::json(v).dump(); }
std::string cell(const std::optional<double>& v) { return v ? cell(*v) : "NA"; }

std::string row_text(const std::string& name, const MetricReport& r) {
  return name + "\t" + cell(r.segsnr) + "\t" + cell(r.llr) + "\t" + cell(r.wss) + "\t" +
         cell(r.stoi) + "\t" + cell(r.pesq) + "\t" + cell(r.csig) + "\t" + cell(r.cbak) + "\t" +
         cell(r.covl) + "\n";
}

}  // namespace

EvalResult run_evaluate(const fs::path& ref_dir, const fs::path& deg_dir, const EvalOptions& opt) {
  if (opt.composite && !opt.pesq_sidecar) {
    throw InvalidArgument("composite measures need --pesq-sidecar (PESQ is not computed here)");
  }
  nlohmann::json sidecar = nlohmann::json::object();
  if (opt.pesq_sidecar) {
    std::ifstream in(*opt.pesq_sidecar);
    if (!in) throw IoError("cannot open PESQ sidecar " + opt.pesq_sidecar->string());
    try {
      sidecar = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("PESQ sidecar is not valid JSON: " + std::string(e.what()));
    }
    if (!sidecar.is_object()) throw InvalidArgument("PESQ sidecar must map file names to values");
  }
  const auto refs = wav_names(ref_dir), degs = wav_names(deg_dir);
  EvalResult res;
  for (const auto& n : refs) {
    if (!degs.count(n)) res.unpaired.push_back((ref_dir / n).string());
  }
  for (const auto& n : degs) {
    if (!refs.count(n)) res.unpaired.push_back((deg_dir / n).string());
  }
  for (const auto& n : refs) {
    if (!degs.count(n)) continue;
    std::optional<double> pesq;
    if (sidecar.contains(n)) {
      if (!sidecar.at(n).is_number()) throw InvalidArgument("PESQ sidecar value for " + n + " is not a number");
      pesq = sidecar.at(n).get<double>();
    } else if (opt.composite) {
      throw InvalidArgument("PESQ sidecar has no entry for " + n);
    }
    const auto ref = wav_read(ref_dir / n), deg = wav_read(deg_dir / n);
    res.rows.push_back({n, evaluate_pair(ref, deg, pesq, opt.composite ? &opt.coefficients : nullptr)});
  }
  if (!res.rows.empty()) {
    std::vector<MetricReport> rows;
    for (const auto& r : res.rows) rows.push_back(r.report);
    res.mean = mean_report(rows);
  }
  return res;
}

std::string eval_report_text(const EvalResult& r) {
  std::string s = "file";
  for (const auto& c : metric_columns()) s += "\t" + c;
  s += "\n";
  for (const auto& row : r.rows) s += row_text(row.file, row.report);
  if (r.mean) s += row_text("mean", *r.mean);
  return s;
}

}  // namespace msd
