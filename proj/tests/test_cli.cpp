// Copyright 2026 The msdemucs Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <regex>

#include "msdemucs/data.hpp"
#include "msdemucs/train.hpp"

using namespace msd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("msd_" + tag + "_" + std::to_string(Rng(std::random_device{}()).next() % 1000000007));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Run {
  int status;
  std::string out, err;
};

Run run(const TempDir& dir, const std::string& args) {
  const auto out = dir.path / "stdout.txt", err = dir.path / "stderr.txt";
  const std::string cmd = "cd '" + dir.path.string() + "' && MSDEMUCS_LOG_LEVEL=warn '" +
                          MSDEMUCS_CLI + "' " + args + " > '" + out.string() + "' 2> '" +
                          err.string() + "'";
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

bool single_error_line(const std::string& err, const std::string& code) {
  static const std::regex line(R"(msdemucs: error code=([a-z-]+) message="([^"\\]|\\.)*"\n)");
  std::smatch m;
  return std::regex_match(err, m, line) && m[1] == code;
}

void write_config(const fs::path& p, std::size_t steps, bool mre, bool mrd) {
  ExperimentConfig c;
  c.seed = 3;
  c.model.seed = 3;
  c.model.base_channels = 4;
  c.model.mre_enabled = mre;
  c.model.mrd_enabled = mrd;
  c.optimizer.steps = steps;
  c.optimizer.batch = 1;
  c.optimizer.segment_s = 0.5;
  c.synth.count = 2;
  c.synth.output = "corpus";
  c.checkpoint = "run/model.ckpt";
  c.log = "run/train.log";
  std::ofstream(p) << experiment_config_to_json(c).dump(2);
}

}  // namespace

TEST_CASE("usage errors exit 1 with one machine-readable line") {
  TempDir dir("cli_usage");
  auto r = run(dir, "");
  CHECK(r.status == 1);
  CHECK(single_error_line(r.err, "usage"));
  r = run(dir, "train");
  CHECK(r.status == 1);
  CHECK(single_error_line(r.err, "usage"));
  r = run(dir, "train --config c.json --mre=maybe");
  CHECK(r.status == 1);
  CHECK(single_error_line(r.err, "usage"));
  r = run(dir, "--help");
  CHECK(r.status == 0);
  CHECK(r.out.find("synth-data") != std::string::npos);
}

TEST_CASE("runtime errors exit 2") {
  TempDir dir("cli_runtime");
  auto r = run(dir, "train --config missing.json");
  CHECK(r.status == 2);
  CHECK(single_error_line(r.err, "io-error"));

  std::ofstream(dir.path / "future.json") << R"({"schema_version": 99})";
  r = run(dir, "synth-data --config future.json");
  CHECK(r.status == 2);
  CHECK(single_error_line(r.err, "version-error"));

  std::ofstream(dir.path / "bad.json") << R"({"schema_version": 1, "loss": {"alpha": 3}})";
  r = run(dir, "synth-data --config bad.json");
  CHECK(r.status == 1);
  CHECK(single_error_line(r.err, "invalid-argument"));
}

TEST_CASE("synth, train, enhance and evaluate end to end") {
  TempDir dir("cli_e2e");
  write_config(dir.path / "c.json", 2, true, true);

  auto r = run(dir, "synth-data --config c.json");
  REQUIRE(r.status == 0);
  CHECK(fs::exists(dir.path / "corpus" / "manifest.tsv"));

  r = run(dir, "train --config c.json --mre=false --mrd=false --steps 1");
  REQUIRE(r.status == 0);
  CHECK(slurp(dir.path / "run" / "train.log").find("# variant: demucs\n") != std::string::npos);

  // The saved plain checkpoint refuses an MRE-MRD continuation.
  r = run(dir, "train --config c.json");
  CHECK(r.status == 2);
  CHECK(single_error_line(r.err, "version-error"));

  r = run(dir, "train --config c.json --fresh --alpha 0.7");
  REQUIRE(r.status == 0);
  const auto log = slurp(dir.path / "run" / "train.log");
  CHECK(log.find("# variant: demucs-mre-mrd\n") != std::string::npos);
  CHECK(log.find("\"alpha\":0.7") != std::string::npos);

  r = run(dir, "enhance run/model.ckpt corpus/noisy/0000.wav out/e.wav --emit-heads");
  REQUIRE(r.status == 0);
  for (const char* f : {"e.wav", "e.head1.wav", "e.head2.wav", "e.head3.wav"}) {
    CHECK(fs::exists(dir.path / "out" / f));
  }
  CHECK(wav_read(dir.path / "out" / "e.wav").size() ==
        wav_read(dir.path / "corpus" / "noisy" / "0000.wav").size());

  r = run(dir, "enhance run/model.ckpt corpus/noisy/0000.wav out/f.wav --config c.json --mrd=false");
  CHECK(r.status == 2);
  CHECK(single_error_line(r.err, "version-error"));

  r = run(dir, "evaluate corpus/clean corpus/clean");
  REQUIRE(r.status == 0);
  CHECK(r.out.rfind("file\tsegsnr\tllr\twss\tstoi\tpesq\tcsig\tcbak\tcovl\n", 0) == 0);
  CHECK(r.out.find("0000.wav\t35.0\t") != std::string::npos);
  CHECK(r.out.find("\nmean\t35.0\t") != std::string::npos);

  r = run(dir, "evaluate corpus/clean corpus/noisy --composite");
  CHECK(r.status == 1);
  CHECK(single_error_line(r.err, "invalid-argument"));

  fs::copy_file(dir.path / "out" / "e.wav", dir.path / "corpus" / "noisy" / "extra.wav");
  r = run(dir, "evaluate corpus/clean corpus/noisy --report report.tsv");
  CHECK(r.status == 2);
  CHECK(single_error_line(r.err, "unpaired-file"));
  CHECK(slurp(dir.path / "report.tsv").find("0001.wav") != std::string::npos);
}
