// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the nsvae binary. The binary path arrives via the
// NSVAE_BIN environment variable (set by ctest); every invocation goes
// through the shell with stdout/stderr captured to files.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsvae/data.hpp"
#include "nsvae/eval.hpp"
#include "nsvae/spectral.hpp"
#include "nsvae/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsvae;

namespace {

const std::string& bin() {
  static const std::string b = [] {
    const char* p = std::getenv("NSVAE_BIN");
    REQUIRE_MESSAGE(p != nullptr, "NSVAE_BIN must point at the nsvae binary");
    return std::string(p);
  }();
  return b;
}

const fs::path& scratch_root() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "nsvae_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs "<env> nsvae <args>" through the shell.
RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const fs::path out = scratch_root() / ("stdout_" + std::to_string(counter));
  const fs::path err = scratch_root() / ("stderr_" + std::to_string(counter));
  ++counter;
  const std::string cmd = env_prefix + (env_prefix.empty() ? "" : " ") + bin() + " " + args +
                          " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

std::string q(const fs::path& p) { return p.string(); }

// Tiny corpus and micro network so the whole chain runs in seconds.
const fs::path& corpus_dir() {
  static const fs::path dir = [] {
    const fs::path d = scratch_root() / "corpus";
    const RunResult r = run_cli("synth-data --out " + q(d) +
                                " --seed 7 --count-pretrain 2 --count-nsvae 2"
                                " --count-validation 2 --count-test 2"
                                " --min-seconds 0.3 --max-seconds 0.5");
    REQUIRE(r.exit_code == 0);
    return d;
  }();
  return dir;
}

const fs::path& micro_config() {
  static const fs::path cfg = [] {
    const fs::path p = scratch_root() / "micro.json";
    const json j = {{"network",
                     {{"channels", {1, 1, 2, 2, 2, 2}},
                      {"latent_dim", 3},
                      {"lstm_hidden", 4},
                      {"bins", 65}}},
                    {"stft", {{"frame_length", 128}, {"hop", 96}, {"fft_length", 128}}},
                    {"max_epochs", 2},
                    {"batch_size", 2}};
    std::ofstream f(p);
    f << j.dump(2);
    return p;
  }();
  return cfg;
}

struct Chain {
  fs::path cvae, nvae, nsvae, finetune;  // run directories, bundles under <dir>/best
};

const Chain& chain() {
  static const Chain c = [] {
    Chain ch;
    const std::string corp = q(corpus_dir());
    const std::string cfg = " --config " + q(micro_config());
    ch.cvae = scratch_root() / "runs" / "cvae";
    ch.nvae = scratch_root() / "runs" / "nvae";
    ch.nsvae = scratch_root() / "runs" / "nsvae";
    ch.finetune = scratch_root() / "runs" / "finetune";
    RunResult r = run_cli("pretrain --kind speech --corpus " + corp + " --out " + q(ch.cvae) +
                          cfg + " --seed 5");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("pretrain --kind noise --corpus " + corp + " --out " + q(ch.nvae) + cfg +
                " --seed 6");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("train-nsvae --corpus " + corp + " --cvae " + q(ch.cvae / "best") + " --nvae " +
                q(ch.nvae / "best") + " --out " + q(ch.nsvae) + cfg + " --seed 7");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("finetune --mode cf --corpus " + corp + " --nsvae " + q(ch.nsvae / "best") +
                " --cvae " + q(ch.cvae / "best") + " --out " + q(ch.finetune) + cfg +
                " --seed 8");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    return ch;
  }();
  return c;
}

// Byte comparison over every file in a directory tree, by relative path.
bool trees_equal(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) ra.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rb.push_back(fs::relative(e.path(), b));
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  if (ra != rb) return false;
  for (const fs::path& rel : ra)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

}  // namespace

TEST_CASE("corpus synthesis is reproducible per seed") {
  const fs::path again = scratch_root() / "corpus_again";
  const fs::path other = scratch_root() / "corpus_other";
  const std::string sizes =
      " --count-pretrain 2 --count-nsvae 2 --count-validation 2 --count-test 2"
      " --min-seconds 0.3 --max-seconds 0.5";
  REQUIRE(run_cli("synth-data --out " + q(again) + " --seed 7" + sizes).exit_code == 0);
  REQUIRE(run_cli("synth-data --out " + q(other) + " --seed 8" + sizes).exit_code == 0);
  CHECK(trees_equal(corpus_dir(), again));
  CHECK_FALSE(trees_equal(corpus_dir(), other));
}

TEST_CASE("every training stage writes its bundle, log and resolved config") {
  const Chain& ch = chain();
  for (const fs::path& dir : {ch.cvae, ch.nvae, ch.nsvae, ch.finetune}) {
    CAPTURE(dir.string());
    CHECK(fs::exists(dir / "best"));
    CHECK(fs::exists(dir / "run_log.jsonl"));
    CHECK(fs::exists(dir / "config.json"));
    const TrainingRunConfig cfg =
        TrainingRunConfig::from_json(json::parse(slurp(dir / "config.json")));
    CHECK(cfg.network.latent_dim == 3);
    CHECK(cfg.max_epochs == 2);
    const RunLog log = RunLog::load(dir / "run_log.jsonl");
    CHECK(log.config_hash == cfg.config_hash());
    CHECK(log.epochs.size() == 2);
  }
  CHECK(fs::exists(ch.cvae / "best" / "encoder" / "manifest.json"));
  CHECK(fs::exists(ch.cvae / "best" / "decoder" / "manifest.json"));
  CHECK(fs::exists(ch.nsvae / "best" / "encoder" / "manifest.json"));
  CHECK(fs::exists(ch.finetune / "best" / "decoder" / "manifest.json"));
}

TEST_CASE("rerunning from the resolved config reproduces the run log") {
  const Chain& ch = chain();
  const fs::path rerun = scratch_root() / "runs" / "cvae_rerun";
  const RunResult r = run_cli("pretrain --kind speech --corpus " + q(corpus_dir()) + " --out " +
                              q(rerun) + " --config " + q(ch.cvae / "config.json"));
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const RunLog a = RunLog::load(ch.cvae / "run_log.jsonl");
  const RunLog b = RunLog::load(rerun / "run_log.jsonl");
  REQUIRE(a.epochs.size() == b.epochs.size());
  CHECK(a.config_hash == b.config_hash);
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    CHECK(a.epochs[i].val_loss == b.epochs[i].val_loss);
    CHECK(a.epochs[i].lr == b.epochs[i].lr);
  }
}

TEST_CASE("enhance preserves duration and records its invocation") {
  const Chain& ch = chain();
  const CorpusManifest m = CorpusManifest::load(corpus_dir());
  const CorpusEntry* e = m.select("speech", "test").front();
  const fs::path in = m.root / e->path;
  const fs::path out = scratch_root() / "enhanced.wav";
  const RunResult r = run_cli("enhance " + q(in) + " " + q(out) + " --encoder " +
                              q(ch.nsvae / "best") + " --decoder " + q(ch.finetune / "best"));
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  REQUIRE(fs::exists(out));
  const TimeSignal x = read_wav(in.string());
  const TimeSignal y = read_wav(out.string());
  CHECK(y.samples.size() == x.samples.size());
  CHECK(y.sample_rate_hz == x.sample_rate_hz);
  const json rec = json::parse(slurp(fs::path(out.string() + ".json")));
  CHECK(rec.at("input").get<std::string>() == in.string());
  CHECK(rec.at("sample_latent").get<bool>() == false);
}

TEST_CASE("evaluate writes parseable reports with one row per test utterance") {
  const Chain& ch = chain();
  const fs::path out = scratch_root() / "eval_report";
  const RunResult r =
      run_cli("evaluate --corpus " + q(corpus_dir()) + " --split test --encoder " +
              q(ch.nsvae / "best") + " --decoder " + q(ch.finetune / "best") +
              " --snr 0 --seed 3 --out " + q(out));
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const CorpusManifest m = CorpusManifest::load(corpus_dir());
  const std::size_t n = m.select("speech", "test").size();
  for (const char* name : {"enhanced.csv", "unprocessed.csv"}) {
    const std::vector<MetricRow> rows = parse_csv(slurp(out / name));
    CHECK(rows.size() == n);
  }
  CHECK(fs::exists(out / "report.txt"));
  CHECK(fs::exists(out / "config.json"));
  CHECK(r.out.find("mean improvement") != std::string::npos);
}

TEST_CASE("diagnose prints the diagnostics as json") {
  const Chain& ch = chain();
  const RunResult r = run_cli("diagnose --bundle " + q(ch.cvae / "best") + " --corpus " +
                              q(corpus_dir()) + " --split validation");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const json d = json::parse(r.out);
  CHECK(d.at("utterances").get<int>() == 2);
  CHECK(d.at("mean_kll").get<double>() >= 0.0);
  CHECK(std::isfinite(d.at("mean_recon_si_sdr_db").get<double>()));
}

TEST_CASE("error categories map to distinct exit codes") {
  const std::string corp = q(corpus_dir());
  const fs::path bad = scratch_root() / "bad.json";
  std::ofstream(bad) << "{\"bogus_key\": 1}";

  RunResult r = run_cli("pretrain --kind speech --corpus " + corp + " --out " +
                        q(scratch_root() / "x1") + " --config " + q(bad));
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("nsvae: error: config: ") == 0);
  CHECK(r.err.find('\n') == r.err.size() - 1);  // exactly one line

  r = run_cli("pretrain --kind speech --corpus " + corp + " --out " + q(scratch_root() / "x2") +
              " --config " + q(micro_config()) + " --set nope=1");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("unknown config key 'nope'") != std::string::npos);

  r = run_cli("pretrain --kind speech --corpus " + corp + " --out " + q(scratch_root() / "x3") +
              " --config " + q(micro_config()) + " --set stage=train_nsvae");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("conflicts") != std::string::npos);

  const CorpusManifest m = CorpusManifest::load(corpus_dir());
  const fs::path wav = m.root / m.select("speech", "test").front()->path;
  r = run_cli("enhance " + q(wav) + " out.wav --encoder " + q(scratch_root() / "nowhere") +
              " --decoder " + q(scratch_root() / "nowhere"));
  CHECK(r.exit_code == 3);
  CHECK(r.err.find("nsvae: error: checkpoint: ") == 0);

  r = run_cli("pretrain --kind speech --corpus " + corp + " --out " + q(scratch_root() / "x4") +
              " --config " + q(micro_config()) +
              " --set grad_clip=false --set lr=1e150 --set max_epochs=5");
  CHECK(r.exit_code == 4);
  CHECK(r.err.find("nsvae: error: divergence: ") == 0);

  r = run_cli("no-such-subcommand");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("nsvae: error: usage: ") == 0);
}

TEST_CASE("help documents every config key with its default") {
  const RunResult r = run_cli("pretrain --help");
  REQUIRE(r.exit_code == 0);
  const json defaults = TrainingRunConfig().to_json();
  // Every leaf key must be present; spot-check the values that matter most.
  for (const char* key :
       {"weights.beta", "weights.alpha", "lr", "disc_lr", "batch_size", "lr_halving_patience",
        "early_stop_patience", "network.latent_dim", "stft.hop", "snr_lo_db"}) {
    CAPTURE(key);
    CHECK(r.out.find(std::string("  ") + key + " = ") != std::string::npos);
  }
  CHECK(r.out.find("weights.beta = 0.01") != std::string::npos);
  CHECK(r.out.find("weights.alpha = 1.0") != std::string::npos);
  CHECK(r.out.find("lr = 0.0003") != std::string::npos);
  CHECK(r.out.find("disc_lr = 8e-05") != std::string::npos);
  CHECK(r.out.find("batch_size = 15") != std::string::npos);
  CHECK(r.out.find("lr_halving_patience = 3") != std::string::npos);
  CHECK(r.out.find("early_stop_patience = 20") != std::string::npos);
  CHECK(r.out.find("network.latent_dim = 128") != std::string::npos);
  CHECK(defaults.at("weights").at("beta").get<double>() == 0.01);
}

TEST_CASE("desk profile layers under the config file and overrides") {
  // The file pins the micro analysis setup but leaves channels to the profile.
  const fs::path part = scratch_root() / "partial.json";
  const json j = {{"network", {{"latent_dim", 3}, {"lstm_hidden", 4}, {"bins", 65}}},
                  {"stft", {{"frame_length", 128}, {"hop", 96}, {"fft_length", 128}}},
                  {"batch_size", 2}};
  std::ofstream(part) << j.dump(2);
  const fs::path out = scratch_root() / "runs" / "desk";
  const RunResult r =
      run_cli("pretrain --kind speech --corpus " + q(corpus_dir()) + " --out " + q(out) +
              " --profile desk --config " + q(part) + " --set max_epochs=1");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const TrainingRunConfig cfg =
      TrainingRunConfig::from_json(json::parse(slurp(out / "config.json")));
  CHECK(cfg.network.channels == std::vector<int>{8, 16, 32, 32, 64, 64});
  CHECK(cfg.network.bins == 65);
  CHECK(cfg.max_epochs == 1);  // --set wins over the profile's 50
}

TEST_CASE("beta sweep emits four rows in grid order and reuses finished runs") {
  const fs::path out = scratch_root() / "sweep";
  const std::string args = "sweep --corpus " + q(corpus_dir()) + " --out " + q(out) +
                           " --grid beta --config " + q(micro_config());
  RunResult r = run_cli(args);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const std::string csv = slurp(out / "sweep_beta.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "beta,cvae_recon_si_sdr_db,cvae_kll,nvae_recon_si_sdr_db,nvae_kll");
  std::vector<std::string> beta_col;
  while (std::getline(lines, line))
    if (!line.empty()) beta_col.push_back(line.substr(0, line.find(',')));
  CHECK(beta_col == std::vector<std::string>{"1", "0.1", "0.01", "0.001"});
  CHECK(fs::exists(out / "sweep.txt"));
  CHECK(fs::exists(out / "config.json"));

  r = run_cli(args);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("reusing") != std::string::npos);
  CHECK(slurp(out / "sweep_beta.csv") == csv);
}

TEST_CASE("relative outputs land under the output root variable") {
  const fs::path root = scratch_root() / "rooted";
  const RunResult r = run_cli("synth-data --out sub/corpus --seed 9"
                              " --count-pretrain 1 --count-nsvae 1 --count-validation 1"
                              " --count-test 1 --min-seconds 0.3 --max-seconds 0.4",
                              "NSVAE_OUTPUT_ROOT=" + q(root));
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  CHECK(fs::exists(root / "sub" / "corpus" / "manifest.json"));
}
