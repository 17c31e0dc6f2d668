// SPDX-License-Identifier: Apache-2.0
//
// Single entry point: corpus synthesis, the three training stages,
// enhancement, evaluation, latent diagnostics and the beta/alpha sweep.
// Every run writes its resolved configuration next to its outputs; relative
// output paths resolve under $NSVAE_OUTPUT_ROOT when it is set.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nsvae/common.hpp"
#include "nsvae/data.hpp"
#include "nsvae/eval.hpp"
#include "nsvae/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nsvae;

namespace {

// Exit codes: 0 success, 2 configuration, 3 missing/bad checkpoint,
// 4 training divergence, 1 anything else. Errors are one line on stderr.
constexpr int kExitConfig = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitDiverged = 4;

fs::path resolve_out(const fs::path& p) {
  const char* root = std::getenv("NSVAE_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0' && p.is_relative()) return fs::path(root) / p;
  return p;
}

json parse_json_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot open config file: " + p.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + p.string());
  return j;
}

void write_json_file(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  f << j.dump(2) << "\n";
  if (!f.good()) throw InvalidInput("cannot write " + p.string());
}

// Rejects any key that does not exist in the default config skeleton.
void check_keys(const json& user, const json& skel, const std::string& prefix) {
  if (!user.is_object())
    throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) +
                      "' must be a JSON object");
  for (const auto& [k, v] : user.items()) {
    if (!skel.contains(k)) throw ConfigError("unknown config key '" + prefix + k + "'");
    if (skel.at(k).is_object()) check_keys(v, skel.at(k), prefix + k + ".");
  }
}

// Applies one dotted-key override such as weights.beta=0.1. Values parse as
// JSON when possible and fall back to strings.
void apply_override(json& cfg, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value, got '" + kv + "'");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);

  json* node = &cfg;
  std::size_t start = 0;
  std::string walked;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    walked += part;
    if (!node->contains(part)) throw ConfigError("unknown config key '" + walked + "'");
    if (dot == std::string::npos) {
      if (node->at(part).is_object())
        throw ConfigError("config key '" + walked + "' is a section, not a value");
      json value = json::parse(raw, nullptr, false);
      if (value.is_discarded()) value = raw;
      (*node)[part] = value;
      return;
    }
    node = &node->at(part);
    walked += '.';
    start = dot + 1;
  }
}

void apply_profile(TrainingRunConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.network.channels = {8, 16, 32, 32, 64, 64};
    cfg.max_epochs = 50;
  } else if (profile != "paper") {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string profile = "paper";
  std::optional<std::uint64_t> seed;
};

// defaults -> profile -> config file -> --set overrides -> --seed.
TrainingRunConfig build_config(Stage stage, const ConfigFlags& flags) {
  TrainingRunConfig cfg;
  cfg.stage = stage;
  apply_profile(cfg, flags.profile);
  json j = cfg.to_json();
  if (!flags.config_path.empty()) {
    const json file = parse_json_file(flags.config_path);
    check_keys(file, j, "");
    j.merge_patch(file);
  }
  for (const std::string& kv : flags.sets) apply_override(j, kv);
  if (flags.seed) j["seed"] = *flags.seed;
  if (j.at("stage").get<std::string>() != stage_name(stage))
    throw ConfigError("config stage '" + j.at("stage").get<std::string>() +
                      "' conflicts with this subcommand (" + stage_name(stage) + ")");
  TrainingRunConfig out = TrainingRunConfig::from_json(j);
  out.validate();
  return out;
}

// Adds the shared config/override/profile/seed options to a training-style
// subcommand and documents every config key with its default.
void add_config_flags(CLI::App* sc, ConfigFlags& flags) {
  sc->add_option("--config", flags.config_path, "JSON config file (keys listed below)");
  sc->add_option("--set", flags.sets, "Dotted-key override, e.g. --set weights.beta=0.1")
      ->take_all();
  sc->add_option("--profile", flags.profile,
                 "desk (channels 8..64, 50 epochs) or paper (full-size defaults)")
      ->check(CLI::IsMember({"desk", "paper"}));
  sc->add_option_function<std::uint64_t>(
      "--seed", [&flags](const std::uint64_t& s) { flags.seed = s; }, "Override the run seed");

  std::string keys = "Config keys and defaults:\n";
  const json defaults = TrainingRunConfig().to_json();
  const std::function<void(const json&, const std::string&)> walk =
      [&](const json& node, const std::string& prefix) {
        for (const auto& [k, v] : node.items()) {
          if (v.is_object()) {
            walk(v, prefix + k + ".");
          } else {
            keys += "  " + prefix + k + " = " + v.dump();
            if (prefix.empty() && k == "stage") keys += "  (set by the subcommand)";
            keys += "\n";
          }
        }
      };
  walk(defaults, "");
  sc->footer(keys);
}

int decode_exit(const std::exception& e) {
  if (dynamic_cast<const TrainingDiverged*>(&e) != nullptr) return kExitDiverged;
  if (dynamic_cast<const CheckpointError*>(&e) != nullptr) return kExitCheckpoint;
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const InvalidInput*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const json::exception*>(&e) != nullptr) return kExitConfig;
  return 1;
}

const char* category_name(int code) {
  switch (code) {
    case kExitConfig: return "config";
    case kExitCheckpoint: return "checkpoint";
    case kExitDiverged: return "divergence";
    default: return "runtime";
  }
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  f << text;
  if (!f.good()) throw InvalidInput("cannot write " + p.string());
}

// ---------------------------------------------------------------------------
// subcommands

struct SynthArgs {
  std::string out = "corpus";
  std::string profile = "paper";
  std::uint64_t seed = SynthConfig{}.seed;
  bool seed_given = false;
  double min_seconds = -1.0, max_seconds = -1.0, target_rms = -1.0;
  int count_pretrain = -1, count_nsvae = -1, count_validation = -1, count_test = -1;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  if (a.profile == "desk") {
    cfg.min_seconds = 1.0;
    cfg.max_seconds = 2.5;
    cfg.count_pretrain = 24;
    cfg.count_nsvae = 20;
    cfg.count_validation = 6;
    cfg.count_test = 6;
  } else if (a.profile != "paper") {
    throw ConfigError("unknown profile '" + a.profile + "' (expected desk or paper)");
  }
  cfg.seed = a.seed;
  if (a.min_seconds >= 0.0) cfg.min_seconds = a.min_seconds;
  if (a.max_seconds >= 0.0) cfg.max_seconds = a.max_seconds;
  if (a.target_rms >= 0.0) cfg.target_rms = a.target_rms;
  if (a.count_pretrain >= 0) cfg.count_pretrain = a.count_pretrain;
  if (a.count_nsvae >= 0) cfg.count_nsvae = a.count_nsvae;
  if (a.count_validation >= 0) cfg.count_validation = a.count_validation;
  if (a.count_test >= 0) cfg.count_test = a.count_test;

  const fs::path out = resolve_out(a.out);
  const CorpusManifest m = synth_corpus(out, cfg);
  write_json_file(out / "synth_config.json",
                  {{"profile", a.profile},
                   {"seed", cfg.seed},
                   {"sample_rate_hz", cfg.sample_rate_hz},
                   {"min_seconds", cfg.min_seconds},
                   {"max_seconds", cfg.max_seconds},
                   {"count_pretrain", cfg.count_pretrain},
                   {"count_nsvae", cfg.count_nsvae},
                   {"count_validation", cfg.count_validation},
                   {"count_test", cfg.count_test},
                   {"target_rms", cfg.target_rms}});
  std::printf("synth-data: %zu utterances under %s\n", m.entries.size(), out.string().c_str());
  return 0;
}

int run_pretrain(const std::string& kind, const std::string& corpus_dir, const std::string& out,
                 const ConfigFlags& flags) {
  const Stage stage = kind == "speech" ? Stage::pretrain_cvae : Stage::pretrain_nvae;
  const TrainingRunConfig cfg = build_config(stage, flags);
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const TrainOutcome r = pretrain_vae(cfg, corpus, kind, resolve_out(out));
  std::printf("pretrain %s: best validation loss %.6f at epoch %d, checkpoint %s\n",
              kind.c_str(), r.best_val_loss, r.best_epoch, r.checkpoint_dir.string().c_str());
  return 0;
}

int run_train_nsvae(const std::string& corpus_dir, const std::string& cvae,
                    const std::string& nvae, const std::string& out, const ConfigFlags& flags) {
  const TrainingRunConfig cfg = build_config(Stage::train_nsvae, flags);
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const TrainOutcome r = train_nsvae(cfg, corpus, cvae, nvae, resolve_out(out));
  std::printf("train-nsvae: best validation loss %.6f at epoch %d, checkpoint %s\n",
              r.best_val_loss, r.best_epoch, r.checkpoint_dir.string().c_str());
  return 0;
}

int run_finetune(const std::string& mode, const std::string& corpus_dir,
                 const std::string& nsvae_dir, const std::string& cvae, const std::string& out,
                 const ConfigFlags& flags) {
  if (mode != "cf" && mode != "adv")
    throw ConfigError("finetune mode must be cf or adv, got '" + mode + "'");
  const Stage stage = mode == "cf" ? Stage::finetune_cf : Stage::finetune_adv;
  const TrainingRunConfig cfg = build_config(stage, flags);
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const TrainOutcome r = finetune_decoder(cfg, corpus, nsvae_dir, cvae, resolve_out(out));
  std::printf("finetune %s: best validation loss %.6f at epoch %d, checkpoint %s\n", mode.c_str(),
              r.best_val_loss, r.best_epoch, r.checkpoint_dir.string().c_str());
  return 0;
}

int run_enhance(const std::string& in_wav, const std::string& out_wav, const std::string& enc,
                const std::string& dec, bool sample, std::uint64_t sample_seed) {
  EnhanceOptions opts;
  opts.sample_latent = sample;
  opts.sample_seed = sample_seed;
  const TimeSignal noisy = read_wav(in_wav);
  const TimeSignal out = enhance(enc, dec, noisy, opts);
  const fs::path out_path = resolve_out(out_wav);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_wav(out_path.string(), out);
  write_json_file(fs::path(out_path.string() + ".json"),
                  {{"input", in_wav},
                   {"encoder", enc},
                   {"decoder", dec},
                   {"sample_latent", sample},
                   {"sample_seed", sample_seed}});
  std::printf("enhance: %zu samples -> %s\n", out.samples.size(), out_path.string().c_str());
  return 0;
}

int run_evaluate(const std::string& corpus_dir, const std::string& split, const std::string& enc,
                 const std::string& dec, double snr_db, std::uint64_t seed,
                 const std::string& out) {
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const EnhancementEval e = evaluate_enhancement(corpus, split, enc, dec, snr_db, seed);
  const fs::path dir = resolve_out(out);
  fs::create_directories(dir);
  write_text_file(dir / "enhanced.csv", render_csv(e.enhanced));
  write_text_file(dir / "unprocessed.csv", render_csv(e.unprocessed));
  std::string text = "enhanced\n" + render_text(e.enhanced) + "\nunprocessed\n" +
                     render_text(e.unprocessed) + "\nmean improvement " +
                     fmt4(e.enhanced.mean_si_sdr_db - e.unprocessed.mean_si_sdr_db) + " dB\n";
  write_text_file(dir / "report.txt", text);
  write_json_file(dir / "config.json", {{"corpus", corpus_dir},
                                        {"split", split},
                                        {"encoder", enc},
                                        {"decoder", dec},
                                        {"snr_db", snr_db},
                                        {"seed", seed}});
  std::fputs(text.c_str(), stdout);
  return 0;
}

int run_diagnose(const std::string& bundle, const std::string& corpus_dir,
                 const std::string& split, const std::string& out) {
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const LatentDiagnostics d = latent_diagnostics(bundle, corpus, split);
  const std::string text = d.to_json().dump(2) + "\n";
  if (!out.empty()) {
    const fs::path dir = resolve_out(out);
    write_json_file(dir / "diagnostics.json", d.to_json());
    write_json_file(dir / "config.json",
                    {{"bundle", bundle}, {"corpus", corpus_dir}, {"split", split}});
  }
  std::fputs(text.c_str(), stdout);
  return 0;
}

// Reuses a finished stage directory when its resolved config hash matches;
// otherwise (re)trains. Returns the bundle directory.
template <typename Runner>
fs::path ensure_stage(const TrainingRunConfig& cfg, const fs::path& dir, Runner&& run) {
  if (fs::exists(dir / "run_log.jsonl") && fs::exists(dir / "best")) {
    const json existing = parse_json_file(dir / "config.json");
    if (TrainingRunConfig::from_json(existing).config_hash() == cfg.config_hash()) {
      std::printf("sweep: reusing %s\n", dir.string().c_str());
      return dir / "best";
    }
  }
  run();
  return dir / "best";
}

int run_sweep(const std::string& corpus_dir, const std::string& out, const std::string& grid,
              const ConfigFlags& flags) {
  if (grid != "beta" && grid != "alpha" && grid != "both")
    throw ConfigError("sweep grid must be beta, alpha or both, got '" + grid + "'");
  const CorpusManifest corpus = CorpusManifest::load(corpus_dir);
  const fs::path root = resolve_out(out);
  fs::create_directories(root);

  // The shared base: every grid point perturbs exactly one weight.
  TrainingRunConfig base = build_config(Stage::pretrain_cvae, flags);
  base.skip_connections_pretrain = false;
  write_json_file(root / "config.json", base.to_json());

  auto pretrain_pair = [&](double beta) {
    const fs::path dir = root / ("beta_" + fmt_g(beta));
    TrainingRunConfig c = base;
    c.weights.beta = beta;
    c.stage = Stage::pretrain_cvae;
    const fs::path cvae = ensure_stage(
        c, dir / "cvae", [&] { pretrain_vae(c, corpus, "speech", dir / "cvae"); });
    c.stage = Stage::pretrain_nvae;
    const fs::path nvae = ensure_stage(
        c, dir / "nvae", [&] { pretrain_vae(c, corpus, "noise", dir / "nvae"); });
    return std::pair<fs::path, fs::path>{cvae, nvae};
  };

  std::string text;
  const std::vector<double> betas{1.0, 0.1, 0.01, 0.001};
  if (grid != "alpha") {
    std::string csv = "beta,cvae_recon_si_sdr_db,cvae_kll,nvae_recon_si_sdr_db,nvae_kll\n";
    text += "beta        cvae_recon_si_sdr_db        cvae_kll  nvae_recon_si_sdr_db        "
            "nvae_kll\n";
    for (double beta : betas) {
      const auto [cvae, nvae] = pretrain_pair(beta);
      const LatentDiagnostics dc = latent_diagnostics(cvae, corpus, "validation");
      const LatentDiagnostics dn = latent_diagnostics(nvae, corpus, "validation");
      csv += fmt_g(beta) + "," + fmt_g(dc.mean_recon_si_sdr_db) + "," + fmt_g(dc.mean_kll) + "," +
             fmt_g(dn.mean_recon_si_sdr_db) + "," + fmt_g(dn.mean_kll) + "\n";
      char line[200];
      std::snprintf(line, sizeof line, "%-10s %21s %15s %21s %15s\n", fmt_g(beta).c_str(),
                    fmt4(dc.mean_recon_si_sdr_db).c_str(), fmt4(dc.mean_kll).c_str(),
                    fmt4(dn.mean_recon_si_sdr_db).c_str(), fmt4(dn.mean_kll).c_str());
      text += line;
    }
    write_text_file(root / "sweep_beta.csv", csv);
  }
  if (grid != "beta") {
    const auto [cvae, nvae] = pretrain_pair(base.weights.beta);
    std::string csv = "alpha,enhanced_si_sdr_db,unprocessed_si_sdr_db\n";
    text += "\nalpha    enhanced_si_sdr_db  unprocessed_si_sdr_db\n";
    for (double alpha : {0.0, 1.0}) {
      const fs::path dir = root / ("alpha_" + fmt_g(alpha));
      TrainingRunConfig c = base;
      c.weights.alpha = alpha;
      c.stage = Stage::train_nsvae;
      const fs::path ns = ensure_stage(
          c, dir / "nsvae", [&] { train_nsvae(c, corpus, cvae, nvae, dir / "nsvae"); });
      c.stage = Stage::finetune_cf;
      const fs::path ft = ensure_stage(
          c, dir / "finetune", [&] { finetune_decoder(c, corpus, ns, cvae, dir / "finetune"); });
      const EnhancementEval e = evaluate_enhancement(corpus, "test", ns, ft, 0.0, base.seed);
      csv += fmt_g(alpha) + "," + fmt_g(e.enhanced.mean_si_sdr_db) + "," +
             fmt_g(e.unprocessed.mean_si_sdr_db) + "\n";
      char line[120];
      std::snprintf(line, sizeof line, "%-8s %19s %22s\n", fmt_g(alpha).c_str(),
                    fmt4(e.enhanced.mean_si_sdr_db).c_str(),
                    fmt4(e.unprocessed.mean_si_sdr_db).c_str());
      text += line;
    }
    write_text_file(root / "sweep_alpha.csv", csv);
  }
  write_text_file(root / "sweep.txt", text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"I-DCCRN-VAE speech enhancement: synthetic corpus, staged training, "
               "enhancement and diagnostics"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* sc_synth = app.add_subcommand("synth-data", "Generate the synthetic corpus");
  sc_synth->add_option("--out", synth.out, "Corpus directory")->capture_default_str();
  sc_synth->add_option("--seed", synth.seed, "Corpus seed")->capture_default_str();
  sc_synth->add_option("--profile", synth.profile, "desk or paper corpus size")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  sc_synth->add_option("--min-seconds", synth.min_seconds, "Shortest utterance");
  sc_synth->add_option("--max-seconds", synth.max_seconds, "Longest utterance");
  sc_synth->add_option("--target-rms", synth.target_rms, "RMS normalization target");
  sc_synth->add_option("--count-pretrain", synth.count_pretrain, "Utterances per kind");
  sc_synth->add_option("--count-nsvae", synth.count_nsvae, "Utterances per kind");
  sc_synth->add_option("--count-validation", synth.count_validation, "Utterances per kind");
  sc_synth->add_option("--count-test", synth.count_test, "Utterances per kind");

  std::string kind, corpus_dir, out_dir, cvae_dir, nvae_dir, nsvae_dir, mode = "cf";
  ConfigFlags pre_flags, ns_flags, ft_flags, sweep_flags;

  CLI::App* sc_pre = app.add_subcommand("pretrain", "Pretrain the speech or noise autoencoder");
  sc_pre->add_option("--kind", kind, "speech or noise")
      ->required()
      ->check(CLI::IsMember({"speech", "noise"}));
  sc_pre->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_pre->add_option("--out", out_dir, "Run directory")->required();
  add_config_flags(sc_pre, pre_flags);

  CLI::App* sc_ns = app.add_subcommand(
      "train-nsvae", "Train the noisy-speech encoder against frozen posterior targets");
  sc_ns->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_ns->add_option("--cvae", cvae_dir, "Pretrained speech bundle")->required();
  sc_ns->add_option("--nvae", nvae_dir, "Pretrained noise bundle")->required();
  sc_ns->add_option("--out", out_dir, "Run directory")->required();
  add_config_flags(sc_ns, ns_flags);

  CLI::App* sc_ft = app.add_subcommand("finetune", "Fine-tune the mask decoder");
  sc_ft->add_option("--mode", mode, "cf (SI-SDR only) or adv (adds a discriminator)")
      ->check(CLI::IsMember({"cf", "adv"}))
      ->capture_default_str();
  sc_ft->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_ft->add_option("--nsvae", nsvae_dir, "Trained noisy-speech encoder bundle")->required();
  sc_ft->add_option("--cvae", cvae_dir, "Pretrained speech bundle (decoder source)")->required();
  sc_ft->add_option("--out", out_dir, "Run directory")->required();
  add_config_flags(sc_ft, ft_flags);

  std::string in_wav, out_wav, enc_dir, dec_dir;
  bool sample = false;
  std::uint64_t sample_seed = 0;
  CLI::App* sc_enh = app.add_subcommand("enhance", "Enhance one wav file");
  sc_enh->add_option("input", in_wav, "Noisy wav")->required();
  sc_enh->add_option("output", out_wav, "Enhanced wav")->required();
  sc_enh->add_option("--encoder", enc_dir, "Noisy-speech encoder bundle")->required();
  sc_enh->add_option("--decoder", dec_dir, "Fine-tuned decoder bundle")->required();
  sc_enh->add_flag("--sample", sample, "Draw the latent instead of using the posterior mean");
  sc_enh->add_option("--sample-seed", sample_seed, "Seed for --sample")->capture_default_str();

  std::string split = "test";
  double snr_db = 0.0;
  std::uint64_t eval_seed = 1;
  CLI::App* sc_eval =
      app.add_subcommand("evaluate", "Score enhancement on corpus mixtures at one SNR");
  sc_eval->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_eval->add_option("--split", split, "Corpus split")->capture_default_str();
  sc_eval->add_option("--encoder", enc_dir, "Noisy-speech encoder bundle")->required();
  sc_eval->add_option("--decoder", dec_dir, "Fine-tuned decoder bundle")->required();
  sc_eval->add_option("--snr", snr_db, "Mixture SNR in dB")->capture_default_str();
  sc_eval->add_option("--seed", eval_seed, "Mixture seed")->capture_default_str();
  sc_eval->add_option("--out", out_dir, "Report directory")->required();

  std::string diag_split = "validation", diag_out;
  CLI::App* sc_diag =
      app.add_subcommand("diagnose", "Latent diagnostics of a pretrained autoencoder");
  sc_diag->add_option("--bundle", cvae_dir, "Pretraining bundle")->required();
  sc_diag->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_diag->add_option("--split", diag_split, "Corpus split")->capture_default_str();
  sc_diag->add_option("--out", diag_out, "Optional report directory");

  std::string grid = "both";
  CLI::App* sc_sweep = app.add_subcommand(
      "sweep", "Grid over beta {1,0.1,0.01,0.001} and alpha {0,1} with a trend table");
  sc_sweep->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  sc_sweep->add_option("--out", out_dir, "Sweep root directory")->required();
  sc_sweep->add_option("--grid", grid, "beta, alpha or both")
      ->check(CLI::IsMember({"beta", "alpha", "both"}))
      ->capture_default_str();
  add_config_flags(sc_sweep, sweep_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "nsvae: error: usage: %s\n", e.what());
    return kExitConfig;
  }

  try {
    if (sc_synth->parsed()) return run_synth(synth);
    if (sc_pre->parsed()) return run_pretrain(kind, corpus_dir, out_dir, pre_flags);
    if (sc_ns->parsed())
      return run_train_nsvae(corpus_dir, cvae_dir, nvae_dir, out_dir, ns_flags);
    if (sc_ft->parsed())
      return run_finetune(mode, corpus_dir, nsvae_dir, cvae_dir, out_dir, ft_flags);
    if (sc_enh->parsed())
      return run_enhance(in_wav, out_wav, enc_dir, dec_dir, sample, sample_seed);
    if (sc_eval->parsed())
      return run_evaluate(corpus_dir, split, enc_dir, dec_dir, snr_db, eval_seed, out_dir);
    if (sc_diag->parsed()) return run_diagnose(cvae_dir, corpus_dir, diag_split, diag_out);
    if (sc_sweep->parsed()) return run_sweep(corpus_dir, out_dir, grid, sweep_flags);
  } catch (const std::exception& e) {
    const int code = decode_exit(e);
    std::fprintf(stderr, "nsvae: error: %s: %s\n", category_name(code), e.what());
    return code;
  }
  return 0;
}
