// SPDX-License-Identifier: Apache-2.0
#include "nsvae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>

#include "nsvae/checkpoint.hpp"
#include "nsvae/common.hpp"
#include "nsvae/latent.hpp"
#include "nsvae/spectral.hpp"

namespace nsvae {

namespace fs = std::filesystem;
using nlohmann::json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain_cvae: return "pretrain_cvae";
    case Stage::pretrain_nvae: return "pretrain_nvae";
    case Stage::train_nsvae: return "train_nsvae";
    case Stage::finetune_cf: return "finetune_cf";
    case Stage::finetune_adv: return "finetune_adv";
  }
  throw InvalidInput("unreachable stage value");
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : {Stage::pretrain_cvae, Stage::pretrain_nvae, Stage::train_nsvae,
                  Stage::finetune_cf, Stage::finetune_adv})
    if (stage_name(s) == name) return s;
  throw InvalidInput("unknown training stage '" + name + "'");
}

void TrainingRunConfig::validate() const {
  network.validate();
  stft.validate();
  weights.validate();
  require(stft.bins() == network.bins, "training config: stft bins and network bins disagree");
  require(lr > 0.0 && disc_lr > 0.0, "training config: learning rates must be positive");
  require(lr_halving_patience > 0 && early_stop_patience > 0,
          "training config: patience values must be positive");
  require(max_epochs >= 1, "training config: max_epochs must be at least 1");
  require(batch_size >= 1, "training config: batch_size must be at least 1");
  require(snr_lo_db <= snr_hi_db, "training config: SNR range inverted");
  require(clip_norm > 0.0, "training config: clip_norm must be positive");
}

json TrainingRunConfig::to_json() const {
  return {{"stage", stage_name(stage)},
          {"network", network_config_to_json(network)},
          {"stft",
           {{"frame_length", stft.frame_length}, {"hop", stft.hop},
            {"fft_length", stft.fft_length}}},
          {"weights",
           {{"beta", weights.beta}, {"alpha", weights.alpha},
            {"adv_weight", weights.adv_weight}, {"epsilon", weights.epsilon}}},
          {"skip_connections_pretrain", skip_connections_pretrain},
          {"skip_connections_finetune", skip_connections_finetune},
          {"lr", lr},
          {"disc_lr", disc_lr},
          {"lr_halving_patience", lr_halving_patience},
          {"early_stop_patience", early_stop_patience},
          {"max_epochs", max_epochs},
          {"batch_size", batch_size},
          {"snr_lo_db", snr_lo_db},
          {"snr_hi_db", snr_hi_db},
          {"seed", seed},
          {"grad_clip", grad_clip},
          {"clip_norm", clip_norm}};
}

TrainingRunConfig TrainingRunConfig::from_json(const json& j) {
  TrainingRunConfig cfg;
  try {
    if (j.contains("stage")) cfg.stage = stage_from_name(j.at("stage").get<std::string>());
    if (j.contains("network")) cfg.network = network_config_from_json(j.at("network"));
    if (j.contains("stft")) {
      const json& s = j.at("stft");
      cfg.stft.frame_length = s.value("frame_length", cfg.stft.frame_length);
      cfg.stft.hop = s.value("hop", cfg.stft.hop);
      cfg.stft.fft_length = s.value("fft_length", cfg.stft.fft_length);
    }
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      cfg.weights.beta = w.value("beta", cfg.weights.beta);
      cfg.weights.alpha = w.value("alpha", cfg.weights.alpha);
      cfg.weights.adv_weight = w.value("adv_weight", cfg.weights.adv_weight);
      cfg.weights.epsilon = w.value("epsilon", cfg.weights.epsilon);
    }
    cfg.skip_connections_pretrain =
        j.value("skip_connections_pretrain", cfg.skip_connections_pretrain);
    cfg.skip_connections_finetune =
        j.value("skip_connections_finetune", cfg.skip_connections_finetune);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.disc_lr = j.value("disc_lr", cfg.disc_lr);
    cfg.lr_halving_patience = j.value("lr_halving_patience", cfg.lr_halving_patience);
    cfg.early_stop_patience = j.value("early_stop_patience", cfg.early_stop_patience);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.snr_lo_db = j.value("snr_lo_db", cfg.snr_lo_db);
    cfg.snr_hi_db = j.value("snr_hi_db", cfg.snr_hi_db);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.grad_clip = j.value("grad_clip", cfg.grad_clip);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed training config: ") + e.what());
  }
  return cfg;
}

std::string TrainingRunConfig::config_hash() const {
  // FNV-1a over the canonical (key-sorted) JSON encoding.
  const std::string s = to_json().dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LrSchedule lr_schedule_step(LrSchedule s, double validation_loss, int halving_patience,
                            int early_stop_patience) {
  require(halving_patience > 0 && early_stop_patience > 0,
          "lr schedule: patience values must be positive");
  s.halved = false;
  s.stopped = false;
  if (validation_loss < s.best) {
    s.best = validation_loss;
    s.non_improving = 0;
    return s;
  }
  ++s.non_improving;
  if (s.non_improving % halving_patience == 0) {
    s.lr *= 0.5;
    s.halved = true;
  }
  if (s.non_improving >= early_stop_patience) s.stopped = true;
  return s;
}

void RunLog::save(const fs::path& file) const {
  std::ofstream f(file);
  f << json{{"stage", stage}, {"config_hash", config_hash}}.dump() << "\n";
  for (const EpochRecord& r : epochs) {
    json line = {{"epoch", r.epoch},         {"train_loss", r.train_loss},
                 {"val_loss", r.val_loss},   {"lr", r.lr},
                 {"wall_seconds", r.wall_seconds}, {"halved", r.halved},
                 {"stopped", r.stopped}};
    if (std::isfinite(r.disc_loss)) {
      line["disc_loss"] = r.disc_loss;
      line["disc_collapse_warning"] = r.disc_collapse_warning;
    }
    f << line.dump() << "\n";
  }
  require(f.good(), "cannot write run log to " + file.string());
}

RunLog RunLog::load(const fs::path& file) {
  std::ifstream f(file);
  require(static_cast<bool>(f), "no run log at " + file.string());
  RunLog log;
  std::string line;
  bool header = true;
  try {
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (header) {
        log.stage = j.at("stage").get<std::string>();
        log.config_hash = j.at("config_hash").get<std::string>();
        header = false;
        continue;
      }
      EpochRecord r;
      r.epoch = j.at("epoch").get<int>();
      r.train_loss = j.at("train_loss").get<double>();
      r.val_loss = j.at("val_loss").get<double>();
      r.lr = j.at("lr").get<double>();
      r.wall_seconds = j.at("wall_seconds").get<double>();
      r.halved = j.at("halved").get<bool>();
      r.stopped = j.at("stopped").get<bool>();
      if (j.contains("disc_loss")) {
        r.disc_loss = j.at("disc_loss").get<double>();
        r.disc_collapse_warning = j.value("disc_collapse_warning", false);
      }
      log.epochs.push_back(r);
    }
  } catch (const json::exception& e) {
    throw InvalidInput("malformed run log " + file.string() + ": " + e.what());
  }
  require(!header, "run log " + file.string() + " is missing its header line");
  return log;
}

bool schedule_consistent(const RunLog& log, double lr0, int halving_patience,
                         int early_stop_patience) {
  LrSchedule s;
  s.lr = lr0;
  int expected_epoch = 1;
  for (const EpochRecord& r : log.epochs) {
    if (r.epoch != expected_epoch++) return false;
    if (r.lr != s.lr) return false;
    s = lr_schedule_step(s, r.val_loss, halving_patience, early_stop_patience);
    if (r.halved != s.halved) return false;
    if (r.stopped != s.stopped) return false;
    if (s.stopped && &r != &log.epochs.back()) return false;
  }
  return true;
}

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;      // parameter init stream
constexpr std::uint64_t kOrderTag = 0x6f726465;     // epoch shuffles
constexpr std::uint64_t kSampleTag = 0x73616d70;    // training posterior draws
constexpr std::uint64_t kValNoiseTag = 0x766e6f69;  // validation posterior draws
constexpr std::uint64_t kValDataTag = 0x76646174;   // validation mixtures
constexpr double kCollapseFloor = 1e-4;
constexpr int kCollapseEpochs = 5;

Tensor normal_tensor(Rng& rng, int rows, int cols) {
  Tensor t = Tensor::zeros2(rows, cols);
  for (double& v : t.v) v = rng.normal();
  return t;
}

// Divergence gate and global-norm clip over every trainable store at once.
void clip_global(std::initializer_list<GradAccum*> accs, bool enabled, double max_norm) {
  double sq = 0.0;
  for (GradAccum* a : accs) sq += a->squared_norm();
  if (!std::isfinite(sq)) throw TrainingDiverged("non-finite gradient norm");
  if (!enabled) return;
  const double norm = std::sqrt(sq);
  if (norm > max_norm)
    for (GradAccum* a : accs) a->scale_all(max_norm / norm);
}

// Checkpoints record architecture plus analysis config so that inference can
// run from the bundle alone.
json bundle_config(const TrainingRunConfig& cfg, json extra) {
  extra["network"] = network_config_to_json(cfg.network);
  extra["stage"] = stage_name(cfg.stage);
  extra["stft"] = {{"frame_length", cfg.stft.frame_length},
                   {"hop", cfg.stft.hop},
                   {"fft_length", cfg.stft.fft_length}};
  return extra;
}

// Architecture recorded in a checkpoint must match the run config; latent or
// channel drift would otherwise surface as cryptic shape errors mid-run.
void check_architecture(const fs::path& dir, const NetworkConfig& want) {
  const json man = load_manifest(dir);
  require(man.contains("config") && man.at("config").contains("network"),
          "checkpoint " + dir.string() + " records no network architecture");
  const NetworkConfig got = network_config_from_json(man.at("config").at("network"));
  require(got.channels == want.channels && got.latent_dim == want.latent_dim &&
              got.lstm_hidden == want.lstm_hidden && got.bins == want.bins,
          "checkpoint architecture differs from the run config: " + dir.string());
}

struct StageDriver {
  std::function<double(int)> train_epoch;       // mean train loss; performs updates
  std::function<double()> validation;           // stage objective on the validation split
  std::function<void(const fs::path&)> save_best;
  std::function<void(double)> apply_lr;
  std::function<double()> epoch_disc_loss;      // adversarial mode only
};

TrainOutcome run_stage(const TrainingRunConfig& cfg, const fs::path& out_dir,
                       const StageDriver& d) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "config.json");
    f << cfg.to_json().dump(2) << "\n";
    require(f.good(), "cannot write resolved config under " + out_dir.string());
  }

  TrainOutcome out;
  out.checkpoint_dir = out_dir / "best";
  out.log.stage = stage_name(cfg.stage);
  out.log.config_hash = cfg.config_hash();

  LrSchedule sched;
  sched.lr = cfg.lr;
  d.apply_lr(sched.lr);
  int collapse_run = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_used = sched.lr;
    const double train_loss = d.train_epoch(epoch);
    const double val_loss = d.validation();
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " of " +
                             stage_name(cfg.stage));

    if (val_loss < out.best_val_loss) {
      out.best_val_loss = val_loss;
      out.best_epoch = epoch;
      d.save_best(out.checkpoint_dir);
    }
    sched = lr_schedule_step(sched, val_loss, cfg.lr_halving_patience, cfg.early_stop_patience);
    d.apply_lr(sched.lr);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.val_loss = val_loss;
    rec.lr = lr_used;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.halved = sched.halved;
    rec.stopped = sched.stopped;
    if (d.epoch_disc_loss) {
      rec.disc_loss = d.epoch_disc_loss();
      collapse_run = rec.disc_loss <= kCollapseFloor ? collapse_run + 1 : 0;
      if (collapse_run >= kCollapseEpochs) {
        rec.disc_collapse_warning = true;
        std::fprintf(stderr,
                     "warning: discriminator loss <= %g for %d consecutive epochs "
                     "(epoch %d); the critic may have collapsed\n",
                     kCollapseFloor, collapse_run, epoch);
      }
    }
    out.log.epochs.push_back(rec);
    out.log.save(out_dir / "run_log.jsonl");
    if (sched.stopped) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// shared forward passes

int pretrain_utterance_loss(Tape& t, const TrainingRunConfig& cfg, const Encoder& enc,
                            const Decoder& dec, const std::vector<int>& pe,
                            const std::vector<int>& pd, const ComplexSpectrogram& S, Rng& noise) {
  const EncoderOutput eo = enc.forward(t, pe, t.leaf(S.re), t.leaf(S.im));
  const Tensor n1 = normal_tensor(noise, cfg.network.latent_dim, S.frames());
  const Tensor n2 = normal_tensor(noise, cfg.network.latent_dim, S.frames());
  const ComplexNodes z = sample_node(t, eo.speech, n1, n2);
  const ComplexNodes xhat = dec.forward(t, pd, z, dec.with_skips() ? &eo.taps : nullptr);
  return pretrain_loss_node(t, eo.speech, xhat, S, cfg.weights);
}

double eval_pretrain_specs(const TrainingRunConfig& cfg,
                           std::span<const ComplexSpectrogram> specs, const Encoder& enc,
                           const Decoder& dec) {
  Rng noise(Rng::mix(cfg.seed, kValNoiseTag));
  double total = 0.0;
  for (const ComplexSpectrogram& S : specs) {
    Tape t;
    const auto pe = enc.params().lift(t, false);
    const auto pd = dec.params().lift(t, false);
    total += t.scalar(pretrain_utterance_loss(t, cfg, enc, dec, pe, pd, S, noise));
  }
  return total / static_cast<double>(specs.size());
}

std::vector<ComplexSpectrogram> load_split_specs(const CorpusManifest& corpus,
                                                 const std::string& kind,
                                                 const std::string& split,
                                                 const StftConfig& stft_cfg) {
  const auto entries = corpus.select(kind, split);
  require(!entries.empty(), "corpus has no '" + kind + "' utterances in split '" + split + "'");
  std::vector<ComplexSpectrogram> specs;
  specs.reserve(entries.size());
  for (const CorpusEntry* e : entries) specs.push_back(stft(load_entry(corpus, *e), stft_cfg));
  return specs;
}

// Posterior parameters of one utterance under a frozen encoder.
struct FrozenPosteriors {
  ComplexDiagGaussian speech;
  ComplexDiagGaussian noise;
};

FrozenPosteriors encode_dists(const Encoder& enc, const ComplexSpectrogram& S) {
  Tape t;
  const auto p = enc.params().lift(t, false);
  const EncoderOutput eo = enc.forward(t, p, t.leaf(S.re), t.leaf(S.im));
  FrozenPosteriors out;
  out.speech = dist_values(t, eo.speech);
  if (enc.dual_head()) out.noise = dist_values(t, eo.noise);
  return out;
}

BatchIterator validation_iterator(const TrainingRunConfig& cfg, const CorpusManifest& corpus) {
  return BatchIterator(corpus, "validation", cfg.batch_size, cfg.snr_lo_db, cfg.snr_hi_db,
                       Rng::mix(cfg.seed, kValDataTag), cfg.stft);
}

double eval_nsvae(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                  const Encoder& cvae, const Encoder& nvae, const Encoder& ns) {
  BatchIterator it = validation_iterator(cfg, corpus);
  std::vector<BatchItem> batch;
  double total = 0.0;
  int n = 0;
  while (it.next(batch)) {
    for (const BatchItem& item : batch) {
      const ComplexDiagGaussian px = encode_dists(cvae, item.x).speech;
      const ComplexDiagGaussian pv = encode_dists(nvae, item.v).speech;
      const FrozenPosteriors q = encode_dists(ns, item.y);
      total += nsvae_loss(q.speech, px, q.noise, pv, cfg.weights, item.y.frames());
      ++n;
    }
  }
  return total / n;
}

double eval_finetune(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                     const Encoder& ns, const Decoder& dec, const Discriminator* disc) {
  BatchIterator it = validation_iterator(cfg, corpus);
  std::vector<BatchItem> batch;
  double total = 0.0;
  int n = 0;
  while (it.next(batch)) {
    for (const BatchItem& item : batch) {
      Tape t;
      const auto pe = ns.params().lift(t, false);
      const auto pd = dec.params().lift(t, false);
      const EncoderOutput eo = ns.forward(t, pe, t.leaf(item.y.re), t.leaf(item.y.im));
      // Deterministic scoring: decode the posterior mean, matching enhancement.
      const ComplexNodes z{eo.speech.mu_re, eo.speech.mu_im};
      const ComplexNodes m = dec.forward(t, pd, z, dec.with_skips() ? &eo.taps : nullptr);
      const ComplexSpectrogram xhat = apply_mask(item.y, t.val(m.re), t.val(m.im));
      double loss = si_sdr_loss(istft(xhat), item.clean, cfg.weights.epsilon);
      if (disc != nullptr) {
        Tape td;
        const auto pdd = disc->params().lift(td, false);
        const int sf = disc->forward(td, pdd, td.leaf(xhat.re), td.leaf(xhat.im));
        loss += cfg.weights.adv_weight * adversarial_losses(0.0, td.scalar(sf)).first;
      }
      total += loss;
      ++n;
    }
  }
  return total / n;
}

}  // namespace

TrainOutcome pretrain_vae(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                          const std::string& kind, const fs::path& out_dir) {
  cfg.validate();
  require(kind == "speech" || kind == "noise", "pretrain_vae: kind must be speech or noise");
  const Stage want = kind == "speech" ? Stage::pretrain_cvae : Stage::pretrain_nvae;
  require(cfg.stage == want, "pretrain_vae: stage does not match utterance kind");

  const std::vector<ComplexSpectrogram> train_specs =
      load_split_specs(corpus, kind, "pretrain", cfg.stft);
  const std::vector<ComplexSpectrogram> val_specs =
      load_split_specs(corpus, kind, "validation", cfg.stft);

  Rng init(Rng::mix(cfg.seed, kInitTag));
  Encoder enc(cfg.network, false, init);
  Decoder dec(cfg.network, cfg.skip_connections_pretrain, init);
  Adam opt_e(cfg.lr, 0.0), opt_d(cfg.lr, 0.0);
  GradAccum acc_e(enc.params()), acc_d(dec.params());

  StageDriver d;
  d.train_epoch = [&](int epoch) {
    Rng order_rng(Rng::mix(cfg.seed, Rng::mix(kOrderTag, static_cast<std::uint64_t>(epoch))));
    Rng noise(Rng::mix(cfg.seed, Rng::mix(kSampleTag, static_cast<std::uint64_t>(epoch))));
    std::vector<std::size_t> order(train_specs.size());
    std::iota(order.begin(), order.end(), 0u);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.uniform_index(i)]);

    double total = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
      const std::size_t bn =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - i);
      for (std::size_t k = 0; k < bn; ++k, ++i) {
        Tape t;
        const auto pe = enc.params().lift(t, true);
        const auto pd = dec.params().lift(t, true);
        const int loss =
            pretrain_utterance_loss(t, cfg, enc, dec, pe, pd, train_specs[order[i]], noise);
        total += t.scalar(loss);
        t.backward(loss);
        acc_e.add_scaled(t, pe, 1.0 / static_cast<double>(bn));
        acc_d.add_scaled(t, pd, 1.0 / static_cast<double>(bn));
      }
      clip_global({&acc_e, &acc_d}, cfg.grad_clip, cfg.clip_norm);
      opt_e.step(enc.params(), acc_e.grads());
      opt_d.step(dec.params(), acc_d.grads());
      acc_e.reset();
      acc_d.reset();
    }
    return total / static_cast<double>(order.size());
  };
  d.validation = [&]() { return eval_pretrain_specs(cfg, val_specs, enc, dec); };
  d.save_best = [&](const fs::path& dir) {
    save_checkpoint(dir / "encoder", "encoder", bundle_config(cfg, {{"dual_head", false}}),
                    enc.params());
    save_checkpoint(dir / "decoder", "decoder",
                    bundle_config(cfg, {{"with_skips", dec.with_skips()}}), dec.params());
  };
  d.apply_lr = [&](double lr) {
    opt_e.set_lr(lr);
    opt_d.set_lr(lr);
  };
  return run_stage(cfg, out_dir, d);
}

double pretrain_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                                const std::string& kind, const fs::path& bundle) {
  cfg.validate();
  check_architecture(bundle / "encoder", cfg.network);
  Rng init(1);
  Encoder enc(cfg.network, false, init);
  load_checkpoint(bundle / "encoder", "encoder", enc.params());
  const json dman = load_manifest(bundle / "decoder");
  Decoder dec(cfg.network, dman.at("config").value("with_skips", false), init);
  load_checkpoint(bundle / "decoder", "decoder", dec.params());
  const std::vector<ComplexSpectrogram> val_specs =
      load_split_specs(corpus, kind, "validation", cfg.stft);
  return eval_pretrain_specs(cfg, val_specs, enc, dec);
}

TrainOutcome train_nsvae(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                         const fs::path& cvae_ckpt, const fs::path& nvae_ckpt,
                         const fs::path& out_dir) {
  cfg.validate();
  require(cfg.stage == Stage::train_nsvae, "train_nsvae: config stage mismatch");

  Rng loader(1);
  check_architecture(cvae_ckpt / "encoder", cfg.network);
  check_architecture(nvae_ckpt / "encoder", cfg.network);
  Encoder cvae(cfg.network, false, loader);
  load_checkpoint(cvae_ckpt / "encoder", "encoder", cvae.params());
  Encoder nvae(cfg.network, false, loader);
  load_checkpoint(nvae_ckpt / "encoder", "encoder", nvae.params());

  Rng init(Rng::mix(cfg.seed, kInitTag));
  Encoder ns(cfg.network, true, init);
  Adam opt(cfg.lr, 0.0);
  GradAccum acc(ns.params());
  BatchIterator it(corpus, "nsvae", cfg.batch_size, cfg.snr_lo_db, cfg.snr_hi_db, cfg.seed,
                   cfg.stft);

  StageDriver d;
  d.train_epoch = [&](int epoch) {
    it.reset(Rng::mix(cfg.seed, Rng::mix(kOrderTag, static_cast<std::uint64_t>(epoch))));
    std::vector<BatchItem> batch;
    double total = 0.0;
    int n = 0;
    while (it.next(batch)) {
      for (const BatchItem& item : batch) {
        const ComplexDiagGaussian px = encode_dists(cvae, item.x).speech;
        const ComplexDiagGaussian pv = encode_dists(nvae, item.v).speech;
        Tape t;
        const auto pn = ns.params().lift(t, true);
        const EncoderOutput eo = ns.forward(t, pn, t.leaf(item.y.re), t.leaf(item.y.im));
        const int loss = nsvae_loss_node(t, eo.speech, px, eo.noise, pv, cfg.weights,
                                         item.y.frames());
        total += t.scalar(loss);
        ++n;
        t.backward(loss);
        acc.add_scaled(t, pn, 1.0 / static_cast<double>(batch.size()));
      }
      clip_global({&acc}, cfg.grad_clip, cfg.clip_norm);
      opt.step(ns.params(), acc.grads());
      acc.reset();
    }
    return total / n;
  };
  d.validation = [&]() { return eval_nsvae(cfg, corpus, cvae, nvae, ns); };
  d.save_best = [&](const fs::path& dir) {
    save_checkpoint(dir / "encoder", "encoder", bundle_config(cfg, {{"dual_head", true}}),
                    ns.params());
  };
  d.apply_lr = [&](double lr) { opt.set_lr(lr); };
  return run_stage(cfg, out_dir, d);
}

double nsvae_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                             const fs::path& nsvae_bundle, const fs::path& cvae_bundle,
                             const fs::path& nvae_bundle) {
  cfg.validate();
  Rng loader(1);
  check_architecture(nsvae_bundle / "encoder", cfg.network);
  Encoder ns(cfg.network, true, loader);
  load_checkpoint(nsvae_bundle / "encoder", "encoder", ns.params());
  Encoder cvae(cfg.network, false, loader);
  load_checkpoint(cvae_bundle / "encoder", "encoder", cvae.params());
  Encoder nvae(cfg.network, false, loader);
  load_checkpoint(nvae_bundle / "encoder", "encoder", nvae.params());
  return eval_nsvae(cfg, corpus, cvae, nvae, ns);
}

TrainOutcome finetune_decoder(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                              const fs::path& nsvae_ckpt, const fs::path& cvae_ckpt,
                              const fs::path& out_dir) {
  cfg.validate();
  require(cfg.stage == Stage::finetune_cf || cfg.stage == Stage::finetune_adv,
          "finetune_decoder: config stage mismatch");
  const bool adv = cfg.stage == Stage::finetune_adv;

  Rng loader(1);
  check_architecture(nsvae_ckpt / "encoder", cfg.network);
  check_architecture(cvae_ckpt / "decoder", cfg.network);
  Encoder ns(cfg.network, true, loader);
  load_checkpoint(nsvae_ckpt / "encoder", "encoder", ns.params());

  const json dman = load_manifest(cvae_ckpt / "decoder");
  const bool had_skips = dman.at("config").value("with_skips", false);
  require(cfg.skip_connections_finetune || !had_skips,
          "finetune_decoder: decoder was pretrained with skip connections; they cannot be "
          "disabled afterwards");
  Rng init(Rng::mix(cfg.seed, kInitTag));
  Decoder dec(cfg.network, had_skips, init);
  load_checkpoint(cvae_ckpt / "decoder", "decoder", dec.params());
  if (cfg.skip_connections_finetune && !had_skips) dec.enable_skips();

  std::optional<Discriminator> disc;
  std::optional<Adam> opt_disc;
  if (adv) {
    disc.emplace(cfg.network, init);
    opt_disc.emplace(cfg.disc_lr, 0.0);
  }
  Adam opt(cfg.lr, 0.0);
  GradAccum acc(dec.params());
  BatchIterator it(corpus, "nsvae", cfg.batch_size, cfg.snr_lo_db, cfg.snr_hi_db, cfg.seed,
                   cfg.stft);

  TrainOutcome counters;  // step counters accumulated by the epoch closure
  double epoch_disc_loss = 0.0;

  StageDriver d;
  d.train_epoch = [&](int epoch) {
    it.reset(Rng::mix(cfg.seed, Rng::mix(kOrderTag, static_cast<std::uint64_t>(epoch))));
    Rng noise(Rng::mix(cfg.seed, Rng::mix(kSampleTag, static_cast<std::uint64_t>(epoch))));
    std::vector<BatchItem> batch;
    double total = 0.0, disc_total = 0.0;
    int n = 0, dn = 0;
    while (it.next(batch)) {
      const double scale = 1.0 / static_cast<double>(batch.size());
      std::vector<std::pair<Tensor, Tensor>> fakes;
      for (const BatchItem& item : batch) {
        Tape t;
        const auto pe = ns.params().lift(t, false);
        const auto pd = dec.params().lift(t, true);
        const int yr = t.leaf(item.y.re), yi = t.leaf(item.y.im);
        const EncoderOutput eo = ns.forward(t, pe, yr, yi);
        const Tensor n1 = normal_tensor(noise, cfg.network.latent_dim, item.y.frames());
        const Tensor n2 = normal_tensor(noise, cfg.network.latent_dim, item.y.frames());
        const ComplexNodes z = sample_node(t, eo.speech, n1, n2);
        const ComplexNodes m = dec.forward(t, pd, z, dec.with_skips() ? &eo.taps : nullptr);
        const int xre = t.sub(t.mul(yr, m.re), t.mul(yi, m.im));
        const int xim = t.add(t.mul(yr, m.im), t.mul(yi, m.re));
        const int est =
            istft_node(t, xre, xim, cfg.stft, static_cast<int>(item.clean.samples.size()));
        int loss = si_sdr_loss_node(t, est, item.clean, cfg.weights.epsilon);
        if (adv) {
          const auto pdc = disc->params().lift(t, false);
          const int sf = disc->forward(t, pdc, xre, xim);
          loss = t.add(loss, t.scale(adversarial_gen_node(t, sf), cfg.weights.adv_weight));
          fakes.emplace_back(t.val(xre), t.val(xim));
        }
        total += t.scalar(loss);
        ++n;
        t.backward(loss);
        acc.add_scaled(t, pd, scale);
      }
      clip_global({&acc}, cfg.grad_clip, cfg.clip_norm);
      opt.step(dec.params(), acc.grads());
      acc.reset();
      ++counters.generator_steps;

      if (adv) {
        GradAccum dacc(disc->params());
        for (std::size_t i = 0; i < batch.size(); ++i) {
          Tape td;
          const auto pdd = disc->params().lift(td, true);
          const int sr =
              disc->forward(td, pdd, td.leaf(batch[i].x.re), td.leaf(batch[i].x.im));
          const int sf = disc->forward(td, pdd, td.leaf(fakes[i].first), td.leaf(fakes[i].second));
          const int dl = adversarial_disc_node(td, sr, sf);
          disc_total += td.scalar(dl);
          ++dn;
          td.backward(dl);
          dacc.add_scaled(td, pdd, scale);
        }
        clip_global({&dacc}, cfg.grad_clip, cfg.clip_norm);
        opt_disc->step(disc->params(), dacc.grads());
        ++counters.discriminator_steps;
      }
    }
    if (adv) epoch_disc_loss = disc_total / dn;
    return total / n;
  };
  d.validation = [&]() {
    return eval_finetune(cfg, corpus, ns, dec, adv ? &*disc : nullptr);
  };
  d.save_best = [&](const fs::path& dir) {
    save_checkpoint(dir / "decoder", "decoder",
                    bundle_config(cfg, {{"with_skips", dec.with_skips()}}), dec.params());
    if (adv)
      save_checkpoint(dir / "discriminator", "discriminator", bundle_config(cfg, {}),
                      disc->params());
  };
  d.apply_lr = [&](double lr) { opt.set_lr(lr); };
  if (adv)
    d.epoch_disc_loss = [&]() { return epoch_disc_loss; };

  TrainOutcome out = run_stage(cfg, out_dir, d);
  out.generator_steps = counters.generator_steps;
  out.discriminator_steps = counters.discriminator_steps;
  return out;
}

double finetune_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                                const fs::path& nsvae_bundle, const fs::path& finetune_bundle) {
  cfg.validate();
  Rng loader(1);
  check_architecture(nsvae_bundle / "encoder", cfg.network);
  check_architecture(finetune_bundle / "decoder", cfg.network);
  Encoder ns(cfg.network, true, loader);
  load_checkpoint(nsvae_bundle / "encoder", "encoder", ns.params());
  const json dman = load_manifest(finetune_bundle / "decoder");
  Decoder dec(cfg.network, dman.at("config").value("with_skips", false), loader);
  load_checkpoint(finetune_bundle / "decoder", "decoder", dec.params());
  std::optional<Discriminator> disc;
  if (fs::exists(finetune_bundle / "discriminator")) {
    disc.emplace(cfg.network, loader);
    load_checkpoint(finetune_bundle / "discriminator", "discriminator", disc->params());
  }
  return eval_finetune(cfg, corpus, ns, dec, disc ? &*disc : nullptr);
}

}  // namespace nsvae
