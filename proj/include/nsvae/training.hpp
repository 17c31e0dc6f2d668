// SPDX-License-Identifier: Apache-2.0
//
// The three-stage training pipeline: beta-VAE pretraining of the clean
// speech and noise autoencoders, latent matching of the dual-head noise
// suppression encoder against the frozen pretrained posteriors, and SI-SDR
// fine-tuning of the masking decoder, optionally with an adversarial critic.
// One learning-rate schedule, one epoch logger and one checkpoint layout
// serve every stage.
#ifndef NSVAE_TRAINING_HPP
#define NSVAE_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsvae/data.hpp"
#include "nsvae/losses.hpp"
#include "nsvae/networks.hpp"

namespace nsvae {

enum class Stage { pretrain_cvae, pretrain_nvae, train_nsvae, finetune_cf, finetune_adv };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

struct TrainingRunConfig {
  Stage stage = Stage::pretrain_cvae;
  NetworkConfig network;
  StftConfig stft;
  LossWeights weights;
  bool skip_connections_pretrain = false;
  bool skip_connections_finetune = true;
  double lr = 3e-4;
  double disc_lr = 8e-5;
  int lr_halving_patience = 3;
  int early_stop_patience = 20;
  int max_epochs = 1000;
  int batch_size = 15;
  double snr_lo_db = -10.0;
  double snr_hi_db = 15.0;
  std::uint64_t seed = 1;
  bool grad_clip = true;  // global-norm clip across all trainable stores
  double clip_norm = 5.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainingRunConfig from_json(const nlohmann::json& j);
  std::string config_hash() const;  // hex digest of the canonical JSON form
};

// Validation-driven learning-rate schedule: the lr halves after every run of
// `halving_patience` consecutive epochs without a new best validation loss
// (strict improvement resets the run), and the schedule stops after
// `early_stop_patience` consecutive epochs without one.
struct LrSchedule {
  double lr = 3e-4;
  double best = std::numeric_limits<double>::infinity();
  int non_improving = 0;
  bool halved = false;  // event flags describing the latest step only
  bool stopped = false;
};

LrSchedule lr_schedule_step(LrSchedule s, double validation_loss, int halving_patience,
                            int early_stop_patience);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;  // rate in effect during the epoch
  double wall_seconds = 0.0;
  double disc_loss = std::numeric_limits<double>::quiet_NaN();  // adversarial runs only
  bool halved = false;   // this epoch's validation triggered a halving
  bool stopped = false;  // early stop fired after this epoch
  bool disc_collapse_warning = false;
};

// One training run's trace: a header (stage, config hash) plus one record
// per epoch, stored as JSON lines.
struct RunLog {
  std::string stage;
  std::string config_hash;
  std::vector<EpochRecord> epochs;

  void save(const std::filesystem::path& file) const;
  static RunLog load(const std::filesystem::path& file);
};

// Replays the halving/stop rule over the logged validation losses and checks
// every recorded lr, halving and stop event against it.
bool schedule_consistent(const RunLog& log, double lr0, int halving_patience,
                         int early_stop_patience);

struct TrainOutcome {
  RunLog log;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::filesystem::path checkpoint_dir;  // bundle of the best-validation epoch
  std::int64_t generator_steps = 0;      // finetune_adv only
  std::int64_t discriminator_steps = 0;
};

// Stage 1. kind selects the corpus ("speech" for the clean VAE, "noise" for
// the noise VAE) and must agree with cfg.stage. Writes out_dir/best/encoder
// and out_dir/best/decoder plus run_log.jsonl and config.json.
TrainOutcome pretrain_vae(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                          const std::string& kind, const std::filesystem::path& out_dir);

// Stage 2. Trains the dual-head encoder on noisy mixtures to match the
// frozen pretrained posteriors (targets are evaluated without gradients, so
// the pretrained parameters cannot move). Writes out_dir/best/encoder.
TrainOutcome train_nsvae(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                         const std::filesystem::path& cvae_ckpt,
                         const std::filesystem::path& nvae_ckpt,
                         const std::filesystem::path& out_dir);

// Stage 3 (cfg.stage selects classical or adversarial). Loads the frozen
// dual-head encoder and the pretrained decoder, grafts skip inputs when the
// config asks for them, and trains the decoder as a complex mask generator
// through inverse-STFT resynthesis. Writes out_dir/best/decoder (and
// out_dir/best/discriminator in adversarial mode).
TrainOutcome finetune_decoder(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                              const std::filesystem::path& nsvae_ckpt,
                              const std::filesystem::path& cvae_ckpt,
                              const std::filesystem::path& out_dir);

// Recompute a stage's validation loss from a saved bundle, bit-for-bit the
// same way the training loop scored it.
double pretrain_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                                const std::string& kind, const std::filesystem::path& bundle);
double nsvae_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                             const std::filesystem::path& nsvae_bundle,
                             const std::filesystem::path& cvae_bundle,
                             const std::filesystem::path& nvae_bundle);
double finetune_validation_loss(const TrainingRunConfig& cfg, const CorpusManifest& corpus,
                                const std::filesystem::path& nsvae_bundle,
                                const std::filesystem::path& finetune_bundle);

}  // namespace nsvae

#endif
