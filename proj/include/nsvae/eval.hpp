// SPDX-License-Identifier: Apache-2.0
//
// Inference and measurement: the enhancement pipeline around trained
// checkpoint bundles, the SI-SDR metric, latent-space diagnostics over a
// corpus split, and score aggregation with plain-text and CSV renderings.
#ifndef NSVAE_EVAL_HPP
#define NSVAE_EVAL_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nsvae/data.hpp"
#include "nsvae/networks.hpp"
#include "nsvae/spectral.hpp"
#include "nsvae/tensor.hpp"

namespace nsvae {

// Enhancement decodes the posterior mean by default, so repeated calls are
// bit-identical. sample_latent draws the latent instead (seeded).
struct EnhanceOptions {
  bool sample_latent = false;
  std::uint64_t sample_seed = 0;
};

// Mask producer seam: noisy spectrogram in, complex mask (re, im) of the same
// shape out. Tests substitute trivial producers to exercise the plumbing
// around the networks.
using MaskFn = std::function<std::pair<Tensor, Tensor>(const ComplexSpectrogram&)>;

// stft -> mask -> apply_mask -> istft. Output length equals input length.
TimeSignal enhance_with(const TimeSignal& noisy, const StftConfig& cfg, const MaskFn& mask);

// Loaded encoder/decoder pair plus the analysis config recorded in their
// manifests. Either argument may name the checkpoint directory itself or a
// bundle directory containing an encoder/ or decoder/ subdirectory.
class Enhancer {
 public:
  Enhancer(const std::filesystem::path& encoder_ckpt, const std::filesystem::path& decoder_ckpt);

  const StftConfig& stft_config() const { return stft_; }
  const NetworkConfig& network() const { return enc_.config(); }

  TimeSignal run(const TimeSignal& noisy, const EnhanceOptions& opts = {}) const;

 private:
  Encoder enc_;
  Decoder dec_;
  StftConfig stft_;
};

// One-shot convenience wrapper around Enhancer.
TimeSignal enhance(const std::filesystem::path& encoder_ckpt,
                   const std::filesystem::path& decoder_ckpt, const TimeSignal& noisy,
                   const EnhanceOptions& opts = {});

// +10 log10(||x_d||^2 / ||x_d - est||^2) with x_d the projection of est onto
// ref. No numerical floor: zero distortion after scaling is +infinity. The
// reference must be nonzero and match the estimate's length.
double si_sdr_metric(const TimeSignal& est, const TimeSignal& ref);

// Latent-space health of one pretrained autoencoder over a corpus split:
// KL to the prior per frame (averaged over utterances) and the SI-SDR of
// posterior-mean reconstructions. KL near zero flags a collapsed latent.
struct LatentDiagnostics {
  double mean_kll = 0.0;
  double mean_recon_si_sdr_db = 0.0;
  int utterances = 0;

  nlohmann::json to_json() const;
};

// vae_ckpt must be a pretraining bundle (encoder/ and decoder/); the manifest
// decides whether speech or noise utterances of the split are scored. The
// result does not depend on the manifest's entry order.
LatentDiagnostics latent_diagnostics(const std::filesystem::path& vae_ckpt,
                                     const CorpusManifest& corpus, const std::string& split);

// One scored utterance. recon_si_sdr_db is NaN when the report has no
// reconstruction column; rows of one report must agree on its presence.
struct MetricRow {
  std::string id;
  double si_sdr_db = 0.0;
  double recon_si_sdr_db = std::numeric_limits<double>::quiet_NaN();
};

// Per-utterance rows plus normal-approximation aggregates. Confidence
// half-widths are NaN (rendered "n/a") when there are fewer than two rows.
struct MetricsReport {
  std::vector<MetricRow> rows;
  bool has_recon = false;
  double mean_si_sdr_db = 0.0;
  double ci95_si_sdr_db = 0.0;
  double mean_recon_si_sdr_db = 0.0;
  double ci95_recon_si_sdr_db = 0.0;
};

// Aggregates rows in order; rows must be nonempty.
MetricsReport report(const std::vector<MetricRow>& rows);

// Fixed-width table with an aggregate footer.
std::string render_text(const MetricsReport& r);

// Header plus one row per line at full precision: re-parsing and
// re-aggregating reproduces the report exactly.
std::string render_csv(const MetricsReport& r);
std::vector<MetricRow> parse_csv(const std::string& csv);

// Enhancement scored against the raw mixtures it started from: one mixture
// per clean utterance of the split at a fixed SNR, rows aligned across the
// two reports.
struct EnhancementEval {
  MetricsReport enhanced;
  MetricsReport unprocessed;
};

EnhancementEval evaluate_enhancement(const CorpusManifest& corpus, const std::string& split,
                                     const std::filesystem::path& encoder_ckpt,
                                     const std::filesystem::path& decoder_ckpt, double snr_db,
                                     std::uint64_t seed, const EnhanceOptions& opts = {});

}  // namespace nsvae

#endif
