// SPDX-License-Identifier: Apache-2.0
//
// Corpus plumbing: a deterministic synthetic corpus generator (a stand-in for
// a real speech+noise corpus so everything runs offline), SNR-exact mixture
// synthesis, and seeded batch iteration over aligned (clean, noise, noisy)
// spectrogram triples.
#ifndef NSVAE_DATA_HPP
#define NSVAE_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nsvae/rng.hpp"
#include "nsvae/spectral.hpp"

namespace nsvae {

struct CorpusEntry {
  std::string id;
  std::string path;  // relative to the manifest root
  std::string kind;  // "speech" | "noise"
  std::string split; // "pretrain" | "nsvae" | "validation" | "test"
  nlohmann::json params;  // generator identity, used to audit split disjointness
};

struct CorpusManifest {
  std::vector<CorpusEntry> entries;
  std::uint64_t seed = 0;
  int sample_rate_hz = 16000;
  std::filesystem::path root;  // directory holding manifest.json; not serialized

  void save() const;  // writes root/manifest.json
  static CorpusManifest load(const std::filesystem::path& dir);
  std::vector<const CorpusEntry*> select(const std::string& kind, const std::string& split) const;
};

// Mixture provenance: which pair was mixed and the noise gain that realizes
// the target SNR.
struct MixSpec {
  std::string speech_id;
  std::string noise_id;
  double snr_db = 0.0;
  double gain = 1.0;
};

struct SynthConfig {
  int sample_rate_hz = 16000;
  double min_seconds = 1.0;
  double max_seconds = 4.0;
  int count_pretrain = 50;
  int count_nsvae = 40;
  int count_validation = 10;
  int count_test = 10;
  double target_rms = 0.05;
  std::uint64_t seed = 1234;

  void validate() const;
};

// Generates count speech and count noise utterances per split under
// out_dir, normalized to target_rms, with disjoint generator-parameter bands
// per split. Same config -> byte-identical output.
CorpusManifest synth_corpus(const std::filesystem::path& out_dir, const SynthConfig& cfg);

// noisy = speech + gain * noise with gain chosen so the mixture hits snr_db
// exactly. Inputs must have equal length and nonzero energy.
std::pair<TimeSignal, double> mix_at_snr(const TimeSignal& speech, const TimeSignal& noise,
                                         double snr_db);

// Crops (random offset) or cyclically tiles (random rotation) a signal to
// exactly n samples.
TimeSignal match_length(const TimeSignal& sig, std::size_t n, Rng& rng);

TimeSignal load_entry(const CorpusManifest& m, const CorpusEntry& e);

// One mixture with its aligned spectrograms. The noise component is stored
// at mixture level (already scaled by the mix gain), so X + V = Y.
struct BatchItem {
  TimeSignal clean;
  TimeSignal noise;
  TimeSignal noisy;
  ComplexSpectrogram x, v, y;
  MixSpec mix;
};

// Seeded epoch iterator over one split: every speech utterance appears once
// per epoch in shuffled order, paired with a seeded noise pick and SNR draw.
class BatchIterator {
 public:
  BatchIterator(const CorpusManifest& manifest, const std::string& split, int batch_size,
                double snr_lo_db, double snr_hi_db, std::uint64_t seed, StftConfig stft);

  // Fills the next batch; returns false (and an empty batch) after the last.
  bool next(std::vector<BatchItem>& batch);
  void reset(std::uint64_t seed);
  int items_per_epoch() const { return static_cast<int>(speech_.size()); }

 private:
  const CorpusManifest& manifest_;
  std::vector<const CorpusEntry*> speech_;
  std::vector<const CorpusEntry*> noise_;
  int batch_size_;
  double snr_lo_, snr_hi_;
  StftConfig stft_;
  Rng rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

}  // namespace nsvae

#endif
