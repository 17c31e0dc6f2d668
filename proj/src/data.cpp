// SPDX-License-Identifier: Apache-2.0
#include "nsvae/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "nsvae/common.hpp"
#include "nsvae/rng.hpp"

namespace nsvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 4> kSplits = {"pretrain", "nsvae", "validation", "test"};

double rms(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / static_cast<double>(x.size()));
}

void normalize_rms(std::vector<double>& x, double target) {
  const double r = rms(x);
  require(r > 0.0, "corpus generator produced a silent utterance");
  const double g = target / r;
  for (double& v : x) v *= g;
}

// Generator bands. The audible bands (fundamental, cutoff, carrier) are shared
// across splits so held-out material stays in distribution; identity
// disjointness lives in the amplitude-modulation rate, which every family
// records as mod_hz and draws from a split-private interval.
struct Bands {
  double f0_lo, f0_hi;            // speech fundamental
  double cutoff_lo, cutoff_hi;    // broadband noise lowpass cutoff
  double carrier_lo, carrier_hi;  // narrowband noise center
  double mod_lo, mod_hi;          // amplitude-modulation rate, split-disjoint
};

Bands split_bands(int split) {
  const double s = static_cast<double>(split);
  return {90.0, 240.0, 400.0, 2700.0, 800.0, 3800.0, 2.0 + 1.2 * s, 3.0 + 1.2 * s};
}

// Harmonic comb with vibrato, tremolo and a few short silences: a crude but
// deterministic stand-in for voiced speech.
std::vector<double> synth_speech(Rng& rng, int n, int fs, const Bands& b, json& params) {
  const double f0 = rng.uniform(b.f0_lo, b.f0_hi);
  const double decay = rng.uniform(0.7, 1.4);
  const double vib_depth = rng.uniform(0.005, 0.02);
  const double vib_rate = rng.uniform(4.0, 7.0);
  const double trem_depth = rng.uniform(0.2, 0.5);
  const double trem_rate = rng.uniform(b.mod_lo, b.mod_hi);
  const double trem_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  // One global phase, harmonic k at (k+1) times it: every draw is a time shift
  // of the same zero-phase comb. Independent per-harmonic phases would make
  // each utterance its own waveform family, unlearnable from a small corpus.
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int harmonics = std::min(12, static_cast<int>(3400.0 / (f0 * (1.0 + vib_depth))));
  std::vector<double> amp(static_cast<std::size_t>(harmonics));
  for (int k = 0; k < harmonics; ++k)
    amp[static_cast<std::size_t>(k)] = std::pow(k + 1.0, -decay);

  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  double phi = theta;
  for (int i = 0; i < n; ++i) {
    const double tt = static_cast<double>(i) / fs;
    const double inst = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * tt));
    phi += 2.0 * std::numbers::pi * inst / fs;
    double s = 0.0;
    for (int k = 0; k < harmonics; ++k)
      s += amp[static_cast<std::size_t>(k)] * std::sin((k + 1.0) * phi);
    const double trem = 1.0 - trem_depth +
                        trem_depth * 0.5 *
                            (1.0 + std::sin(2.0 * std::numbers::pi * trem_rate * tt + trem_phase));
    x[static_cast<std::size_t>(i)] = s * trem;
  }

  // Silence gaps with 10 ms cosine edges.
  const int gaps = 1 + static_cast<int>(rng.uniform_index(3));
  const int edge = fs / 100;
  for (int gap = 0; gap < gaps; ++gap) {
    const int dur = static_cast<int>(rng.uniform(0.05, 0.15) * fs);
    const int start = static_cast<int>(rng.uniform_index(
        static_cast<std::size_t>(std::max(1, n - dur - 2 * edge))));
    for (int i = 0; i < dur + 2 * edge && start + i < n; ++i) {
      double g = 0.0;
      if (i < edge)
        g = 0.5 * (1.0 + std::cos(std::numbers::pi * i / edge));
      else if (i >= dur + edge)
        g = 0.5 * (1.0 - std::cos(std::numbers::pi * (i - dur - edge) / edge));
      x[static_cast<std::size_t>(start + i)] *= g;
    }
  }

  params = {{"family", "harmonic"},
            {"f0_hz", f0},
            {"mod_hz", trem_rate},
            {"harmonics", harmonics}};
  return x;
}

// Broadband: white noise through a one-pole lowpass, slow sinusoidal AM.
// Narrowband: white noise through a resonant bandpass, amplitude-modulated by
// slow filtered noise. Both record their modulation rate as the split identity.
std::vector<double> synth_noise(Rng& rng, int n, int fs, const Bands& b, json& params) {
  std::vector<double> x(static_cast<std::size_t>(n));
  const double mod = rng.uniform(b.mod_lo, b.mod_hi);
  if (rng.uniform() < 0.5) {
    const double cutoff = rng.uniform(b.cutoff_lo, b.cutoff_hi);
    const double mod_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a = std::exp(-2.0 * std::numbers::pi * cutoff / fs);
    double state = 0.0;
    for (int i = 0; i < n; ++i) {
      state = a * state + (1.0 - a) * rng.normal();
      const double tt = static_cast<double>(i) / fs;
      const double am =
          0.65 + 0.175 * (1.0 + std::sin(2.0 * std::numbers::pi * mod * tt + mod_phase));
      x[static_cast<std::size_t>(i)] = state * am;
    }
    params = {{"family", "broadband"}, {"cutoff_hz", cutoff}, {"mod_hz", mod}};
  } else {
    const double fc = rng.uniform(b.carrier_lo, b.carrier_hi);
    const double bw = rng.uniform(150.0, 400.0);
    // Constant-peak-gain resonator bandpass.
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double q = fc / bw;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    const double env_a = std::exp(-2.0 * std::numbers::pi * mod / fs);
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0, env_state = 0.0;
    std::vector<double> env(static_cast<std::size_t>(n));
    double env_peak = 1e-12;
    for (int i = 0; i < n; ++i) {
      const double w = rng.normal();
      const double y = b0 * w + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = w;
      y2 = y1;
      y1 = y;
      x[static_cast<std::size_t>(i)] = y;
      env_state = env_a * env_state + (1.0 - env_a) * rng.normal();
      env[static_cast<std::size_t>(i)] = env_state;
      env_peak = std::max(env_peak, std::abs(env_state));
    }
    for (int i = 0; i < n; ++i)
      x[static_cast<std::size_t>(i)] *= 1.0 + 0.6 * env[static_cast<std::size_t>(i)] / env_peak;
    params = {{"family", "narrowband"},
              {"carrier_hz", fc},
              {"bandwidth_hz", bw},
              {"mod_hz", mod}};
  }
  return x;
}

}  // namespace

void SynthConfig::validate() const {
  require(sample_rate_hz == 16000, "synth config: sample rate must be 16000");
  require(min_seconds >= 0.2 && max_seconds >= min_seconds && max_seconds <= 10.0,
          "synth config: utterance length range invalid");
  for (int c : {count_pretrain, count_nsvae, count_validation, count_test})
    require(c >= 1, "synth config: each split needs at least one utterance");
  require(target_rms > 0.0 && target_rms < 1.0, "synth config: target rms out of range");
}

void CorpusManifest::save() const {
  json entries_j = json::array();
  for (const CorpusEntry& e : entries)
    entries_j.push_back({{"id", e.id},
                         {"path", e.path},
                         {"kind", e.kind},
                         {"split", e.split},
                         {"params", e.params}});
  const json m = {{"format", 1},
                  {"seed", seed},
                  {"sample_rate_hz", sample_rate_hz},
                  {"entries", entries_j}};
  std::ofstream f(root / "manifest.json");
  f << m.dump(2) << "\n";
  require(f.good(), "cannot write corpus manifest to " + (root / "manifest.json").string());
}

CorpusManifest CorpusManifest::load(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  require(static_cast<bool>(f), "no corpus manifest in " + dir.string());
  json m;
  try {
    f >> m;
    CorpusManifest out;
    out.root = dir;
    out.seed = m.at("seed").get<std::uint64_t>();
    out.sample_rate_hz = m.at("sample_rate_hz").get<int>();
    for (const json& e : m.at("entries"))
      out.entries.push_back({e.at("id").get<std::string>(), e.at("path").get<std::string>(),
                             e.at("kind").get<std::string>(), e.at("split").get<std::string>(),
                             e.value("params", json::object())});
    return out;
  } catch (const json::exception& err) {
    throw InvalidInput("malformed corpus manifest in " + dir.string() + ": " + err.what());
  }
}

std::vector<const CorpusEntry*> CorpusManifest::select(const std::string& kind,
                                                       const std::string& split) const {
  std::vector<const CorpusEntry*> out;
  for (const CorpusEntry& e : entries)
    if (e.kind == kind && e.split == split) out.push_back(&e);
  return out;
}

CorpusManifest synth_corpus(const fs::path& out_dir, const SynthConfig& cfg) {
  cfg.validate();
  fs::create_directories(out_dir / "speech");
  fs::create_directories(out_dir / "noise");

  CorpusManifest manifest;
  manifest.root = out_dir;
  manifest.seed = cfg.seed;
  manifest.sample_rate_hz = cfg.sample_rate_hz;

  const std::array<int, 4> counts = {cfg.count_pretrain, cfg.count_nsvae, cfg.count_validation,
                                     cfg.count_test};
  std::uint64_t utterance_index = 0;
  for (int split = 0; split < 4; ++split) {
    const Bands bands = split_bands(split);
    for (const std::string kind : {"speech", "noise"}) {
      for (int i = 0; i < counts[static_cast<std::size_t>(split)]; ++i) {
        // One generator stream per utterance, so corpus layout changes do not
        // ripple the random draws of other utterances.
        Rng rng(Rng::mix(cfg.seed, ++utterance_index));
        const int n = static_cast<int>(rng.uniform(cfg.min_seconds, cfg.max_seconds) *
                                       cfg.sample_rate_hz);
        json params;
        std::vector<double> samples = kind == "speech"
                                          ? synth_speech(rng, n, cfg.sample_rate_hz, bands, params)
                                          : synth_noise(rng, n, cfg.sample_rate_hz, bands, params);
        normalize_rms(samples, cfg.target_rms);

        char name[64];
        std::snprintf(name, sizeof(name), "%s_%03d.wav", kSplits[static_cast<std::size_t>(split)],
                      i);
        CorpusEntry e;
        e.id = kind + "/" + std::string(name, std::strlen(name) - 4);
        e.path = kind + "/" + name;
        e.kind = kind;
        e.split = kSplits[static_cast<std::size_t>(split)];
        e.params = params;
        TimeSignal sig;
        sig.samples = std::move(samples);
        sig.sample_rate_hz = cfg.sample_rate_hz;
        write_wav(out_dir / e.path, sig);
        manifest.entries.push_back(std::move(e));
      }
    }
  }
  manifest.save();
  return manifest;
}

std::pair<TimeSignal, double> mix_at_snr(const TimeSignal& speech, const TimeSignal& noise,
                                         double snr_db) {
  require(speech.samples.size() == noise.samples.size() && !speech.samples.empty(),
          "mix_at_snr: signals must have equal nonzero length");
  double ps = 0.0, pn = 0.0;
  for (double v : speech.samples) ps += v * v;
  for (double v : noise.samples) pn += v * v;
  require(ps > 0.0 && pn > 0.0, "mix_at_snr: zero-energy input");
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  TimeSignal noisy;
  noisy.sample_rate_hz = speech.sample_rate_hz;
  noisy.samples.resize(speech.samples.size());
  for (std::size_t i = 0; i < speech.samples.size(); ++i)
    noisy.samples[i] = speech.samples[i] + gain * noise.samples[i];
  return {std::move(noisy), gain};
}

TimeSignal match_length(const TimeSignal& sig, std::size_t n, Rng& rng) {
  require(!sig.samples.empty() && n > 0, "match_length: empty input");
  TimeSignal out;
  out.sample_rate_hz = sig.sample_rate_hz;
  out.samples.resize(n);
  const std::size_t len = sig.samples.size();
  if (len >= n) {
    const std::size_t offset = rng.uniform_index(len - n + 1);
    std::copy_n(sig.samples.begin() + static_cast<std::ptrdiff_t>(offset), n,
                out.samples.begin());
  } else {
    const std::size_t rot = rng.uniform_index(len);
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = sig.samples[(rot + i) % len];
  }
  return out;
}

TimeSignal load_entry(const CorpusManifest& m, const CorpusEntry& e) {
  return read_wav(m.root / e.path);
}

BatchIterator::BatchIterator(const CorpusManifest& manifest, const std::string& split,
                             int batch_size, double snr_lo_db, double snr_hi_db,
                             std::uint64_t seed, StftConfig stft)
    : manifest_(manifest),
      speech_(manifest.select("speech", split)),
      noise_(manifest.select("noise", split)),
      batch_size_(batch_size),
      snr_lo_(snr_lo_db),
      snr_hi_(snr_hi_db),
      stft_(stft),
      rng_(seed) {
  require(batch_size_ >= 1, "batch iterator: batch size must be positive");
  require(snr_lo_ <= snr_hi_, "batch iterator: SNR range inverted");
  require(!speech_.empty() && !noise_.empty(),
          "batch iterator: split '" + split + "' has no speech/noise pairs");
  stft_.validate();
  reset(seed);
}

void BatchIterator::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  order_.resize(speech_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  // Fisher-Yates under the iterator seed.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = rng_.uniform_index(i);
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

bool BatchIterator::next(std::vector<BatchItem>& batch) {
  batch.clear();
  if (cursor_ >= order_.size()) return false;
  while (cursor_ < order_.size() && static_cast<int>(batch.size()) < batch_size_) {
    const CorpusEntry& se = *speech_[static_cast<std::size_t>(order_[cursor_++])];
    const CorpusEntry& ne = *noise_[rng_.uniform_index(noise_.size())];
    const double snr = rng_.uniform(snr_lo_, snr_hi_);

    BatchItem item;
    item.clean = load_entry(manifest_, se);
    const TimeSignal raw_noise = load_entry(manifest_, ne);
    TimeSignal matched = match_length(raw_noise, item.clean.samples.size(), rng_);
    auto [noisy, gain] = mix_at_snr(item.clean, matched, snr);
    item.noisy = std::move(noisy);
    item.noise = std::move(matched);
    for (double& v : item.noise.samples) v *= gain;  // store at mixture level
    item.mix = {se.id, ne.id, snr, gain};
    item.x = stft(item.clean, stft_);
    item.v = stft(item.noise, stft_);
    item.y = stft(item.noisy, stft_);
    batch.push_back(std::move(item));
  }
  return true;
}

}  // namespace nsvae
