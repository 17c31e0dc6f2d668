// SPDX-License-Identifier: Apache-2.0
#include "nsvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <tuple>

#include "nsvae/checkpoint.hpp"
#include "nsvae/common.hpp"
#include "nsvae/latent.hpp"

namespace nsvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Accepts either the checkpoint directory itself or the bundle directory one
// level above it.
fs::path resolve_role(const fs::path& dir, const char* role) {
  const fs::path sub = dir / role;
  return fs::exists(sub / "manifest.json") ? sub : dir;
}

StftConfig manifest_stft(const json& man, const fs::path& dir) {
  if (!man.contains("config") || !man.at("config").contains("stft"))
    throw CheckpointError("checkpoint " + dir.string() + " records no analysis config");
  const json& s = man.at("config").at("stft");
  StftConfig cfg;
  try {
    cfg.frame_length = s.at("frame_length").get<int>();
    cfg.hop = s.at("hop").get<int>();
    cfg.fft_length = s.at("fft_length").get<int>();
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + dir.string() + ": malformed analysis config: " +
                          e.what());
  }
  cfg.validate();
  return cfg;
}

NetworkConfig manifest_network(const json& man, const fs::path& dir) {
  if (!man.contains("config") || !man.at("config").contains("network"))
    throw CheckpointError("checkpoint " + dir.string() + " records no network architecture");
  NetworkConfig net = network_config_from_json(man.at("config").at("network"));
  net.validate();
  return net;
}

bool same_network(const NetworkConfig& a, const NetworkConfig& b) {
  return a.channels == b.channels && a.latent_dim == b.latent_dim &&
         a.lstm_hidden == b.lstm_hidden && a.bins == b.bins;
}

Encoder load_encoder(const fs::path& dir) {
  const json man = load_manifest(dir);
  const NetworkConfig net = manifest_network(man, dir);
  Rng init(1);
  Encoder enc(net, man.at("config").value("dual_head", false), init);
  load_checkpoint(dir, "encoder", enc.params());
  return enc;
}

Decoder load_decoder(const fs::path& dir) {
  const json man = load_manifest(dir);
  const NetworkConfig net = manifest_network(man, dir);
  Rng init(1);
  Decoder dec(net, man.at("config").value("with_skips", false), init);
  load_checkpoint(dir, "decoder", dec.params());
  return dec;
}

Tensor normal_tensor(Rng& rng, int rows, int cols) {
  Tensor t = Tensor::zeros2(rows, cols);
  for (double& v : t.v) v = rng.normal();
  return t;
}

}  // namespace

TimeSignal enhance_with(const TimeSignal& noisy, const StftConfig& cfg, const MaskFn& mask) {
  require(static_cast<bool>(mask), "enhance_with: no mask producer");
  const ComplexSpectrogram y = stft(noisy, cfg);
  const auto [mre, mim] = mask(y);
  TimeSignal out = istft(apply_mask(y, mre, mim));
  out.sample_rate_hz = noisy.sample_rate_hz;
  return out;
}

Enhancer::Enhancer(const fs::path& encoder_ckpt, const fs::path& decoder_ckpt)
    : enc_(load_encoder(resolve_role(encoder_ckpt, "encoder"))),
      dec_(load_decoder(resolve_role(decoder_ckpt, "decoder"))) {
  const fs::path edir = resolve_role(encoder_ckpt, "encoder");
  const fs::path ddir = resolve_role(decoder_ckpt, "decoder");
  require(same_network(enc_.config(), dec_.config()),
          "enhance: encoder and decoder checkpoints record different architectures: " +
              edir.string() + " vs " + ddir.string());
  stft_ = manifest_stft(load_manifest(edir), edir);
  const StftConfig dstft = manifest_stft(load_manifest(ddir), ddir);
  require(stft_.frame_length == dstft.frame_length && stft_.hop == dstft.hop &&
              stft_.fft_length == dstft.fft_length,
          "enhance: encoder and decoder checkpoints record different analysis configs");
  require(stft_.bins() == enc_.config().bins,
          "enhance: checkpoint analysis config inconsistent with its architecture");
}

TimeSignal Enhancer::run(const TimeSignal& noisy, const EnhanceOptions& opts) const {
  return enhance_with(noisy, stft_, [&](const ComplexSpectrogram& y) {
    Tape t;
    const auto pe = enc_.params().lift(t, false);
    const auto pd = dec_.params().lift(t, false);
    const EncoderOutput eo = enc_.forward(t, pe, t.leaf(y.re), t.leaf(y.im));
    ComplexNodes z{eo.speech.mu_re, eo.speech.mu_im};
    if (opts.sample_latent) {
      Rng rng(opts.sample_seed);
      const Tensor n1 = normal_tensor(rng, enc_.config().latent_dim, y.frames());
      const Tensor n2 = normal_tensor(rng, enc_.config().latent_dim, y.frames());
      z = sample_node(t, eo.speech, n1, n2);
    }
    const ComplexNodes m = dec_.forward(t, pd, z, dec_.with_skips() ? &eo.taps : nullptr);
    return std::pair<Tensor, Tensor>{t.val(m.re), t.val(m.im)};
  });
}

TimeSignal enhance(const fs::path& encoder_ckpt, const fs::path& decoder_ckpt,
                   const TimeSignal& noisy, const EnhanceOptions& opts) {
  return Enhancer(encoder_ckpt, decoder_ckpt).run(noisy, opts);
}

double si_sdr_metric(const TimeSignal& est, const TimeSignal& ref) {
  require(!ref.samples.empty(), "si_sdr_metric: empty signals");
  require(est.samples.size() == ref.samples.size(), "si_sdr_metric: length mismatch");
  double dot = 0.0, ref_e = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    ref_e += ref.samples[i] * ref.samples[i];
  }
  require(ref_e > 0.0, "si_sdr_metric: zero reference");
  const double s = dot / ref_e;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    const double xd = s * ref.samples[i];
    num += xd * xd;
    den += (xd - est.samples[i]) * (xd - est.samples[i]);
  }
  if (den == 0.0) return kInf;
  return 10.0 * std::log10(num / den);
}

json LatentDiagnostics::to_json() const {
  return {{"mean_kll", mean_kll},
          {"mean_recon_si_sdr_db", mean_recon_si_sdr_db},
          {"utterances", utterances}};
}

LatentDiagnostics latent_diagnostics(const fs::path& vae_ckpt, const CorpusManifest& corpus,
                                     const std::string& split) {
  const fs::path edir = resolve_role(vae_ckpt, "encoder");
  const fs::path ddir = resolve_role(vae_ckpt, "decoder");
  const json eman = load_manifest(edir);
  const std::string stage = eman.value("config", json::object()).value("stage", "");
  std::string kind;
  if (stage == "pretrain_cvae") kind = "speech";
  else if (stage == "pretrain_nvae") kind = "noise";
  else
    throw InvalidInput("latent_diagnostics: " + edir.string() +
                       " is not a pretrained autoencoder bundle");
  const StftConfig stft_cfg = manifest_stft(eman, edir);
  Encoder enc = load_encoder(edir);
  Decoder dec = load_decoder(ddir);
  require(same_network(enc.config(), dec.config()),
          "latent_diagnostics: encoder and decoder architectures disagree in " +
              vae_ckpt.string());

  std::vector<const CorpusEntry*> entries = corpus.select(kind, split);
  require(!entries.empty(), "latent_diagnostics: no '" + kind + "' utterances in split '" +
                                split + "'");
  // Fixed scoring order: the result must not depend on manifest entry order.
  std::sort(entries.begin(), entries.end(),
            [](const CorpusEntry* a, const CorpusEntry* b) { return a->id < b->id; });

  LatentDiagnostics out;
  for (const CorpusEntry* e : entries) {
    const TimeSignal x = load_entry(corpus, *e);
    const ComplexSpectrogram S = stft(x, stft_cfg);
    Tape t;
    const auto pe = enc.params().lift(t, false);
    const auto pd = dec.params().lift(t, false);
    const EncoderOutput eo = enc.forward(t, pe, t.leaf(S.re), t.leaf(S.im));
    out.mean_kll += kl_to_prior(dist_values(t, eo.speech)) / S.frames();
    const ComplexNodes z{eo.speech.mu_re, eo.speech.mu_im};
    const ComplexNodes m = dec.forward(t, pd, z, dec.with_skips() ? &eo.taps : nullptr);
    ComplexSpectrogram rec;
    rec.re = t.val(m.re);
    rec.im = t.val(m.im);
    rec.config = stft_cfg;
    rec.original_length = S.original_length;
    TimeSignal xhat = istft(rec);
    xhat.sample_rate_hz = x.sample_rate_hz;
    out.mean_recon_si_sdr_db += si_sdr_metric(xhat, x);
    ++out.utterances;
  }
  out.mean_kll /= out.utterances;
  out.mean_recon_si_sdr_db /= out.utterances;
  return out;
}

namespace {

// Mean and 95% normal-approximation half-width; NaN half-width under two rows.
std::pair<double, double> aggregate(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, kNan};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n - 1.0;
  return {mean, 1.96 * std::sqrt(var / n)};
}

std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void append_text_row(std::string& out, std::size_t idw, const std::string& id,
                     const std::string& a, const std::string& b, bool has_b) {
  char buf[160];
  if (has_b)
    std::snprintf(buf, sizeof buf, "%-*s  %14s  %16s\n", static_cast<int>(idw), id.c_str(),
                  a.c_str(), b.c_str());
  else
    std::snprintf(buf, sizeof buf, "%-*s  %14s\n", static_cast<int>(idw), id.c_str(), a.c_str());
  out += buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& field) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  require(end != begin && *end == '\0', "parse_csv: bad numeric field '" + field + "'");
  return v;
}

}  // namespace

MetricsReport report(const std::vector<MetricRow>& rows) {
  require(!rows.empty(), "report: no rows");
  MetricsReport r;
  r.rows = rows;
  r.has_recon = !std::isnan(rows.front().recon_si_sdr_db);
  std::vector<double> si, recon;
  si.reserve(rows.size());
  for (const MetricRow& row : rows) {
    require(!std::isnan(row.si_sdr_db), "report: si_sdr_db is not a number for '" + row.id + "'");
    require(std::isnan(row.recon_si_sdr_db) != r.has_recon,
            "report: rows disagree on the reconstruction column");
    si.push_back(row.si_sdr_db);
    if (r.has_recon) recon.push_back(row.recon_si_sdr_db);
  }
  std::tie(r.mean_si_sdr_db, r.ci95_si_sdr_db) = aggregate(si);
  if (r.has_recon)
    std::tie(r.mean_recon_si_sdr_db, r.ci95_recon_si_sdr_db) = aggregate(recon);
  else
    r.mean_recon_si_sdr_db = r.ci95_recon_si_sdr_db = kNan;
  return r;
}

std::string render_text(const MetricsReport& r) {
  std::size_t idw = 4;
  for (const MetricRow& row : r.rows) idw = std::max(idw, row.id.size());
  std::string out;
  append_text_row(out, idw, "id", "si_sdr_db", "recon_si_sdr_db", r.has_recon);
  for (const MetricRow& row : r.rows)
    append_text_row(out, idw, row.id, fixed4(row.si_sdr_db),
                    r.has_recon ? fixed4(row.recon_si_sdr_db) : "", r.has_recon);
  append_text_row(out, idw, "n", std::to_string(r.rows.size()),
                  r.has_recon ? std::to_string(r.rows.size()) : "", r.has_recon);
  append_text_row(out, idw, "mean", fixed4(r.mean_si_sdr_db),
                  r.has_recon ? fixed4(r.mean_recon_si_sdr_db) : "", r.has_recon);
  const bool na = std::isnan(r.ci95_si_sdr_db);
  append_text_row(out, idw, "ci95", na ? "n/a" : fixed4(r.ci95_si_sdr_db),
                  r.has_recon ? (na ? "n/a" : fixed4(r.ci95_recon_si_sdr_db)) : "", r.has_recon);
  return out;
}

std::string render_csv(const MetricsReport& r) {
  std::string out = r.has_recon ? "id,si_sdr_db,recon_si_sdr_db\n" : "id,si_sdr_db\n";
  for (const MetricRow& row : r.rows) {
    require(row.id.find(',') == std::string::npos && row.id.find('\n') == std::string::npos,
            "render_csv: id contains a delimiter: '" + row.id + "'");
    out += row.id;
    out += ',';
    out += full_precision(row.si_sdr_db);
    if (r.has_recon) {
      out += ',';
      out += full_precision(row.recon_si_sdr_db);
    }
    out += '\n';
  }
  return out;
}

std::vector<MetricRow> parse_csv(const std::string& csv) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t pos = csv.find('\n', start);
    if (pos == std::string::npos) pos = csv.size();
    if (pos > start) lines.push_back(csv.substr(start, pos - start));
    start = pos + 1;
  }
  require(!lines.empty(), "parse_csv: empty input");
  bool has_recon = false;
  if (lines.front() == "id,si_sdr_db,recon_si_sdr_db") has_recon = true;
  else
    require(lines.front() == "id,si_sdr_db", "parse_csv: unrecognized header '" + lines.front() +
                                                 "'");
  std::vector<MetricRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::vector<std::string> f = split_fields(lines[i]);
    require(f.size() == (has_recon ? 3u : 2u), "parse_csv: wrong field count on line " +
                                                   std::to_string(i + 1));
    MetricRow row;
    row.id = f[0];
    row.si_sdr_db = parse_double(f[1]);
    if (has_recon) row.recon_si_sdr_db = parse_double(f[2]);
    rows.push_back(std::move(row));
  }
  return rows;
}

EnhancementEval evaluate_enhancement(const CorpusManifest& corpus, const std::string& split,
                                     const fs::path& encoder_ckpt, const fs::path& decoder_ckpt,
                                     double snr_db, std::uint64_t seed,
                                     const EnhanceOptions& opts) {
  const Enhancer enh(encoder_ckpt, decoder_ckpt);
  BatchIterator it(corpus, split, 1, snr_db, snr_db, seed, enh.stft_config());
  std::vector<MetricRow> enhanced, unprocessed;
  std::vector<BatchItem> batch;
  while (it.next(batch)) {
    for (const BatchItem& item : batch) {
      const TimeSignal est = enh.run(item.noisy, opts);
      enhanced.push_back({item.mix.speech_id, si_sdr_metric(est, item.clean), kNan});
      unprocessed.push_back({item.mix.speech_id, si_sdr_metric(item.noisy, item.clean), kNan});
    }
  }
  return {report(enhanced), report(unprocessed)};
}

}  // namespace nsvae
