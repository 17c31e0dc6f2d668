// SPDX-License-Identifier: Apache-2.0
#include "nsvae/losses.hpp"

#include <cmath>
#include <limits>

#include "nsvae/common.hpp"

namespace nsvae {

namespace {

// Keeps the gradient of sqrt(re^2 + im^2) finite at the origin.
constexpr double kMagFloor = 1e-24;

}  // namespace

void LossWeights::validate() const {
  require(beta >= 0.0 && alpha >= 0.0 && adv_weight >= 0.0 && epsilon > 0.0,
          "loss weights must be nonnegative (epsilon positive)");
}

double recon_loss(const ComplexSpectrogram& est, const ComplexSpectrogram& ref) {
  require(est.re.same_shape(ref.re) && est.im.same_shape(ref.im),
          "recon_loss: shape mismatch");
  const int N = ref.frames();
  require(N > 0, "recon_loss: empty spectrogram");
  double acc = 0.0;
  for (std::size_t i = 0; i < ref.re.v.size(); ++i) {
    const double dr = est.re.v[i] - ref.re.v[i];
    const double di = est.im.v[i] - ref.im.v[i];
    const double em = std::sqrt(est.re.v[i] * est.re.v[i] + est.im.v[i] * est.im.v[i] + kMagFloor);
    const double rm = std::sqrt(ref.re.v[i] * ref.re.v[i] + ref.im.v[i] * ref.im.v[i] + kMagFloor);
    const double dm = em - rm;
    acc += dr * dr + di * di + dm * dm;
  }
  return acc / static_cast<double>(N);
}

double pretrain_loss(const ComplexDiagGaussian& dist, const ComplexSpectrogram& est,
                     const ComplexSpectrogram& ref, const LossWeights& w) {
  w.validate();
  const int N = ref.frames();
  return recon_loss(est, ref) + w.beta * kl_to_prior(dist) / static_cast<double>(N);
}

double nsvae_loss(const ComplexDiagGaussian& speech_q, const ComplexDiagGaussian& speech_p,
                  const ComplexDiagGaussian& noise_q, const ComplexDiagGaussian& noise_p,
                  const LossWeights& w, int frames) {
  w.validate();
  require(frames > 0, "nsvae_loss: frames must be positive");
  const double speech = kl_between(speech_q, speech_p);
  const double noise = w.alpha > 0.0 ? kl_between(noise_q, noise_p) : 0.0;
  return (speech + w.alpha * noise) / static_cast<double>(frames);
}

double si_sdr_loss(const TimeSignal& est, const TimeSignal& ref, double epsilon) {
  require(est.samples.size() == ref.samples.size(), "si_sdr_loss: length mismatch");
  require(!ref.samples.empty(), "si_sdr_loss: empty signals");
  double dot = 0.0, ref_e = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    ref_e += ref.samples[i] * ref.samples[i];
  }
  require(ref_e > epsilon, "si_sdr_loss: reference energy below epsilon");
  const double s = dot / ref_e;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.samples.size(); ++i) {
    const double xd = s * ref.samples[i];
    num += xd * xd;
    den += (xd - est.samples[i]) * (xd - est.samples[i]);
  }
  num = std::max(num, epsilon);
  return -10.0 * std::log10(num / (den + epsilon));
}

std::pair<double, double> adversarial_losses(double disc_real, double disc_fake) {
  require(std::isfinite(disc_real) && std::isfinite(disc_fake),
          "adversarial_losses: non-finite scores");
  const double gen = 0.5 * (disc_fake - 1.0) * (disc_fake - 1.0);
  const double disc = 0.5 * (disc_real - 1.0) * (disc_real - 1.0) + 0.5 * disc_fake * disc_fake;
  return {gen, disc};
}

// ---------------------------------------------------------------------------
// tape builders

namespace {

int magnitude_node(Tape& t, const ComplexNodes& x) {
  return t.sqrt_(t.add_const(t.add(t.square(x.re), t.square(x.im)), kMagFloor));
}

}  // namespace

int recon_loss_node(Tape& t, const ComplexNodes& est, const ComplexSpectrogram& ref) {
  require(t.val(est.re).same_shape(ref.re) && t.val(est.im).same_shape(ref.im),
          "recon_loss_node: shape mismatch");
  const int N = ref.frames();
  require(N > 0, "recon_loss_node: empty spectrogram");
  const int rr = t.leaf(ref.re, false);
  const int ri = t.leaf(ref.im, false);
  const int dr = t.sub(est.re, rr);
  const int di = t.sub(est.im, ri);
  const int complex_term = t.add(t.sum(t.square(dr)), t.sum(t.square(di)));
  const int em = magnitude_node(t, est);
  ComplexNodes refn{rr, ri};
  const int rm = magnitude_node(t, refn);
  const int mag_term = t.sum(t.square(t.sub(em, rm)));
  return t.scale(t.add(complex_term, mag_term), 1.0 / static_cast<double>(N));
}

int pretrain_loss_node(Tape& t, const DistNodes& dist, const ComplexNodes& est,
                       const ComplexSpectrogram& ref, const LossWeights& w) {
  w.validate();
  const int recon = recon_loss_node(t, est, ref);
  if (w.beta == 0.0) return recon;
  const int kl = kl_to_prior_node(t, dist);
  return t.add(recon, t.scale(kl, w.beta / static_cast<double>(ref.frames())));
}

int nsvae_loss_node(Tape& t, const DistNodes& speech_q, const ComplexDiagGaussian& speech_p,
                    const DistNodes& noise_q, const ComplexDiagGaussian& noise_p,
                    const LossWeights& w, int frames) {
  w.validate();
  require(frames > 0, "nsvae_loss_node: frames must be positive");
  const DistNodes sp = lift(t, speech_p, false);
  const int speech = kl_between_node(t, speech_q, sp);
  if (w.alpha == 0.0) return t.scale(speech, 1.0 / static_cast<double>(frames));
  const DistNodes np = lift(t, noise_p, false);
  const int noise = kl_between_node(t, noise_q, np);
  return t.scale(t.add(speech, t.scale(noise, w.alpha)), 1.0 / static_cast<double>(frames));
}

int si_sdr_loss_node(Tape& t, int est, const TimeSignal& ref, double epsilon) {
  require(t.val(est).size() == static_cast<std::int64_t>(ref.samples.size()),
          "si_sdr_loss_node: length mismatch");
  Tensor ref_t = Tensor::zeros1(static_cast<int>(ref.samples.size()));
  std::copy(ref.samples.begin(), ref.samples.end(), ref_t.v.begin());
  double ref_e = 0.0;
  for (double x : ref.samples) ref_e += x * x;
  require(ref_e > epsilon, "si_sdr_loss_node: reference energy below epsilon");

  const int refn = t.leaf(ref_t, false);
  const int dot = t.sum(t.mul(est, refn));
  const int s = t.scale(dot, 1.0 / ref_e);
  const int xd = t.scale_by(refn, s);
  const int num = t.clamp(t.sum(t.square(xd)), epsilon, std::numeric_limits<double>::infinity());
  const int den = t.add_const(t.sum(t.square(t.sub(xd, est))), epsilon);
  const int ratio = t.mul(num, t.inv(den));
  return t.scale(t.log_(ratio), -10.0 / std::log(10.0));
}

int adversarial_gen_node(Tape& t, int disc_fake) {
  return t.scale(t.square(t.add_const(disc_fake, -1.0)), 0.5);
}

int adversarial_disc_node(Tape& t, int disc_real, int disc_fake) {
  const int real_term = t.scale(t.square(t.add_const(disc_real, -1.0)), 0.5);
  const int fake_term = t.scale(t.square(disc_fake), 0.5);
  return t.add(real_term, fake_term);
}

}  // namespace nsvae
