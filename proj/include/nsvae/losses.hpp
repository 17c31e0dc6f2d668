// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: combined complex+magnitude reconstruction, beta-VAE
// pretraining, dual-latent KL matching, SI-SDR and least-squares adversarial
// terms. Each exists as a plain evaluation (for validation scoring) and as a
// tape builder (for gradients); the two are cross-checked in tests.
#ifndef NSVAE_LOSSES_HPP
#define NSVAE_LOSSES_HPP

#include <utility>
#include <vector>

#include "nsvae/autodiff.hpp"
#include "nsvae/latent.hpp"
#include "nsvae/spectral.hpp"

namespace nsvae {

struct LossWeights {
  double beta = 0.01;       // KL weight of the pretraining objective
  double alpha = 1.0;       // noise-latent weight of the matching objective
  double adv_weight = 1.0;  // generator-side adversarial weight
  double epsilon = 1e-8;    // numerical floor (SI-SDR)
  void validate() const;
};

// (1/N) sum_n (||X_n - Xhat_n||^2 + || |X_n| - |Xhat_n| ||^2)
double recon_loss(const ComplexSpectrogram& est, const ComplexSpectrogram& ref);

// Frame-averaged KL to the standard prior added at weight beta.
double pretrain_loss(const ComplexDiagGaussian& dist, const ComplexSpectrogram& est,
                     const ComplexSpectrogram& ref, const LossWeights& w);

// Frame-averaged KL(q_speech||p_speech) + alpha KL(q_noise||p_noise); the
// targets are constants by construction.
double nsvae_loss(const ComplexDiagGaussian& speech_q, const ComplexDiagGaussian& speech_p,
                  const ComplexDiagGaussian& noise_q, const ComplexDiagGaussian& noise_p,
                  const LossWeights& w, int frames);

// -10 log10(||x_d||^2 / (||x_d - est||^2 + eps)), x_d the projection of est
// onto ref; eps also floors the numerator.
double si_sdr_loss(const TimeSignal& est, const TimeSignal& ref, double epsilon = 1e-8);

// LSGAN pair: (generator term, discriminator term).
std::pair<double, double> adversarial_losses(double disc_real, double disc_fake);

// ---------------------------------------------------------------------------
// tape builders

int recon_loss_node(Tape& t, const ComplexNodes& est, const ComplexSpectrogram& ref);

int pretrain_loss_node(Tape& t, const DistNodes& dist, const ComplexNodes& est,
                       const ComplexSpectrogram& ref, const LossWeights& w);

// Targets are lifted internally as constants: no gradient can flow into them.
int nsvae_loss_node(Tape& t, const DistNodes& speech_q, const ComplexDiagGaussian& speech_p,
                    const DistNodes& noise_q, const ComplexDiagGaussian& noise_p,
                    const LossWeights& w, int frames);

int si_sdr_loss_node(Tape& t, int est, const TimeSignal& ref, double epsilon = 1e-8);

int adversarial_gen_node(Tape& t, int disc_fake);
int adversarial_disc_node(Tape& t, int disc_real, int disc_fake);

}  // namespace nsvae

#endif
