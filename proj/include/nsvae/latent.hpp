// SPDX-License-Identifier: Apache-2.0
//
// Circularly-asymmetric complex diagonal Gaussians. Each dimension carries a
// complex mean mu, a real variance sigma = E|z-mu|^2 and a complex relation
// delta = E[(z-mu)^2] with |delta| < sigma. Every formula is routed through
// the equivalent 2x2 real Gaussian embedding so sampling, KL divergences and
// their gradients share one code path.
#ifndef NSVAE_LATENT_HPP
#define NSVAE_LATENT_HPP

#include <complex>
#include <vector>

#include "nsvae/autodiff.hpp"
#include "nsvae/tensor.hpp"

namespace nsvae {

// Margin keeping the embedded covariance positive definite when |delta|
// approaches sigma.
constexpr double kEpsPsd = 1e-6;

struct ComplexDiagGaussian {
  Tensor mu_re;     // length L
  Tensor mu_im;     // length L
  Tensor sigma;     // length L, strictly positive
  Tensor delta_re;  // length L
  Tensor delta_im;  // length L

  int dim() const { return mu_re.d[0]; }
  void validate() const;
  static ComplexDiagGaussian standard(int L);
};

// Real bivariate embedding of one dimension: mean (Re mu, Im mu) and
// covariance 0.5 * [[sigma+Re delta, Im delta], [Im delta, sigma-Re delta]].
struct RealEmbedding {
  double mean[2];
  double cov[2][2];
};
RealEmbedding real_embedding(const ComplexDiagGaussian& d, int i);

// Reparameterized draw: noise holds 2L standard normals (n1_0, n2_0, n1_1,
// n2_1, ...). With zero noise the draw is exactly mu.
std::vector<std::complex<double>> sample(const ComplexDiagGaussian& d,
                                         const std::vector<double>& noise);

// KL(d || standard complex prior): sum_i sigma_i + |mu_i|^2 - 1
//   - 0.5 ln(sigma_i^2 - |delta_i|^2).
double kl_to_prior(const ComplexDiagGaussian& d);

// KL(q || p) as the sum over dimensions of the 2-D real Gaussian KL between
// the embeddings.
double kl_between(const ComplexDiagGaussian& q, const ComplexDiagGaussian& p);

// Maps unconstrained head outputs into the valid parameter region:
// sigma = exp(clamp(raw_s, -10, 10)), delta = sigma (1-eps) tanh(raw_t) e^{i phase}.
ComplexDiagGaussian constrain_raw_outputs(const Tensor& raw_mu_re, const Tensor& raw_mu_im,
                                          const Tensor& raw_s, const Tensor& raw_t,
                                          const Tensor& raw_phase);

// ---------------------------------------------------------------------------
// Tape-side builders. Tensors may be rank-1 (one distribution) or rank-2
// (L rows by N frame columns); all formulas are elementwise over entries.

struct DistNodes {
  int mu_re = -1;
  int mu_im = -1;
  int sigma = -1;
  int delta_re = -1;
  int delta_im = -1;
};

struct ComplexNodes {
  int re = -1;
  int im = -1;
};

DistNodes constrain_raw_nodes(Tape& t, int raw_mu_re, int raw_mu_im, int raw_s, int raw_t,
                              int raw_phase);

// Scalar node: KL to the standard prior summed over every entry.
int kl_to_prior_node(Tape& t, const DistNodes& d);

// Scalar node: KL(q||p) summed over every entry. Pass stop_gradient_p=true
// when p is a frozen target (its leaves then receive no gradient anyway, but
// the flag documents intent at call sites).
int kl_between_node(Tape& t, const DistNodes& q, const DistNodes& p);

// Reparameterized draw on the tape; noise is a constant with the same shape
// as the parameter tensors interleaved as two tensors (n1, n2).
ComplexNodes sample_node(Tape& t, const DistNodes& d, const Tensor& noise1, const Tensor& noise2);

DistNodes lift(Tape& t, const ComplexDiagGaussian& d, bool requires_grad);

// Inverse of lift: reads a distribution's current values back off the tape.
ComplexDiagGaussian dist_values(const Tape& t, const DistNodes& d);

}  // namespace nsvae

#endif
