// SPDX-License-Identifier: Apache-2.0
#include "nsvae/latent.hpp"

#include <cmath>
#include <limits>

#include "nsvae/common.hpp"

namespace nsvae {

void ComplexDiagGaussian::validate() const {
  const int L = dim();
  require(L > 0, "distribution must have positive dimension");
  require(mu_im.same_shape(mu_re) && sigma.same_shape(mu_re) && delta_re.same_shape(mu_re) &&
              delta_im.same_shape(mu_re),
          "distribution parameter shapes differ");
  for (std::size_t i = 0; i < mu_re.v.size(); ++i) {
    const double s = sigma.v[i];
    require(std::isfinite(s) && s > 0.0, "sigma must be positive and finite");
    const double dmag = std::hypot(delta_re.v[i], delta_im.v[i]);
    // A few ulps of slack: the constraint map can land exactly on the bound.
    const double slack = 1.0 + 8.0 * std::numeric_limits<double>::epsilon();
    require(dmag <= (1.0 - kEpsPsd) * s * slack, "relation magnitude exceeds (1-eps)*sigma");
    require(std::isfinite(mu_re.v[i]) && std::isfinite(mu_im.v[i]), "mu must be finite");
  }
}

ComplexDiagGaussian ComplexDiagGaussian::standard(int L) {
  ComplexDiagGaussian d;
  d.mu_re = Tensor::zeros1(L);
  d.mu_im = Tensor::zeros1(L);
  d.sigma = Tensor::zeros1(L);
  std::fill(d.sigma.v.begin(), d.sigma.v.end(), 1.0);
  d.delta_re = Tensor::zeros1(L);
  d.delta_im = Tensor::zeros1(L);
  return d;
}

RealEmbedding real_embedding(const ComplexDiagGaussian& d, int i) {
  RealEmbedding e;
  e.mean[0] = d.mu_re.at(i);
  e.mean[1] = d.mu_im.at(i);
  const double s = d.sigma.at(i);
  const double dr = d.delta_re.at(i);
  const double di = d.delta_im.at(i);
  e.cov[0][0] = 0.5 * (s + dr);
  e.cov[0][1] = 0.5 * di;
  e.cov[1][0] = 0.5 * di;
  e.cov[1][1] = 0.5 * (s - dr);
  return e;
}

namespace {

// Lower-triangular Cholesky factor of a 2x2 SPD matrix.
void chol2(const double cov[2][2], double& l11, double& l21, double& l22) {
  l11 = std::sqrt(cov[0][0]);
  l21 = cov[0][1] / l11;
  l22 = std::sqrt(std::max(cov[1][1] - l21 * l21, 0.0));
}

}  // namespace

std::vector<std::complex<double>> sample(const ComplexDiagGaussian& d,
                                         const std::vector<double>& noise) {
  const int L = d.dim();
  require(static_cast<int>(noise.size()) == 2 * L, "sample: noise must hold 2L values");
  for (double n : noise) require(std::isfinite(n), "sample: non-finite noise");
  std::vector<std::complex<double>> z(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    const RealEmbedding e = real_embedding(d, i);
    double l11, l21, l22;
    chol2(e.cov, l11, l21, l22);
    const double n1 = noise[static_cast<std::size_t>(2 * i)];
    const double n2 = noise[static_cast<std::size_t>(2 * i + 1)];
    z[static_cast<std::size_t>(i)] = {e.mean[0] + l11 * n1, e.mean[1] + l21 * n1 + l22 * n2};
  }
  return z;
}

double kl_to_prior(const ComplexDiagGaussian& d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.sigma.v.size(); ++i) {
    const double s = d.sigma.v[i];
    const double m2 = d.mu_re.v[i] * d.mu_re.v[i] + d.mu_im.v[i] * d.mu_im.v[i];
    const double d2 = d.delta_re.v[i] * d.delta_re.v[i] + d.delta_im.v[i] * d.delta_im.v[i];
    const double gap = s * s - d2;
    require(gap > 0.0, "kl_to_prior: sigma^2 - |delta|^2 must be positive");
    acc += s + m2 - 1.0 - 0.5 * std::log(gap);
  }
  return acc;
}

double kl_between(const ComplexDiagGaussian& q, const ComplexDiagGaussian& p) {
  require(q.dim() == p.dim() && q.mu_re.same_shape(p.mu_re), "kl_between: dimension mismatch");
  double acc = 0.0;
  for (int i = 0; i < q.dim(); ++i) {
    const RealEmbedding eq = real_embedding(q, i);
    const RealEmbedding ep = real_embedding(p, i);
    const double detq = eq.cov[0][0] * eq.cov[1][1] - eq.cov[0][1] * eq.cov[0][1];
    const double detp = ep.cov[0][0] * ep.cov[1][1] - ep.cov[0][1] * ep.cov[0][1];
    require(detq > 0.0 && detp > 0.0, "kl_between: embedded covariance not positive definite");
    const double tr =
        (ep.cov[1][1] * eq.cov[0][0] - 2.0 * ep.cov[0][1] * eq.cov[0][1] +
         ep.cov[0][0] * eq.cov[1][1]) /
        detp;
    const double dx = ep.mean[0] - eq.mean[0];
    const double dy = ep.mean[1] - eq.mean[1];
    const double maha =
        (ep.cov[1][1] * dx * dx - 2.0 * ep.cov[0][1] * dx * dy + ep.cov[0][0] * dy * dy) / detp;
    acc += 0.5 * (tr + maha - 2.0 + std::log(detp / detq));
  }
  return acc;
}

ComplexDiagGaussian constrain_raw_outputs(const Tensor& raw_mu_re, const Tensor& raw_mu_im,
                                          const Tensor& raw_s, const Tensor& raw_t,
                                          const Tensor& raw_phase) {
  require(raw_mu_im.same_shape(raw_mu_re) && raw_s.same_shape(raw_mu_re) &&
              raw_t.same_shape(raw_mu_re) && raw_phase.same_shape(raw_mu_re),
          "constrain_raw_outputs: shape mismatch");
  ComplexDiagGaussian d;
  d.mu_re = raw_mu_re;
  d.mu_im = raw_mu_im;
  d.sigma = raw_s;
  d.delta_re = raw_s;
  d.delta_im = raw_s;
  for (std::size_t i = 0; i < raw_s.v.size(); ++i) {
    const double s = std::exp(std::clamp(raw_s.v[i], -10.0, 10.0));
    const double mag = s * (1.0 - kEpsPsd) * std::tanh(raw_t.v[i]);
    d.sigma.v[i] = s;
    d.delta_re.v[i] = mag * std::cos(raw_phase.v[i]);
    d.delta_im.v[i] = mag * std::sin(raw_phase.v[i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// tape builders

DistNodes constrain_raw_nodes(Tape& t, int raw_mu_re, int raw_mu_im, int raw_s, int raw_t,
                              int raw_phase) {
  DistNodes d;
  d.mu_re = raw_mu_re;
  d.mu_im = raw_mu_im;
  d.sigma = t.exp_(t.clamp(raw_s, -10.0, 10.0));
  const int mag = t.mul(t.scale(d.sigma, 1.0 - kEpsPsd), t.tanh_(raw_t));
  d.delta_re = t.mul(mag, t.cos_(raw_phase));
  d.delta_im = t.mul(mag, t.sin_(raw_phase));
  return d;
}

int kl_to_prior_node(Tape& t, const DistNodes& d) {
  const int m2 = t.add(t.square(d.mu_re), t.square(d.mu_im));
  const int d2 = t.add(t.square(d.delta_re), t.square(d.delta_im));
  const int gap = t.sub(t.square(d.sigma), d2);
  const int per = t.add_const(t.sub(t.add(d.sigma, m2), t.scale(t.log_(gap), 0.5)), -1.0);
  return t.sum(per);
}

namespace {

struct EmbeddingNodes {
  int c11, c12, c22;  // 2x2 covariance entries (c21 = c12)
  int det;
};

EmbeddingNodes embed(Tape& t, const DistNodes& d) {
  EmbeddingNodes e;
  e.c11 = t.scale(t.add(d.sigma, d.delta_re), 0.5);
  e.c22 = t.scale(t.sub(d.sigma, d.delta_re), 0.5);
  e.c12 = t.scale(d.delta_im, 0.5);
  e.det = t.sub(t.mul(e.c11, e.c22), t.square(e.c12));
  return e;
}

}  // namespace

int kl_between_node(Tape& t, const DistNodes& q, const DistNodes& p) {
  const EmbeddingNodes eq = embed(t, q);
  const EmbeddingNodes ep = embed(t, p);
  const int inv_detp = t.inv(ep.det);
  // tr(Sp^-1 Sq)
  const int tr_num = t.sub(t.add(t.mul(ep.c22, eq.c11), t.mul(ep.c11, eq.c22)),
                           t.scale(t.mul(ep.c12, eq.c12), 2.0));
  const int tr = t.mul(tr_num, inv_detp);
  // (mp-mq)^T Sp^-1 (mp-mq)
  const int dx = t.sub(p.mu_re, q.mu_re);
  const int dy = t.sub(p.mu_im, q.mu_im);
  const int maha_num = t.sub(t.add(t.mul(ep.c22, t.square(dx)), t.mul(ep.c11, t.square(dy))),
                             t.scale(t.mul(t.mul(ep.c12, dx), dy), 2.0));
  const int maha = t.mul(maha_num, inv_detp);
  const int logdet = t.sub(t.log_(ep.det), t.log_(eq.det));
  const int per = t.scale(t.add_const(t.add(t.add(tr, maha), logdet), -2.0), 0.5);
  return t.sum(per);
}

ComplexNodes sample_node(Tape& t, const DistNodes& d, const Tensor& noise1, const Tensor& noise2) {
  for (double n : noise1.v) require(std::isfinite(n), "sample_node: non-finite noise");
  for (double n : noise2.v) require(std::isfinite(n), "sample_node: non-finite noise");
  const EmbeddingNodes e = embed(t, d);
  const int l11 = t.sqrt_(e.c11);
  const int l21 = t.mul(e.c12, t.inv(l11));
  const int l22 = t.sqrt_(t.sub(e.c22, t.square(l21)));
  const int n1 = t.leaf(noise1, false);
  const int n2 = t.leaf(noise2, false);
  ComplexNodes z;
  z.re = t.add(d.mu_re, t.mul(l11, n1));
  z.im = t.add(d.mu_im, t.add(t.mul(l21, n1), t.mul(l22, n2)));
  return z;
}

DistNodes lift(Tape& t, const ComplexDiagGaussian& d, bool requires_grad) {
  DistNodes n;
  n.mu_re = t.leaf(d.mu_re, requires_grad);
  n.mu_im = t.leaf(d.mu_im, requires_grad);
  n.sigma = t.leaf(d.sigma, requires_grad);
  n.delta_re = t.leaf(d.delta_re, requires_grad);
  n.delta_im = t.leaf(d.delta_im, requires_grad);
  return n;
}

ComplexDiagGaussian dist_values(const Tape& t, const DistNodes& d) {
  ComplexDiagGaussian out;
  out.mu_re = t.val(d.mu_re);
  out.mu_im = t.val(d.mu_im);
  out.sigma = t.val(d.sigma);
  out.delta_re = t.val(d.delta_re);
  out.delta_im = t.val(d.delta_im);
  return out;
}

}  // namespace nsvae
