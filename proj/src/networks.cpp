// SPDX-License-Identifier: Apache-2.0
#include "nsvae/networks.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "nsvae/common.hpp"

namespace nsvae {

namespace {

constexpr double kNormEps = 1e-5;

Tensor glorot(Rng& rng, int rows, int cols) {
  Tensor w = Tensor::zeros2(rows, cols);
  const double lim = std::sqrt(6.0 / (rows + cols));
  for (double& x : w.v) x = rng.uniform(-lim, lim);
  return w;
}

Tensor const1(int n, double c) {
  Tensor b = Tensor::zeros1(n);
  for (double& x : b.v) x = c;
  return b;
}

// Gate bias starts at zero except the forget gate, which opens at one.
Tensor lstm_bias(int hidden) {
  Tensor b = Tensor::zeros1(4 * hidden);
  for (int i = hidden; i < 2 * hidden; ++i) b.v[static_cast<std::size_t>(i)] = 1.0;
  return b;
}

ConvGeom block_geom(int packed_c_in, int f_in) {
  ConvGeom g;
  g.c_in = packed_c_in;
  g.f_in = f_in;
  return g;
}

}  // namespace

namespace detail {

// One complex conv block on packed channels. The packed kernel realises
// (Wr + i Wi) * (xr + i xi) as a single real conv.
std::pair<int, int> conv_block(Tape& t, const std::vector<int>& p, const ComplexConvHandles& h,
                               int xr, int xi, const ConvGeom& g, bool activate) {
  const int wr = p[static_cast<std::size_t>(h.wr)];
  const int wi = p[static_cast<std::size_t>(h.wi)];
  const int wp = t.concat_dim0(std::array{t.concat_cols(std::array{wr, t.neg(wi)}),
                                          t.concat_cols(std::array{wi, wr})});
  const int y = t.conv2d(t.concat_dim0(std::array{xr, xi}), wp, g);
  const int c_out = t.val(p[static_cast<std::size_t>(h.br)]).d[0];
  int yr = t.bias_add_dim0(t.slice_dim0(y, 0, c_out), p[static_cast<std::size_t>(h.br)]);
  int yi = t.bias_add_dim0(t.slice_dim0(y, c_out, 2 * c_out), p[static_cast<std::size_t>(h.bi)]);
  if (activate) {
    yr = t.channel_norm(yr, p[static_cast<std::size_t>(h.gr)], p[static_cast<std::size_t>(h.betar)], kNormEps);
    yi = t.channel_norm(yi, p[static_cast<std::size_t>(h.gi)], p[static_cast<std::size_t>(h.betai)], kNormEps);
    yr = t.prelu(yr, p[static_cast<std::size_t>(h.ar)]);
    yi = t.prelu(yi, p[static_cast<std::size_t>(h.ai)]);
  }
  return {yr, yi};
}

// Complex transposed conv block. The packing differs from conv_block because
// the operator is the upsampling adjoint pattern: with kernel parts (wr, wi)
// the map stays complex-linear in the input.
std::pair<int, int> deconv_block(Tape& t, const std::vector<int>& p, const ComplexConvHandles& h,
                                 int yr, int yi, const ConvGeom& g, bool activate) {
  const int wr = p[static_cast<std::size_t>(h.wr)];
  const int wi = p[static_cast<std::size_t>(h.wi)];
  const int wp = t.concat_dim0(std::array{t.concat_cols(std::array{wr, wi}),
                                          t.concat_cols(std::array{t.neg(wi), wr})});
  const int x = t.conv2d_transpose(t.concat_dim0(std::array{yr, yi}), wp, g);
  const int c_out = t.val(p[static_cast<std::size_t>(h.br)]).d[0];
  int xr = t.bias_add_dim0(t.slice_dim0(x, 0, c_out), p[static_cast<std::size_t>(h.br)]);
  int xi = t.bias_add_dim0(t.slice_dim0(x, c_out, 2 * c_out), p[static_cast<std::size_t>(h.bi)]);
  if (activate) {
    xr = t.channel_norm(xr, p[static_cast<std::size_t>(h.gr)], p[static_cast<std::size_t>(h.betar)], kNormEps);
    xi = t.channel_norm(xi, p[static_cast<std::size_t>(h.gi)], p[static_cast<std::size_t>(h.betai)], kNormEps);
    xr = t.prelu(xr, p[static_cast<std::size_t>(h.ar)]);
    xi = t.prelu(xi, p[static_cast<std::size_t>(h.ai)]);
  }
  return {xr, xi};
}

// Unrolled LSTM over the columns of x (features, frames) -> (hidden, frames).
int run_lstm(Tape& t, const std::vector<int>& p, const LstmHandles& h, int x, int hidden) {
  const int frames = t.val(x).d[1];
  const int pre = t.bias_add_dim0(t.matmul(p[static_cast<std::size_t>(h.wx)], x),
                                  p[static_cast<std::size_t>(h.b)]);
  int hprev = t.leaf(Tensor::zeros2(hidden, 1));
  int cprev = t.leaf(Tensor::zeros2(hidden, 1));
  std::vector<int> hs;
  hs.reserve(static_cast<std::size_t>(frames));
  for (int n = 0; n < frames; ++n) {
    const int gates =
        t.add(t.slice_cols(pre, n, n + 1), t.matmul(p[static_cast<std::size_t>(h.wh)], hprev));
    const int gi = t.sigmoid_(t.slice_dim0(gates, 0, hidden));
    const int gf = t.sigmoid_(t.slice_dim0(gates, hidden, 2 * hidden));
    const int gg = t.tanh_(t.slice_dim0(gates, 2 * hidden, 3 * hidden));
    const int go = t.sigmoid_(t.slice_dim0(gates, 3 * hidden, 4 * hidden));
    cprev = t.add(t.mul(gf, cprev), t.mul(gi, gg));
    hprev = t.mul(go, t.tanh_(cprev));
    hs.push_back(hprev);
  }
  return t.concat_cols(hs);
}

std::pair<int, int> complex_lstm(Tape& t, const std::vector<int>& p, const LstmHandles& re,
                                 const LstmHandles& im, int xr, int xi, int hidden) {
  const int rr = run_lstm(t, p, re, xr, hidden);
  const int ri = run_lstm(t, p, re, xi, hidden);
  const int ir = run_lstm(t, p, im, xr, hidden);
  const int ii = run_lstm(t, p, im, xi, hidden);
  return {t.sub(rr, ii), t.add(ri, ir)};
}

std::pair<int, int> complex_linear(Tape& t, const std::vector<int>& p,
                                   const ComplexLinearHandles& h, int xr, int xi) {
  const int wr = p[static_cast<std::size_t>(h.wr)];
  const int wi = p[static_cast<std::size_t>(h.wi)];
  const int outr = t.sub(t.matmul(wr, xr), t.matmul(wi, xi));
  const int outi = t.add(t.matmul(wr, xi), t.matmul(wi, xr));
  return {t.bias_add_dim0(outr, p[static_cast<std::size_t>(h.br)]),
          t.bias_add_dim0(outi, p[static_cast<std::size_t>(h.bi)])};
}

}  // namespace detail

namespace {

int real_linear(Tape& t, const std::vector<int>& p, const RealLinearHandles& h, int x) {
  return t.bias_add_dim0(t.matmul(p[static_cast<std::size_t>(h.w)], x),
                         p[static_cast<std::size_t>(h.b)]);
}

void register_conv_block(ParamStore& s, Rng& rng, const std::string& prefix, int c_in, int c_out,
                         bool affine, ComplexConvHandles& h) {
  const int patch = c_in * 5 * 2;
  h.wr = s.add(prefix + ".wr", glorot(rng, c_out, patch));
  h.wi = s.add(prefix + ".wi", glorot(rng, c_out, patch));
  h.br = s.add(prefix + ".br", Tensor::zeros1(c_out));
  h.bi = s.add(prefix + ".bi", Tensor::zeros1(c_out));
  if (affine) {
    h.gr = s.add(prefix + ".gr", const1(c_out, 1.0));
    h.betar = s.add(prefix + ".betar", Tensor::zeros1(c_out));
    h.gi = s.add(prefix + ".gi", const1(c_out, 1.0));
    h.betai = s.add(prefix + ".betai", Tensor::zeros1(c_out));
    h.ar = s.add(prefix + ".ar", const1(c_out, 0.25));
    h.ai = s.add(prefix + ".ai", const1(c_out, 0.25));
  }
}

// Transposed conv kernels are stored as (input channels, output patch).
void register_deconv_block(ParamStore& s, Rng& rng, const std::string& prefix, int c_in, int c_out,
                           bool affine, ComplexConvHandles& h) {
  const int patch = c_out * 5 * 2;
  h.wr = s.add(prefix + ".wr", glorot(rng, c_in, patch));
  h.wi = s.add(prefix + ".wi", glorot(rng, c_in, patch));
  h.br = s.add(prefix + ".br", Tensor::zeros1(c_out));
  h.bi = s.add(prefix + ".bi", Tensor::zeros1(c_out));
  if (affine) {
    h.gr = s.add(prefix + ".gr", const1(c_out, 1.0));
    h.betar = s.add(prefix + ".betar", Tensor::zeros1(c_out));
    h.gi = s.add(prefix + ".gi", const1(c_out, 1.0));
    h.betai = s.add(prefix + ".betai", Tensor::zeros1(c_out));
    h.ar = s.add(prefix + ".ar", const1(c_out, 0.25));
    h.ai = s.add(prefix + ".ai", const1(c_out, 0.25));
  }
}

void register_lstm(ParamStore& s, Rng& rng, const std::string& prefix, int input, int hidden,
                   LstmHandles& h) {
  h.wx = s.add(prefix + ".wx", glorot(rng, 4 * hidden, input));
  h.wh = s.add(prefix + ".wh", glorot(rng, 4 * hidden, hidden));
  h.b = s.add(prefix + ".b", lstm_bias(hidden));
}

}  // namespace

void NetworkConfig::validate() const {
  require(channels.size() == 6, "network config: six conv channel counts expected");
  for (int c : channels) require(c > 0, "network config: channel counts must be positive");
  require(latent_dim > 0, "network config: latent_dim must be positive");
  require(lstm_hidden > 0, "network config: lstm_hidden must be positive");
  require(bins >= 65 && (bins - 1) % 64 == 0,
          "network config: bins-1 must be a positive multiple of 64");
}

int ParamStore::add(std::string name, Tensor init) {
  require(!name.empty(), "param store: empty name");
  require(index_.find(name) == index_.end(), "param store: duplicate name " + name);
  require(init.size() > 0, "param store: empty tensor for " + name);
  const int h = count();
  index_.emplace(name, h);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return h;
}

int ParamStore::handle(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

std::int64_t ParamStore::total_size() const {
  std::int64_t n = 0;
  for (const Tensor& v : values_) n += v.size();
  return n;
}

std::vector<int> ParamStore::lift(Tape& t, bool requires_grad) const {
  std::vector<int> ids;
  ids.reserve(values_.size());
  for (const Tensor& v : values_) ids.push_back(t.leaf(v, requires_grad));
  return ids;
}

GradAccum::GradAccum(const ParamStore& ps) : grads_(static_cast<std::size_t>(ps.count())) {}

void GradAccum::add_scaled(Tape& t, const std::vector<int>& ids, double scale) {
  require(ids.size() == grads_.size(), "grad accum: handle count mismatch");
  for (std::size_t h = 0; h < ids.size(); ++h) {
    const int id = ids[h];
    if (!t.has_grad(id)) continue;
    const Tensor& g = t.grad(id);
    Tensor& acc = grads_[h];
    if (acc.v.empty()) {
      acc = g;
      acc.v.assign(acc.v.size(), 0.0);
    }
    require(acc.same_shape(g), "grad accum: shape changed between calls");
    for (std::size_t i = 0; i < g.v.size(); ++i) acc.v[i] += scale * g.v[i];
  }
}

double GradAccum::squared_norm() const {
  double sq = 0.0;
  for (const Tensor& g : grads_)
    for (double x : g.v) sq += x * x;
  return sq;
}

void GradAccum::scale_all(double s) {
  for (Tensor& g : grads_)
    for (double& x : g.v) x *= s;
}

void GradAccum::reset() {
  for (Tensor& g : grads_) g = Tensor{};
}

Adam::Adam(double lr, double clip_norm) : lr_(lr), clip_(clip_norm) {
  require(lr > 0.0, "adam: learning rate must be positive");
}

void Adam::step(ParamStore& ps, const std::vector<Tensor>& grads) {
  require(static_cast<int>(grads.size()) == ps.count(), "adam: gradient count mismatch");
  if (m_.size() != grads.size()) {
    m_.assign(grads.size(), Tensor{});
    v_.assign(grads.size(), Tensor{});
  }
  double sq = 0.0;
  for (std::size_t h = 0; h < grads.size(); ++h) {
    const Tensor& g = grads[h];
    if (g.v.empty()) continue;
    require(g.same_shape(ps.value(static_cast<int>(h))), "adam: gradient shape mismatch");
    for (double x : g.v) sq += x * x;
  }
  if (!std::isfinite(sq)) throw TrainingDiverged("non-finite gradient norm");
  const double norm = std::sqrt(sq);
  const double scale = (clip_ > 0.0 && norm > clip_) ? clip_ / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t h = 0; h < grads.size(); ++h) {
    const Tensor& g = grads[h];
    if (g.v.empty()) continue;
    Tensor& val = ps.value(static_cast<int>(h));
    Tensor& m = m_[h];
    Tensor& v = v_[h];
    if (!m.same_shape(val)) {
      m = val;
      m.v.assign(m.v.size(), 0.0);
      v = m;
    }
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      const double gi = g.v[i] * scale;
      m.v[i] = beta1_ * m.v[i] + (1.0 - beta1_) * gi;
      v.v[i] = beta2_ * v.v[i] + (1.0 - beta2_) * gi * gi;
      val.v[i] -= lr_ * (m.v[i] / bc1) / (std::sqrt(v.v[i] / bc2) + eps_);
    }
  }
}

Encoder::Encoder(NetworkConfig cfg, bool dual_head, Rng& rng)
    : cfg_(std::move(cfg)), dual_(dual_head) {
  cfg_.validate();
  blocks_.resize(6);
  int c_prev = 1;
  for (int k = 0; k < 6; ++k) {
    register_conv_block(store_, rng, "block" + std::to_string(k + 1), c_prev,
                        cfg_.channels[static_cast<std::size_t>(k)], true,
                        blocks_[static_cast<std::size_t>(k)]);
    c_prev = cfg_.channels[static_cast<std::size_t>(k)];
  }
  register_lstm(store_, rng, "lstm_re", cfg_.bottom_feature(), cfg_.lstm_hidden, lstm_re_);
  register_lstm(store_, rng, "lstm_im", cfg_.bottom_feature(), cfg_.lstm_hidden, lstm_im_);
  speech_ = add_head("head_speech", rng);
  if (dual_) noise_ = add_head("head_noise", rng);
}

LatentHeadHandles Encoder::add_head(const std::string& prefix, Rng& rng) {
  const int L = cfg_.latent_dim;
  const int H = cfg_.lstm_hidden;
  LatentHeadHandles h;
  h.mu.wr = store_.add(prefix + ".mu.wr", glorot(rng, L, H));
  h.mu.wi = store_.add(prefix + ".mu.wi", glorot(rng, L, H));
  h.mu.br = store_.add(prefix + ".mu.br", Tensor::zeros1(L));
  h.mu.bi = store_.add(prefix + ".mu.bi", Tensor::zeros1(L));
  h.raw_s.w = store_.add(prefix + ".raw_s.w", glorot(rng, L, 2 * H));
  h.raw_s.b = store_.add(prefix + ".raw_s.b", Tensor::zeros1(L));
  h.raw_t.w = store_.add(prefix + ".raw_t.w", glorot(rng, L, 2 * H));
  h.raw_t.b = store_.add(prefix + ".raw_t.b", Tensor::zeros1(L));
  h.raw_ph.w = store_.add(prefix + ".raw_ph.w", glorot(rng, L, 2 * H));
  h.raw_ph.b = store_.add(prefix + ".raw_ph.b", Tensor::zeros1(L));
  return h;
}

namespace {

DistNodes head_nodes(Tape& t, const std::vector<int>& p, const LatentHeadHandles& h, int cr,
                     int ci) {
  const auto [mr, mi] = detail::complex_linear(t, p, h.mu, cr, ci);
  const int cat = t.concat_dim0(std::array{cr, ci});
  const int rs = real_linear(t, p, h.raw_s, cat);
  const int rt = real_linear(t, p, h.raw_t, cat);
  const int rp = real_linear(t, p, h.raw_ph, cat);
  return constrain_raw_nodes(t, mr, mi, rs, rt, rp);
}

}  // namespace

EncoderOutput Encoder::forward(Tape& t, const std::vector<int>& p, int spec_re,
                               int spec_im) const {
  require(static_cast<int>(p.size()) == store_.count(), "encoder: parameter id count mismatch");
  const Tensor& R = t.val(spec_re);
  const Tensor& I = t.val(spec_im);
  require(R.rank == 2 && R.d[0] == cfg_.bins && I.rank == 2 && I.d[0] == cfg_.bins &&
              R.d[1] == I.d[1] && R.d[1] >= 1,
          "encoder: spectrogram nodes must be (bins, frames)");
  const int frames = R.d[1];

  int xr = t.reshape(t.slice_dim0(spec_re, 1, cfg_.bins), {1, cfg_.freq_in(), frames}, 3);
  int xi = t.reshape(t.slice_dim0(spec_im, 1, cfg_.bins), {1, cfg_.freq_in(), frames}, 3);
  EncoderOutput out;
  int c_prev = 1;
  int f = cfg_.freq_in();
  for (int k = 0; k < 6; ++k) {
    const ConvGeom g = block_geom(2 * c_prev, f);
    std::tie(xr, xi) = detail::conv_block(t, p, blocks_[static_cast<std::size_t>(k)], xr, xi, g, true);
    out.taps.push_back({xr, xi});
    c_prev = cfg_.channels[static_cast<std::size_t>(k)];
    f = g.f_out();
  }

  const int D = cfg_.bottom_feature();
  const int hr = t.reshape(xr, {D, frames, 1}, 2);
  const int hi = t.reshape(xi, {D, frames, 1}, 2);
  const auto [cr, ci] = detail::complex_lstm(t, p, lstm_re_, lstm_im_, hr, hi, cfg_.lstm_hidden);
  out.speech = head_nodes(t, p, speech_, cr, ci);
  if (dual_) out.noise = head_nodes(t, p, noise_, cr, ci);
  return out;
}

Decoder::Decoder(NetworkConfig cfg, bool with_skips, Rng& rng)
    : cfg_(std::move(cfg)), skips_(with_skips) {
  cfg_.validate();
  const int L = cfg_.latent_dim;
  const int H = cfg_.lstm_hidden;
  const int D = cfg_.bottom_feature();
  lin_in_.wr = store_.add("lin_in.wr", glorot(rng, H, L));
  lin_in_.wi = store_.add("lin_in.wi", glorot(rng, H, L));
  lin_in_.br = store_.add("lin_in.br", Tensor::zeros1(H));
  lin_in_.bi = store_.add("lin_in.bi", Tensor::zeros1(H));
  register_lstm(store_, rng, "lstm_re", H, H, lstm_re_);
  register_lstm(store_, rng, "lstm_im", H, H, lstm_im_);
  lin_mid_.wr = store_.add("lin_mid.wr", glorot(rng, D, H));
  lin_mid_.wi = store_.add("lin_mid.wi", glorot(rng, D, H));
  lin_mid_.br = store_.add("lin_mid.br", Tensor::zeros1(D));
  lin_mid_.bi = store_.add("lin_mid.bi", Tensor::zeros1(D));
  blocks_.resize(6);
  for (int j = 0; j < 6; ++j) {
    const int ic = cfg_.channels[static_cast<std::size_t>(5 - j)] * (skips_ ? 2 : 1);
    const int oc = j == 5 ? 1 : cfg_.channels[static_cast<std::size_t>(4 - j)];
    register_deconv_block(store_, rng, "block" + std::to_string(j + 1), ic, oc, j < 5,
                          blocks_[static_cast<std::size_t>(j)]);
  }
}

void Decoder::enable_skips() {
  if (skips_) return;
  for (int j = 0; j < 6; ++j) {
    const ComplexConvHandles& h = blocks_[static_cast<std::size_t>(j)];
    for (int handle : {h.wr, h.wi}) {
      const Tensor& old = store_.value(handle);
      Tensor grown = Tensor::zeros2(2 * old.d[0], old.d[1]);
      std::copy(old.v.begin(), old.v.end(), grown.v.begin());
      store_.value(handle) = std::move(grown);
    }
  }
  skips_ = true;
}

ComplexNodes Decoder::forward(Tape& t, const std::vector<int>& p, const ComplexNodes& z,
                              const std::vector<ComplexNodes>* taps) const {
  require(static_cast<int>(p.size()) == store_.count(), "decoder: parameter id count mismatch");
  const Tensor& Z = t.val(z.re);
  require(Z.rank == 2 && Z.d[0] == cfg_.latent_dim && t.val(z.im).same_shape(Z),
          "decoder: latent nodes must be (latent_dim, frames)");
  require(!skips_ || (taps != nullptr && taps->size() == 6),
          "decoder: skip connections need six encoder taps");
  const int frames = Z.d[1];

  auto [hr, hi] = detail::complex_linear(t, p, lin_in_, z.re, z.im);
  const auto [cr, ci] = detail::complex_lstm(t, p, lstm_re_, lstm_im_, hr, hi, cfg_.lstm_hidden);
  const auto [mr, mi] = detail::complex_linear(t, p, lin_mid_, cr, ci);

  const int c_bottom = cfg_.channels[5];
  int dr = t.reshape(mr, {c_bottom, cfg_.freq_bottom(), frames}, 3);
  int di = t.reshape(mi, {c_bottom, cfg_.freq_bottom(), frames}, 3);
  int f = cfg_.freq_bottom();
  for (int j = 0; j < 6; ++j) {
    if (skips_) {
      const ComplexNodes& e = (*taps)[static_cast<std::size_t>(5 - j)];
      dr = t.concat_dim0(std::array{dr, e.re});
      di = t.concat_dim0(std::array{di, e.im});
    }
    const int oc = j == 5 ? 1 : cfg_.channels[static_cast<std::size_t>(4 - j)];
    const ConvGeom g = block_geom(2 * oc, 2 * f);
    std::tie(dr, di) = detail::deconv_block(t, p, blocks_[static_cast<std::size_t>(j)], dr, di, g, j < 5);
    f = 2 * f;
  }

  const int out_re = t.reshape(dr, {cfg_.freq_in(), frames, 1}, 2);
  const int out_im = t.reshape(di, {cfg_.freq_in(), frames, 1}, 2);
  const int dc = t.leaf(Tensor::zeros2(1, frames));
  return {t.concat_dim0(std::array{dc, out_re}), t.concat_dim0(std::array{dc, out_im})};
}

Discriminator::Discriminator(NetworkConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  blocks_.resize(6);
  int c_prev = 2;
  for (int k = 0; k < 6; ++k) {
    const int c_out = cfg_.channels[static_cast<std::size_t>(k)];
    RealBlock& b = blocks_[static_cast<std::size_t>(k)];
    const std::string prefix = "block" + std::to_string(k + 1);
    b.w = store_.add(prefix + ".w", glorot(rng, c_out, c_prev * 5 * 2));
    b.b = store_.add(prefix + ".b", Tensor::zeros1(c_out));
    b.g = store_.add(prefix + ".g", const1(c_out, 1.0));
    b.beta = store_.add(prefix + ".beta", Tensor::zeros1(c_out));
    b.a = store_.add(prefix + ".a", const1(c_out, 0.25));
    c_prev = c_out;
  }
  register_lstm(store_, rng, "lstm", cfg_.bottom_feature(), cfg_.lstm_hidden, lstm_);
  head_.w = store_.add("head.w", glorot(rng, 1, cfg_.lstm_hidden));
  head_.b = store_.add("head.b", Tensor::zeros1(1));
}

int Discriminator::forward(Tape& t, const std::vector<int>& p, int spec_re, int spec_im) const {
  require(static_cast<int>(p.size()) == store_.count(),
          "discriminator: parameter id count mismatch");
  const Tensor& R = t.val(spec_re);
  require(R.rank == 2 && R.d[0] == cfg_.bins && t.val(spec_im).same_shape(R) && R.d[1] >= 1,
          "discriminator: spectrogram nodes must be (bins, frames)");
  const int frames = R.d[1];

  const int xr = t.reshape(t.slice_dim0(spec_re, 1, cfg_.bins), {1, cfg_.freq_in(), frames}, 3);
  const int xi = t.reshape(t.slice_dim0(spec_im, 1, cfg_.bins), {1, cfg_.freq_in(), frames}, 3);
  int x = t.concat_dim0(std::array{xr, xi});
  int c_prev = 2;
  int f = cfg_.freq_in();
  for (int k = 0; k < 6; ++k) {
    const RealBlock& b = blocks_[static_cast<std::size_t>(k)];
    const ConvGeom g = block_geom(c_prev, f);
    x = t.conv2d(x, p[static_cast<std::size_t>(b.w)], g);
    x = t.bias_add_dim0(x, p[static_cast<std::size_t>(b.b)]);
    x = t.channel_norm(x, p[static_cast<std::size_t>(b.g)], p[static_cast<std::size_t>(b.beta)],
                       kNormEps);
    x = t.prelu(x, p[static_cast<std::size_t>(b.a)]);
    c_prev = cfg_.channels[static_cast<std::size_t>(k)];
    f = g.f_out();
  }
  const int flat = t.reshape(x, {cfg_.bottom_feature(), frames, 1}, 2);
  const int h = detail::run_lstm(t, p, lstm_, flat, cfg_.lstm_hidden);
  const int s = real_linear(t, p, head_, h);
  return t.scale(t.sum(s), 1.0 / frames);
}

}  // namespace nsvae
