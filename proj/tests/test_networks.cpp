// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "nsvae/checkpoint.hpp"
#include "nsvae/common.hpp"
#include "nsvae/losses.hpp"
#include "nsvae/networks.hpp"
#include "nsvae/rng.hpp"
#include "testutil.hpp"

using namespace nsvae;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.channels = {2, 3, 4, 4, 5, 5};
  cfg.latent_dim = 3;
  cfg.lstm_hidden = 6;
  cfg.bins = 65;
  return cfg;
}

ConvGeom geom(int c_in, int f_in) {
  ConvGeom g;
  g.c_in = c_in;
  g.f_in = f_in;
  return g;
}

std::pair<int, int> random_spec_nodes(Tape& t, Rng& rng, int bins, int frames, double amp) {
  return {t.leaf(testutil::random_tensor(rng, {bins, frames, 1}, 2, -amp, amp)),
          t.leaf(testutil::random_tensor(rng, {bins, frames, 1}, 2, -amp, amp))};
}

Tensor noise_tensor(Rng& rng, int rows, int cols) {
  Tensor n = Tensor::zeros2(rows, cols);
  for (double& x : n.v) x = rng.normal();
  return n;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    INFO("index ", i);
    CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(tol).scale(1.0));
  }
}

}  // namespace

TEST_CASE("network config validation") {
  NetworkConfig cfg = tiny_config();
  cfg.validate();
  cfg.channels = {2, 3, 4};
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_config();
  cfg.bins = 129;
  cfg.validate();
  cfg.bins = 128;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_config();
  cfg.latent_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("packed complex conv block matches the unpacked composition") {
  Rng rng(81);
  const int c_in = 2, c_out = 3, f = 16, frames = 4;
  ParamStore s;
  ComplexConvHandles h;
  h.wr = s.add("wr", testutil::random_tensor(rng, {c_out, c_in * 10, 1}, 2));
  h.wi = s.add("wi", testutil::random_tensor(rng, {c_out, c_in * 10, 1}, 2));
  h.br = s.add("br", Tensor::zeros1(c_out));
  h.bi = s.add("bi", Tensor::zeros1(c_out));

  Tape t;
  const std::vector<int> p = s.lift(t);
  const int xr = t.leaf(testutil::random_tensor(rng, {c_in, f, frames}, 3));
  const int xi = t.leaf(testutil::random_tensor(rng, {c_in, f, frames}, 3));
  const auto [yr, yi] = detail::conv_block(t, p, h, xr, xi, geom(2 * c_in, f), false);

  // (Wr + i Wi)(xr + i xi) laid out as four real convolutions.
  const ConvGeom gu = geom(c_in, f);
  const int er = t.sub(t.conv2d(xr, p[0], gu), t.conv2d(xi, p[1], gu));
  const int ei = t.add(t.conv2d(xi, p[0], gu), t.conv2d(xr, p[1], gu));
  check_close(t.val(yr), t.val(er), 1e-12);
  check_close(t.val(yi), t.val(ei), 1e-12);

  // Multiplying the input by i must rotate the output by i.
  const auto [ry, iy] = detail::conv_block(t, p, h, t.neg(xi), xr, geom(2 * c_in, f), false);
  check_close(t.val(ry), t.val(t.neg(yi)), 1e-12);
  check_close(t.val(iy), t.val(yr), 1e-12);
}

TEST_CASE("packed complex transposed conv block matches the unpacked composition") {
  Rng rng(82);
  const int c_in = 2, c_out = 3, f_up = 16, frames = 4;
  ParamStore s;
  ComplexConvHandles h;
  h.wr = s.add("wr", testutil::random_tensor(rng, {c_in, c_out * 10, 1}, 2));
  h.wi = s.add("wi", testutil::random_tensor(rng, {c_in, c_out * 10, 1}, 2));
  h.br = s.add("br", Tensor::zeros1(c_out));
  h.bi = s.add("bi", Tensor::zeros1(c_out));

  Tape t;
  const std::vector<int> p = s.lift(t);
  const ConvGeom gp = geom(2 * c_out, f_up);
  const ConvGeom gu = geom(c_out, f_up);
  const int f_low = gu.f_out();
  const int yr = t.leaf(testutil::random_tensor(rng, {c_in, f_low, frames}, 3));
  const int yi = t.leaf(testutil::random_tensor(rng, {c_in, f_low, frames}, 3));
  const auto [xr, xi] = detail::deconv_block(t, p, h, yr, yi, gp, false);
  CHECK(t.val(xr).d[0] == c_out);
  CHECK(t.val(xr).d[1] == f_up);

  const int er = t.sub(t.conv2d_transpose(yr, p[0], gu), t.conv2d_transpose(yi, p[1], gu));
  const int ei = t.add(t.conv2d_transpose(yi, p[0], gu), t.conv2d_transpose(yr, p[1], gu));
  check_close(t.val(xr), t.val(er), 1e-12);
  check_close(t.val(xi), t.val(ei), 1e-12);

  const auto [rx, ix] = detail::deconv_block(t, p, h, t.neg(yi), yr, gp, false);
  check_close(t.val(rx), t.val(t.neg(xi)), 1e-12);
  check_close(t.val(ix), t.val(xr), 1e-12);
}

TEST_CASE("lstm primitive matches a scalar reference") {
  Rng rng(83);
  const int D = 2, H = 2, N = 3;
  ParamStore s;
  LstmHandles h;
  h.wx = s.add("wx", testutil::random_tensor(rng, {4 * H, D, 1}, 2));
  h.wh = s.add("wh", testutil::random_tensor(rng, {4 * H, H, 1}, 2));
  Tensor bias = testutil::random_tensor(rng, {4 * H, 1, 1}, 1);
  h.b = s.add("b", bias);
  const Tensor x = testutil::random_tensor(rng, {D, N, 1}, 2);

  Tape t;
  const std::vector<int> p = s.lift(t);
  const Tensor got = t.val(detail::run_lstm(t, p, h, t.leaf(x), H));

  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const Tensor& wx = s.value(h.wx);
  const Tensor& wh = s.value(h.wh);
  std::vector<double> hh(H, 0.0), cc(H, 0.0);
  for (int n = 0; n < N; ++n) {
    std::vector<double> gates(4 * H, 0.0);
    for (int r = 0; r < 4 * H; ++r) {
      double acc = bias.v[static_cast<std::size_t>(r)];
      for (int d = 0; d < D; ++d) acc += wx.at2(r, d) * x.at2(d, n);
      for (int q = 0; q < H; ++q) acc += wh.at2(r, q) * hh[static_cast<std::size_t>(q)];
      gates[static_cast<std::size_t>(r)] = acc;
    }
    for (int q = 0; q < H; ++q) {
      const double gi = sig(gates[static_cast<std::size_t>(q)]);
      const double gf = sig(gates[static_cast<std::size_t>(H + q)]);
      const double gg = std::tanh(gates[static_cast<std::size_t>(2 * H + q)]);
      const double go = sig(gates[static_cast<std::size_t>(3 * H + q)]);
      cc[static_cast<std::size_t>(q)] = gf * cc[static_cast<std::size_t>(q)] + gi * gg;
      hh[static_cast<std::size_t>(q)] = go * std::tanh(cc[static_cast<std::size_t>(q)]);
      CHECK(got.at2(q, n) == doctest::Approx(hh[static_cast<std::size_t>(q)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("complex lstm wiring and complex linear layer") {
  Rng rng(84);
  const int D = 3, H = 2, N = 4;
  ParamStore s;
  LstmHandles re, im;
  re.wx = s.add("re.wx", testutil::random_tensor(rng, {4 * H, D, 1}, 2));
  re.wh = s.add("re.wh", testutil::random_tensor(rng, {4 * H, H, 1}, 2));
  re.b = s.add("re.b", testutil::random_tensor(rng, {4 * H, 1, 1}, 1));
  im.wx = s.add("im.wx", testutil::random_tensor(rng, {4 * H, D, 1}, 2));
  im.wh = s.add("im.wh", testutil::random_tensor(rng, {4 * H, H, 1}, 2));
  im.b = s.add("im.b", testutil::random_tensor(rng, {4 * H, 1, 1}, 1));

  Tape t;
  const std::vector<int> p = s.lift(t);
  const int xr = t.leaf(testutil::random_tensor(rng, {D, N, 1}, 2));
  const int xi = t.leaf(testutil::random_tensor(rng, {D, N, 1}, 2));
  const auto [or_, oi_] = detail::complex_lstm(t, p, re, im, xr, xi, H);
  const int rr = detail::run_lstm(t, p, re, xr, H);
  const int ri = detail::run_lstm(t, p, re, xi, H);
  const int ir = detail::run_lstm(t, p, im, xr, H);
  const int ii = detail::run_lstm(t, p, im, xi, H);
  check_close(t.val(or_), t.val(t.sub(rr, ii)), 1e-15);
  check_close(t.val(oi_), t.val(t.add(ri, ir)), 1e-15);

  ParamStore ls;
  ComplexLinearHandles lh;
  lh.wr = ls.add("wr", testutil::random_tensor(rng, {2, D, 1}, 2));
  lh.wi = ls.add("wi", testutil::random_tensor(rng, {2, D, 1}, 2));
  lh.br = ls.add("br", testutil::random_tensor(rng, {2, 1, 1}, 1));
  lh.bi = ls.add("bi", testutil::random_tensor(rng, {2, 1, 1}, 1));
  Tape lt;
  const std::vector<int> lp = ls.lift(lt);
  const int zr = lt.leaf(testutil::random_tensor(rng, {D, N, 1}, 2));
  const int zi = lt.leaf(testutil::random_tensor(rng, {D, N, 1}, 2));
  const auto [vr, vi] = detail::complex_linear(lt, lp, lh, zr, zi);
  const int wr_ = lp[0], wi_ = lp[1];
  const int expr = lt.bias_add_dim0(lt.sub(lt.matmul(wr_, zr), lt.matmul(wi_, zi)), lp[2]);
  const int expi = lt.bias_add_dim0(lt.add(lt.matmul(wr_, zi), lt.matmul(wi_, zr)), lp[3]);
  check_close(lt.val(vr), lt.val(expr), 1e-15);
  check_close(lt.val(vi), lt.val(expi), 1e-15);
}

TEST_CASE("encoder output shapes, posterior validity and trunk sharing") {
  Rng rng(85);
  const NetworkConfig cfg = tiny_config();
  Encoder enc(cfg, true, rng);
  for (const int frames : {1, 17}) {
    Tape t;
    const std::vector<int> p = enc.params().lift(t, false);
    const auto [sr, si] = random_spec_nodes(t, rng, cfg.bins, frames, 1.0);
    const EncoderOutput out = enc.forward(t, p, sr, si);

    REQUIRE(out.taps.size() == 6);
    int f = 32;
    for (int k = 0; k < 6; ++k) {
      const Tensor& tap = t.val(out.taps[static_cast<std::size_t>(k)].re);
      CHECK(tap.d[0] == cfg.channels[static_cast<std::size_t>(k)]);
      CHECK(tap.d[1] == f);
      CHECK(tap.d[2] == frames);
      f /= 2;
    }
    for (const DistNodes& d : {out.speech, out.noise}) {
      ComplexDiagGaussian g;
      g.mu_re = t.val(d.mu_re);
      g.mu_im = t.val(d.mu_im);
      g.sigma = t.val(d.sigma);
      g.delta_re = t.val(d.delta_re);
      g.delta_im = t.val(d.delta_im);
      CHECK(g.mu_re.d[0] == cfg.latent_dim);
      CHECK(g.mu_re.d[1] == frames);
      CHECK_NOTHROW(g.validate());
    }
  }

  Rng rng2(85);
  Encoder single(cfg, false, rng2);
  CHECK(enc.params().count() == single.params().count() + 10);
  const int L = cfg.latent_dim, H = cfg.lstm_hidden;
  const std::int64_t head = 2 * (L * H + L) + 3 * (L * 2 * H + L);
  CHECK(enc.params().total_size() == single.params().total_size() + head);
  CHECK(enc.params().handle("head_noise.mu.wr") >= 0);
  CHECK(single.params().handle("head_noise.mu.wr") == -1);
}

TEST_CASE("decoder output shape, zero DC row and skip grafting") {
  Rng rng(86);
  const NetworkConfig cfg = tiny_config();
  const int frames = 9;
  Encoder enc(cfg, false, rng);
  Decoder dec(cfg, false, rng);
  const Tensor z_re = testutil::random_tensor(rng, {cfg.latent_dim, frames, 1}, 2);
  const Tensor z_im = testutil::random_tensor(rng, {cfg.latent_dim, frames, 1}, 2);
  const Tensor spec_re = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2);
  const Tensor spec_im = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2);

  Tensor base_re, base_im;
  {
    Tape t;
    const std::vector<int> p = dec.params().lift(t, false);
    const ComplexNodes out = dec.forward(t, p, {t.leaf(z_re), t.leaf(z_im)});
    base_re = t.val(out.re);
    base_im = t.val(out.im);
    CHECK(base_re.d[0] == cfg.bins);
    CHECK(base_re.d[1] == frames);
    for (int n = 0; n < frames; ++n) {
      CHECK(base_re.at2(0, n) == 0.0);
      CHECK(base_im.at2(0, n) == 0.0);
    }
    CHECK(base_re.all_finite());
    // Skips enabled requires taps.
    Decoder skip_dec(cfg, true, rng);
    Tape t2;
    const std::vector<int> p2 = skip_dec.params().lift(t2, false);
    CHECK_THROWS_AS(skip_dec.forward(t2, p2, {t2.leaf(z_re), t2.leaf(z_im)}), InvalidInput);
  }

  // Grafted skip rows start at zero, so the function is unchanged.
  dec.enable_skips();
  CHECK(dec.with_skips());
  {
    Tape t;
    const std::vector<int> pe = enc.params().lift(t, false);
    const std::vector<int> pd = dec.params().lift(t, false);
    const EncoderOutput eo = enc.forward(t, pe, t.leaf(spec_re), t.leaf(spec_im));
    const ComplexNodes out = dec.forward(t, pd, {t.leaf(z_re), t.leaf(z_im)}, &eo.taps);
    check_close(t.val(out.re), base_re, 1e-12);
    check_close(t.val(out.im), base_im, 1e-12);
  }
}

TEST_CASE("full autoencoding path stays finite, including zero input") {
  Rng rng(87);
  const NetworkConfig cfg = tiny_config();
  Encoder enc(cfg, true, rng);
  Decoder dec(cfg, false, rng);
  const int frames = 7;
  for (const bool zero : {false, true}) {
    Tape t;
    const std::vector<int> pe = enc.params().lift(t, false);
    const std::vector<int> pd = dec.params().lift(t, false);
    int sr, si;
    if (zero) {
      sr = t.leaf(Tensor::zeros2(cfg.bins, frames));
      si = t.leaf(Tensor::zeros2(cfg.bins, frames));
    } else {
      std::tie(sr, si) = random_spec_nodes(t, rng, cfg.bins, frames, 0.3);
    }
    const EncoderOutput eo = enc.forward(t, pe, sr, si);
    const ComplexNodes z = sample_node(t, eo.speech, noise_tensor(rng, cfg.latent_dim, frames),
                                       noise_tensor(rng, cfg.latent_dim, frames));
    const ComplexNodes out = dec.forward(t, pd, z);
    CHECK(t.val(out.re).all_finite());
    CHECK(t.val(out.im).all_finite());
    CHECK(t.val(eo.noise.sigma).all_finite());
  }
}

TEST_CASE("end-to-end gradients through encoder, sampling and decoder match finite differences") {
  Rng rng(88);
  NetworkConfig cfg;
  cfg.channels = {1, 1, 1, 1, 1, 1};
  cfg.latent_dim = 2;
  cfg.lstm_hidden = 2;
  cfg.bins = 65;
  const int frames = 2;
  Encoder enc(cfg, false, rng);
  Decoder dec(cfg, false, rng);

  ComplexSpectrogram ref;
  ref.re = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2);
  ref.im = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2);
  const Tensor n1 = noise_tensor(rng, cfg.latent_dim, frames);
  const Tensor n2 = noise_tensor(rng, cfg.latent_dim, frames);
  const Tensor spec_im = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2);
  LossWeights w;
  w.beta = 0.5;

  const std::array<int, 4> enc_h = {
      enc.params().handle("block1.wr"), enc.params().handle("lstm_re.wx"),
      enc.params().handle("head_speech.mu.wr"), enc.params().handle("head_speech.raw_t.w")};
  const std::array<int, 2> dec_h = {dec.params().handle("lin_in.wr"),
                                    dec.params().handle("block6.wr")};
  for (int h : enc_h) REQUIRE(h >= 0);
  for (int h : dec_h) REQUIRE(h >= 0);

  std::vector<Tensor> inputs;
  for (int h : enc_h) inputs.push_back(enc.params().value(h));
  for (int h : dec_h) inputs.push_back(dec.params().value(h));
  inputs.push_back(testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2));

  const auto lift_mixed = [](Tape& t, const ParamStore& s, const std::map<int, int>& repl) {
    std::vector<int> ids(static_cast<std::size_t>(s.count()));
    for (int h = 0; h < s.count(); ++h) {
      const auto it = repl.find(h);
      ids[static_cast<std::size_t>(h)] = it == repl.end() ? t.leaf(s.value(h)) : it->second;
    }
    return ids;
  };

  testutil::fd_check(
      inputs,
      [&](Tape& t, const std::vector<int>& ids) {
        std::map<int, int> enc_repl, dec_repl;
        for (std::size_t i = 0; i < enc_h.size(); ++i)
          enc_repl[enc_h[i]] = ids[i];
        for (std::size_t i = 0; i < dec_h.size(); ++i)
          dec_repl[dec_h[i]] = ids[enc_h.size() + i];
        const std::vector<int> pe = lift_mixed(t, enc.params(), enc_repl);
        const std::vector<int> pd = lift_mixed(t, dec.params(), dec_repl);
        const int si = t.leaf(spec_im);
        const EncoderOutput eo = enc.forward(t, pe, ids.back(), si);
        const ComplexNodes z = sample_node(t, eo.speech, n1, n2);
        const ComplexNodes est = dec.forward(t, pd, z);
        return pretrain_loss_node(t, eo.speech, est, ref, w);
      },
      1e-5, 1e-3);
}

TEST_CASE("discriminator scores a spectrogram with one finite number") {
  Rng rng(89);
  const NetworkConfig cfg = tiny_config();
  Discriminator disc(cfg, rng);
  const int frames = 6;
  Tape t;
  const std::vector<int> p = disc.params().lift(t, false);
  const auto [sr, si] = random_spec_nodes(t, rng, cfg.bins, frames, 1.0);
  const int score = disc.forward(t, p, sr, si);
  CHECK(t.val(score).size() == 1);
  CHECK(std::isfinite(t.scalar(score)));

  // Gradients through the critic path.
  const std::array<int, 2> hs = {disc.params().handle("block1.w"),
                                 disc.params().handle("head.w")};
  const Tensor spec_re = testutil::random_tensor(rng, {cfg.bins, 3, 1}, 2);
  const Tensor spec_im2 = testutil::random_tensor(rng, {cfg.bins, 3, 1}, 2);
  testutil::fd_check(
      {disc.params().value(hs[0]), disc.params().value(hs[1])},
      [&](Tape& tt, const std::vector<int>& ids) {
        std::vector<int> pp(static_cast<std::size_t>(disc.params().count()));
        for (int h = 0; h < disc.params().count(); ++h) {
          if (h == hs[0])
            pp[static_cast<std::size_t>(h)] = ids[0];
          else if (h == hs[1])
            pp[static_cast<std::size_t>(h)] = ids[1];
          else
            pp[static_cast<std::size_t>(h)] = tt.leaf(disc.params().value(h));
        }
        return disc.forward(tt, pp, tt.leaf(spec_re), tt.leaf(spec_im2));
      },
      1e-5, 1e-3);
}

TEST_CASE("adam converges on a quadratic and rejects non-finite gradients") {
  ParamStore ps;
  const int h = ps.add("x", Tensor::zeros1(4));
  const std::array<double, 4> target = {0.3, -0.2, 0.8, 0.0};
  Adam opt(0.02);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 400; ++step) {
    Tape t;
    const std::vector<int> ids = ps.lift(t);
    Tensor c = Tensor::zeros1(4);
    std::copy(target.begin(), target.end(), c.v.begin());
    const int loss = t.sum(t.square(t.sub(ids[0], t.leaf(c))));
    if (step == 0) first = t.scalar(loss);
    last = t.scalar(loss);
    t.backward(loss);
    GradAccum acc(ps);
    acc.add_scaled(t, ids, 1.0);
    opt.step(ps, acc.grads());
  }
  CHECK(last < 1e-4 * first);
  for (int i = 0; i < 4; ++i)
    CHECK(ps.value(h).at(i) == doctest::Approx(target[static_cast<std::size_t>(i)]).epsilon(0.02).scale(1.0));

  std::vector<Tensor> bad(1);
  bad[0] = Tensor::zeros1(4);
  bad[0].v[2] = std::nan("");
  CHECK_THROWS_AS(opt.step(ps, bad), TrainingDiverged);
}

TEST_CASE("gradient accumulation equals the gradient of the batch mean") {
  Rng rng(90);
  ParamStore ps;
  ps.add("x", testutil::random_tensor(rng, {5, 1, 1}, 1));
  const Tensor a = testutil::random_tensor(rng, {5, 1, 1}, 1);
  const Tensor b = testutil::random_tensor(rng, {5, 1, 1}, 1);

  GradAccum acc(ps);
  for (const Tensor& item : {a, b}) {
    Tape t;
    const std::vector<int> ids = ps.lift(t);
    const int loss = t.sum(t.square(t.sub(ids[0], t.leaf(item))));
    t.backward(loss);
    acc.add_scaled(t, ids, 0.5);
  }

  Tape t;
  const std::vector<int> ids = ps.lift(t);
  const int joint = t.scale(t.add(t.sum(t.square(t.sub(ids[0], t.leaf(a)))),
                                  t.sum(t.square(t.sub(ids[0], t.leaf(b))))),
                            0.5);
  t.backward(joint);
  check_close(acc.grads()[0], t.grad(ids[0]), 1e-14);
}

TEST_CASE("checkpoint round-trip restores every tensor and the manifest config") {
  Rng rng(91);
  const NetworkConfig cfg = tiny_config();
  Encoder enc(cfg, true, rng);
  const std::filesystem::path dir = "ckpt_roundtrip_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, "encoder", network_config_to_json(cfg), enc.params());

  const nlohmann::json manifest = load_manifest(dir);
  const NetworkConfig back = network_config_from_json(manifest.at("config"));
  CHECK(back.channels == cfg.channels);
  CHECK(back.latent_dim == cfg.latent_dim);
  CHECK(back.bins == cfg.bins);

  Rng other(4242);
  Encoder restored(cfg, true, other);
  bool differs = false;
  for (int h = 0; h < enc.params().count(); ++h)
    if (restored.params().value(h).v != enc.params().value(h).v) differs = true;
  CHECK(differs);
  load_checkpoint(dir, "encoder", restored.params());
  for (int h = 0; h < enc.params().count(); ++h) {
    CHECK(restored.params().name(h) == enc.params().name(h));
    CHECK(restored.params().value(h).v == enc.params().value(h).v);
  }

  CHECK_THROWS_AS(load_checkpoint(dir, "decoder", restored.params()), CheckpointError);
  NetworkConfig narrow = cfg;
  narrow.latent_dim = 2;
  Rng r3(77);
  Encoder mismatched(narrow, true, r3);
  CHECK_THROWS_AS(load_checkpoint(dir, "encoder", mismatched.params()), CheckpointError);
  CHECK_THROWS_AS(load_manifest("no_such_checkpoint_dir"), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("joint autoencoder training steps reduce the loss and stay finite") {
  Rng rng(92);
  NetworkConfig cfg;
  cfg.channels = {2, 2, 2, 2, 2, 2};
  cfg.latent_dim = 3;
  cfg.lstm_hidden = 4;
  cfg.bins = 65;
  const int frames = 5;
  Encoder enc(cfg, false, rng);
  Decoder dec(cfg, false, rng);
  ComplexSpectrogram ref;
  ref.re = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2, -0.5, 0.5);
  ref.im = testutil::random_tensor(rng, {cfg.bins, frames, 1}, 2, -0.5, 0.5);
  LossWeights w;
  w.beta = 0.01;

  Adam opt_e(1e-3), opt_d(1e-3);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 40; ++step) {
    Tape t;
    const std::vector<int> pe = enc.params().lift(t);
    const std::vector<int> pd = dec.params().lift(t);
    const EncoderOutput eo = enc.forward(t, pe, t.leaf(ref.re), t.leaf(ref.im));
    const ComplexNodes z = sample_node(t, eo.speech, noise_tensor(rng, cfg.latent_dim, frames),
                                       noise_tensor(rng, cfg.latent_dim, frames));
    const ComplexNodes est = dec.forward(t, pd, z);
    const int loss = pretrain_loss_node(t, eo.speech, est, ref, w);
    const double v = t.scalar(loss);
    REQUIRE(std::isfinite(v));
    if (step == 0) first = v;
    last = v;
    t.backward(loss);
    GradAccum ae(enc.params()), ad(dec.params());
    ae.add_scaled(t, pe, 1.0);
    ad.add_scaled(t, pd, 1.0);
    opt_e.step(enc.params(), ae.grads());
    opt_d.step(dec.params(), ad.grads());
  }
  CHECK(last < first);
}
