// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "nsvae/common.hpp"
#include "nsvae/rng.hpp"
#include "nsvae/spectral.hpp"
#include "testutil.hpp"

using namespace nsvae;

namespace {

TimeSignal random_signal(Rng& rng, int n, double amp = 0.5) {
  TimeSignal s;
  s.samples.resize(static_cast<std::size_t>(n));
  for (double& x : s.samples) x = rng.uniform(-amp, amp);
  return s;
}

// Direct DFT summation of one windowed, zero-padded frame: the oracle the
// FFT-based path must match.
std::vector<std::complex<double>> dft_oracle_frame(const TimeSignal& sig, const StftConfig& cfg,
                                                   int frame_index) {
  const std::vector<double> w = hann_window(cfg.frame_length);
  std::vector<double> v(static_cast<std::size_t>(cfg.fft_length), 0.0);
  const int s0 = frame_index * cfg.hop;
  for (int i = 0; i < cfg.frame_length; ++i) {
    const std::size_t t = static_cast<std::size_t>(s0 + i);
    if (t < sig.samples.size()) v[static_cast<std::size_t>(i)] = sig.samples[t] * w[static_cast<std::size_t>(i)];
  }
  std::vector<std::complex<double>> out(static_cast<std::size_t>(cfg.bins()));
  for (int k = 0; k < cfg.bins(); ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (int n = 0; n < cfg.fft_length; ++n) {
      const double ang = -2.0 * M_PI * k * n / cfg.fft_length;
      acc += v[static_cast<std::size_t>(n)] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

double max_interior_error(const TimeSignal& a, const TimeSignal& b, int frame_length) {
  const int lo = frame_length;
  const int hi = static_cast<int>(a.samples.size()) - 2 * frame_length;
  double m = 0.0;
  for (int i = lo; i < hi; ++i)
    m = std::max(m, std::fabs(a.samples[static_cast<std::size_t>(i)] -
                              b.samples[static_cast<std::size_t>(i)]));
  return m;
}

}  // namespace

TEST_CASE("stft of all-zero signal is all zeros with F=257") {
  TimeSignal s;
  s.samples.assign(1200, 0.0);
  const ComplexSpectrogram spec = stft(s, StftConfig{});
  CHECK(spec.bins() == 257);
  for (double x : spec.re.v) CHECK(x == 0.0);
  for (double x : spec.im.v) CHECK(x == 0.0);
}

TEST_CASE("stft rejects signals shorter than one frame") {
  TimeSignal s;
  s.samples.assign(399, 0.1);
  CHECK_THROWS_AS(stft(s, StftConfig{}), InvalidInput);
}

TEST_CASE("stft matches direct DFT summation on single frames") {
  Rng rng(31);
  const StftConfig cfg;
  const TimeSignal s = random_signal(rng, 1400);
  const ComplexSpectrogram spec = stft(s, cfg);
  for (int m : {0, 1, 2}) {
    const auto oracle = dft_oracle_frame(s, cfg, m);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < cfg.bins(); ++k) {
      const double dr = spec.re.at2(k, m) - oracle[static_cast<std::size_t>(k)].real();
      const double di = spec.im.at2(k, m) - oracle[static_cast<std::size_t>(k)].imag();
      num += dr * dr + di * di;
      den += std::norm(oracle[static_cast<std::size_t>(k)]);
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
  }
}

TEST_CASE("Parseval consistency of the one-sided spectrum per frame") {
  Rng rng(32);
  const StftConfig cfg;
  const TimeSignal s = random_signal(rng, 1400);
  const ComplexSpectrogram spec = stft(s, cfg);
  const std::vector<double> w = hann_window(cfg.frame_length);
  for (int m = 0; m < spec.frames(); ++m) {
    double time_energy = 0.0;
    const int s0 = m * cfg.hop;
    for (int i = 0; i < cfg.frame_length; ++i) {
      const std::size_t t = static_cast<std::size_t>(s0 + i);
      const double v = t < s.samples.size() ? s.samples[t] * w[static_cast<std::size_t>(i)] : 0.0;
      time_energy += v * v;
    }
    double freq_energy = 0.0;
    for (int k = 0; k < cfg.bins(); ++k) {
      const double p = spec.re.at2(k, m) * spec.re.at2(k, m) + spec.im.at2(k, m) * spec.im.at2(k, m);
      const bool edge = (k == 0 || k == cfg.bins() - 1);
      freq_energy += (edge ? 1.0 : 2.0) * p;
    }
    freq_energy /= cfg.fft_length;
    CHECK(std::fabs(freq_energy - time_energy) <= 1e-8 * std::max(1.0, time_energy));
  }
}

TEST_CASE("bin-center cosine concentrates energy at its bin") {
  const StftConfig cfg;
  const int k = 32;  // 1000 Hz at 16 kHz / 512
  TimeSignal s;
  s.samples.resize(4000);
  for (std::size_t n = 0; n < s.samples.size(); ++n)
    s.samples[n] = std::cos(2.0 * M_PI * k * static_cast<double>(n) / cfg.fft_length);
  const ComplexSpectrogram spec = stft(s, cfg);
  const Tensor mag = magnitude(spec);
  for (int m = 1; m + 1 < spec.frames(); ++m) {
    int argmax = 0;
    double peak = 0.0;
    for (int b = 0; b < cfg.bins(); ++b) {
      if (mag.at2(b, m) > peak) {
        peak = mag.at2(b, m);
        argmax = b;
      }
    }
    CHECK(argmax == k);
    // Hann sidelobes sit 31 dB below the peak; past the first sidelobe the
    // leakage must be far under 3% of the peak.
    for (int b = 0; b < cfg.bins(); ++b) {
      if (std::abs(b - k) >= 6) CHECK(mag.at2(b, m) <= 0.03 * peak);
    }
  }
}

TEST_CASE("stft is linear") {
  Rng rng(33);
  const StftConfig cfg;
  const TimeSignal x = random_signal(rng, 1600);
  const TimeSignal y = random_signal(rng, 1600);
  const double a = 1.7, b = -0.6;
  TimeSignal z;
  z.samples.resize(x.samples.size());
  for (std::size_t i = 0; i < z.samples.size(); ++i)
    z.samples[i] = a * x.samples[i] + b * y.samples[i];
  const ComplexSpectrogram sx = stft(x, cfg), sy = stft(y, cfg), sz = stft(z, cfg);
  for (std::size_t i = 0; i < sz.re.v.size(); ++i) {
    CHECK(std::fabs(sz.re.v[i] - (a * sx.re.v[i] + b * sy.re.v[i])) <= 1e-10);
    CHECK(std::fabs(sz.im.v[i] - (a * sx.im.v[i] + b * sy.im.v[i])) <= 1e-10);
  }
}

TEST_CASE("istft(stft(x)) reconstructs the interior to 1e-6") {
  Rng rng(34);
  StftConfig cfg;
  SUBCASE("default hop 300") {}
  SUBCASE("hop 100") { cfg.hop = 100; }
  const TimeSignal x = random_signal(rng, 4000);
  const TimeSignal y = istft(stft(x, cfg));
  REQUIRE(y.samples.size() == x.samples.size());
  CHECK(max_interior_error(x, y, cfg.frame_length) <= 1e-6);
}

TEST_CASE("istft of all-zero spectrogram is silence; istft is additive") {
  Rng rng(35);
  const StftConfig cfg;
  const TimeSignal x = random_signal(rng, 3000);
  const TimeSignal y = random_signal(rng, 3000);
  ComplexSpectrogram sx = stft(x, cfg);
  const ComplexSpectrogram sy = stft(y, cfg);

  ComplexSpectrogram zero = sx;
  std::fill(zero.re.v.begin(), zero.re.v.end(), 0.0);
  std::fill(zero.im.v.begin(), zero.im.v.end(), 0.0);
  for (double v : istft(zero).samples) CHECK(v == 0.0);

  for (std::size_t i = 0; i < sx.re.v.size(); ++i) {
    sx.re.v[i] += sy.re.v[i];
    sx.im.v[i] += sy.im.v[i];
  }
  const TimeSignal sum = istft(sx);
  TimeSignal ref;
  ref.samples.resize(x.samples.size());
  for (std::size_t i = 0; i < ref.samples.size(); ++i)
    ref.samples[i] = x.samples[i] + y.samples[i];
  CHECK(max_interior_error(ref, sum, cfg.frame_length) <= 1e-6);
}

TEST_CASE("istft rejects bin counts inconsistent with the config") {
  ComplexSpectrogram spec;
  spec.re = Tensor::zeros2(100, 4);
  spec.im = Tensor::zeros2(100, 4);
  spec.original_length = 1200;
  CHECK_THROWS_AS(istft(spec), InvalidInput);
}

TEST_CASE("magnitude: modulus, zeros, phase invariance") {
  ComplexSpectrogram spec;
  spec.re = Tensor::zeros2(1, 1);
  spec.im = Tensor::zeros2(1, 1);
  spec.re.v[0] = 3.0;
  spec.im.v[0] = 4.0;
  CHECK(magnitude(spec).v[0] == doctest::Approx(5.0));

  Rng rng(36);
  ComplexSpectrogram r;
  r.re = Tensor::zeros2(4, 3);
  r.im = Tensor::zeros2(4, 3);
  for (double& v : r.re.v) v = rng.uniform(-1, 1);
  for (double& v : r.im.v) v = rng.uniform(-1, 1);
  const Tensor base = magnitude(r);
  const double th = rng.uniform(0, 6.28);
  ComplexSpectrogram rot = r;
  for (std::size_t i = 0; i < r.re.v.size(); ++i) {
    rot.re.v[i] = r.re.v[i] * std::cos(th) - r.im.v[i] * std::sin(th);
    rot.im.v[i] = r.re.v[i] * std::sin(th) + r.im.v[i] * std::cos(th);
  }
  const Tensor rotm = magnitude(rot);
  for (std::size_t i = 0; i < base.v.size(); ++i)
    CHECK(rotm.v[i] == doctest::Approx(base.v[i]).epsilon(1e-12));

  ComplexSpectrogram z;
  z.re = Tensor::zeros2(2, 2);
  z.im = Tensor::zeros2(2, 2);
  for (double v : magnitude(z).v) CHECK(v == 0.0);
}

TEST_CASE("apply_mask: identity, zero, direct product, shape errors") {
  Rng rng(37);
  ComplexSpectrogram y;
  y.re = Tensor::zeros2(3, 2);
  y.im = Tensor::zeros2(3, 2);
  for (double& v : y.re.v) v = rng.uniform(-1, 1);
  for (double& v : y.im.v) v = rng.uniform(-1, 1);

  Tensor ones = Tensor::zeros2(3, 2);
  std::fill(ones.v.begin(), ones.v.end(), 1.0);
  Tensor zeros = Tensor::zeros2(3, 2);
  const ComplexSpectrogram idr = apply_mask(y, ones, zeros);
  for (std::size_t i = 0; i < y.re.v.size(); ++i) {
    CHECK(idr.re.v[i] == y.re.v[i]);
    CHECK(idr.im.v[i] == y.im.v[i]);
  }
  const ComplexSpectrogram zr = apply_mask(y, zeros, zeros);
  for (double v : zr.re.v) CHECK(v == 0.0);

  ComplexSpectrogram one;
  one.re = Tensor::zeros2(1, 1);
  one.im = Tensor::zeros2(1, 1);
  one.re.v[0] = 2.0;
  Tensor mr = Tensor::zeros2(1, 1), mi = Tensor::zeros2(1, 1);
  mr.v[0] = 0.5;
  mi.v[0] = 0.5;
  const ComplexSpectrogram prod = apply_mask(one, mr, mi);
  CHECK(prod.re.v[0] == doctest::Approx(1.0));
  CHECK(prod.im.v[0] == doctest::Approx(1.0));

  Tensor bad = Tensor::zeros2(2, 2);
  CHECK_THROWS_AS(apply_mask(y, bad, bad), InvalidInput);
}

TEST_CASE("istft_node forward equals istft and gradients match finite differences") {
  Rng rng(38);
  StftConfig cfg;
  cfg.frame_length = 8;
  cfg.hop = 4;
  cfg.fft_length = 16;
  const int len = 24;
  const TimeSignal x = random_signal(rng, len);
  const ComplexSpectrogram spec = stft(x, cfg);

  Tape t;
  const int ir = t.leaf(spec.re, true);
  const int ii = t.leaf(spec.im, true);
  const int node = istft_node(t, ir, ii, cfg, len);
  const TimeSignal ref = istft(spec);
  REQUIRE(t.val(node).size() == static_cast<std::int64_t>(ref.samples.size()));
  for (std::size_t i = 0; i < ref.samples.size(); ++i)
    CHECK(t.val(node).v[i] == doctest::Approx(ref.samples[i]).epsilon(1e-12));

  const Tensor w = testutil::random_tensor(rng, {len, 1, 1}, 1);
  testutil::fd_check(
      {spec.re, spec.im},
      [&](Tape& tp, const std::vector<int>& ids) {
        const int out = istft_node(tp, ids[0], ids[1], cfg, len);
        const int wid = tp.leaf(w, false);
        return tp.sum(tp.mul(out, wid));
      },
      1e-5, 1e-5);
}

TEST_CASE("wav round-trips PCM16 and float32, rejects other formats") {
  namespace fs = std::filesystem;
  Rng rng(39);
  const fs::path dir = fs::temp_directory_path() / "nsvae_wav_test";
  fs::create_directories(dir);
  TimeSignal s = random_signal(rng, 800, 0.8);

  const std::string p16 = (dir / "a16.wav").string();
  write_wav(p16, s, false);
  const TimeSignal r16 = read_wav(p16);
  REQUIRE(r16.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    CHECK(std::fabs(r16.samples[i] - s.samples[i]) <= 0.5 / 32768.0 + 1e-9);

  const std::string p32 = (dir / "a32.wav").string();
  write_wav(p32, s, true);
  const TimeSignal r32 = read_wav(p32);
  REQUIRE(r32.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i)
    CHECK(std::fabs(r32.samples[i] - s.samples[i]) <= 1e-7);

  // Stereo PCM file must be rejected: patch the channel count in the header.
  const std::string bad = (dir / "stereo.wav").string();
  {
    std::ifstream in(p16, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[22] = 2;  // fmt chunk channel field
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(read_wav(bad), InvalidInput);
  CHECK_THROWS_AS(read_wav((dir / "missing.wav").string()), InvalidInput);
  fs::remove_all(dir);
}
