// SPDX-License-Identifier: Apache-2.0
#include "nsvae/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <unordered_map>

#include "nsvae/common.hpp"

namespace nsvae {

namespace {

constexpr double kWolaFloor = 1e-8;

// One cached FFTW plan pair per transform size. Plans write into the buffers
// owned here; callers copy in and out. Single-threaded by design.
struct FftPlans {
  int n = 0;
  double* real = nullptr;
  fftw_complex* cplx = nullptr;
  fftw_plan fwd{};
  fftw_plan inv{};

  explicit FftPlans(int n_) : n(n_) {
    real = fftw_alloc_real(static_cast<std::size_t>(n));
    cplx = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fwd = fftw_plan_dft_r2c_1d(n, real, cplx, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(n, cplx, real, FFTW_ESTIMATE);
  }
  ~FftPlans() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(cplx);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;
};

FftPlans& plans_for(int n) {
  static std::unordered_map<int, std::unique_ptr<FftPlans>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<FftPlans>(n)).first;
  return *it->second;
}

}  // namespace

void StftConfig::validate() const {
  require(hop > 0 && hop <= frame_length && frame_length <= fft_length,
          "stft config requires 0 < hop <= frame_length <= fft_length");
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i)
    w[static_cast<std::size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / static_cast<double>(length)));
  return w;
}

int stft_frame_count(int num_samples, const StftConfig& cfg) {
  if (num_samples < cfg.frame_length) return 0;
  const int beyond = num_samples - cfg.frame_length;
  return 1 + (beyond + cfg.hop - 1) / cfg.hop;
}

ComplexSpectrogram stft(const TimeSignal& signal, const StftConfig& cfg) {
  cfg.validate();
  const int len = static_cast<int>(signal.samples.size());
  require(len >= cfg.frame_length, "stft: signal shorter than one frame");
  for (double s : signal.samples) require(std::isfinite(s), "stft: non-finite sample");

  const int F = cfg.bins();
  const int N = stft_frame_count(len, cfg);
  const std::vector<double> w = hann_window(cfg.frame_length);
  FftPlans& p = plans_for(cfg.fft_length);

  ComplexSpectrogram out;
  out.re = Tensor::zeros2(F, N);
  out.im = Tensor::zeros2(F, N);
  out.config = cfg;
  out.original_length = len;

  for (int m = 0; m < N; ++m) {
    const int s0 = m * cfg.hop;
    std::memset(p.real, 0, sizeof(double) * static_cast<std::size_t>(cfg.fft_length));
    const int copy = std::min(cfg.frame_length, len - s0);
    for (int i = 0; i < copy; ++i)
      p.real[i] = signal.samples[static_cast<std::size_t>(s0 + i)] * w[static_cast<std::size_t>(i)];
    fftw_execute(p.fwd);
    for (int k = 0; k < F; ++k) {
      out.re.at2(k, m) = p.cplx[k][0];
      out.im.at2(k, m) = p.cplx[k][1];
    }
  }
  return out;
}

namespace {

// Shared synthesis core: frames -> normalized overlap-add signal. Also
// optionally reports the per-sample normalizer for the adjoint path.
void wola_synthesize(const Tensor& re, const Tensor& im, const StftConfig& cfg, int out_len,
                     std::vector<double>& out, std::vector<double>* norm_out) {
  const int F = cfg.bins();
  const int N = re.d[1];
  const std::vector<double> w = hann_window(cfg.frame_length);
  FftPlans& p = plans_for(cfg.fft_length);

  const int covered = (N - 1) * cfg.hop + cfg.frame_length;
  std::vector<double> acc(static_cast<std::size_t>(covered), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(covered), 0.0);

  for (int m = 0; m < N; ++m) {
    for (int k = 0; k < F; ++k) {
      p.cplx[k][0] = re.at2(k, m);
      p.cplx[k][1] = im.at2(k, m);
    }
    p.cplx[0][1] = 0.0;      // DC and Nyquist of a real signal are real
    p.cplx[F - 1][1] = 0.0;
    fftw_execute(p.inv);
    const int s0 = m * cfg.hop;
    const double inv_n = 1.0 / static_cast<double>(cfg.fft_length);
    for (int i = 0; i < cfg.frame_length; ++i) {
      const double wi = w[static_cast<std::size_t>(i)];
      acc[static_cast<std::size_t>(s0 + i)] += wi * p.real[i] * inv_n;
      wsum[static_cast<std::size_t>(s0 + i)] += wi * wi;
    }
  }

  out.assign(static_cast<std::size_t>(out_len), 0.0);
  const int n_copy = std::min(out_len, covered);
  for (int i = 0; i < n_copy; ++i) {
    const double d = std::max(wsum[static_cast<std::size_t>(i)], kWolaFloor);
    out[static_cast<std::size_t>(i)] = acc[static_cast<std::size_t>(i)] / d;
  }
  if (norm_out) {
    norm_out->assign(static_cast<std::size_t>(covered), 0.0);
    for (int i = 0; i < covered; ++i)
      (*norm_out)[static_cast<std::size_t>(i)] =
          1.0 / std::max(wsum[static_cast<std::size_t>(i)], kWolaFloor);
  }
}

}  // namespace

TimeSignal istft(const ComplexSpectrogram& spec) {
  spec.config.validate();
  require(spec.re.rank == 2 && spec.re.same_shape(spec.im), "istft: malformed spectrogram");
  require(spec.re.d[0] == spec.config.bins(), "istft: bin count inconsistent with config");
  require(spec.frames() > 0, "istft: empty spectrogram");
  const int covered = (spec.frames() - 1) * spec.config.hop + spec.config.frame_length;
  const int out_len = spec.original_length > 0 ? spec.original_length : covered;
  TimeSignal out;
  wola_synthesize(spec.re, spec.im, spec.config, out_len, out.samples, nullptr);
  return out;
}

Tensor magnitude(const ComplexSpectrogram& spec) {
  Tensor mag = Tensor::zeros2(spec.re.d[0], spec.re.d[1]);
  for (std::size_t i = 0; i < mag.v.size(); ++i)
    mag.v[i] = std::hypot(spec.re.v[i], spec.im.v[i]);
  return mag;
}

ComplexSpectrogram apply_mask(const ComplexSpectrogram& noisy, const Tensor& mask_re,
                              const Tensor& mask_im) {
  require(mask_re.same_shape(noisy.re) && mask_im.same_shape(noisy.im),
          "apply_mask: mask shape mismatch");
  ComplexSpectrogram out = noisy;
  for (std::size_t i = 0; i < out.re.v.size(); ++i) {
    const double yr = noisy.re.v[i];
    const double yi = noisy.im.v[i];
    out.re.v[i] = yr * mask_re.v[i] - yi * mask_im.v[i];
    out.im.v[i] = yr * mask_im.v[i] + yi * mask_re.v[i];
  }
  return out;
}

int istft_node(Tape& t, int re_id, int im_id, const StftConfig& cfg, int original_length) {
  cfg.validate();
  const Tensor& re = t.val(re_id);
  const Tensor& im = t.val(im_id);
  require(re.rank == 2 && re.same_shape(im), "istft_node: malformed spectrogram nodes");
  require(re.d[0] == cfg.bins(), "istft_node: bin count inconsistent with config");
  require(original_length > 0, "istft_node: original_length must be positive");

  std::vector<double> out_samples;
  std::vector<double> norm;
  wola_synthesize(re, im, cfg, original_length, out_samples, &norm);
  Tensor value = Tensor::zeros1(original_length);
  std::copy(out_samples.begin(), out_samples.end(), value.v.begin());

  const int N = re.d[1];
  const int F = cfg.bins();
  auto back = [re_id, im_id, cfg, N, F, norm](Tape& tp, int id) {
    const Tensor& g = tp.grad(id);
    const std::vector<double> w = hann_window(cfg.frame_length);
    FftPlans& p = plans_for(cfg.fft_length);
    const bool need_re = tp.requires_grad(re_id);
    const bool need_im = tp.requires_grad(im_id);
    const int out_len = static_cast<int>(g.v.size());
    for (int m = 0; m < N; ++m) {
      const int s0 = m * cfg.hop;
      std::memset(p.real, 0, sizeof(double) * static_cast<std::size_t>(cfg.fft_length));
      for (int i = 0; i < cfg.frame_length; ++i) {
        const int tpos = s0 + i;
        if (tpos >= out_len) break;
        p.real[i] = w[static_cast<std::size_t>(i)] * g.v[static_cast<std::size_t>(tpos)] *
                    norm[static_cast<std::size_t>(tpos)];
      }
      fftw_execute(p.fwd);
      const double inv_n = 1.0 / static_cast<double>(cfg.fft_length);
      for (int k = 0; k < F; ++k) {
        const bool edge = (k == 0 || k == F - 1);
        const double cr = (edge ? 1.0 : 2.0) * inv_n;
        if (need_re) tp.grad(re_id).at2(k, m) += cr * p.cplx[k][0];
        if (need_im && !edge) tp.grad(im_id).at2(k, m) += 2.0 * inv_n * p.cplx[k][1];
      }
    }
  };
  return t.custom(std::move(value), {re_id, im_id}, back);
}

}  // namespace nsvae
