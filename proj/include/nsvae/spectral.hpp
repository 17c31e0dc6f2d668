// SPDX-License-Identifier: Apache-2.0
//
// Time-frequency transforms: framed analysis/synthesis with a periodic Hann
// window, one-sided spectra, normalized weighted overlap-add reconstruction,
// complex masking and WAV file handling. The synthesis path also exists as a
// tape op so time-domain losses can backpropagate into spectrogram estimates.
#ifndef NSVAE_SPECTRAL_HPP
#define NSVAE_SPECTRAL_HPP

#include <string>
#include <vector>

#include "nsvae/autodiff.hpp"
#include "nsvae/tensor.hpp"

namespace nsvae {

struct TimeSignal {
  std::vector<double> samples;
  int sample_rate_hz = 16000;
};

struct StftConfig {
  int frame_length = 400;
  int hop = 300;
  int fft_length = 512;

  int bins() const { return fft_length / 2 + 1; }
  void validate() const;
};

// One-sided complex spectrogram, bins (F rows) by frames (N columns).
// original_length lets istft trim the zero-padded tail.
struct ComplexSpectrogram {
  Tensor re;  // (F, N)
  Tensor im;  // (F, N)
  StftConfig config;
  int original_length = 0;

  int bins() const { return re.d[0]; }
  int frames() const { return re.d[1]; }
};

ComplexSpectrogram stft(const TimeSignal& signal, const StftConfig& cfg);
TimeSignal istft(const ComplexSpectrogram& spec);

// Entrywise modulus, (F, N).
Tensor magnitude(const ComplexSpectrogram& spec);

// Entrywise complex product X̂ = Y ⊙ M; result carries Y's config.
ComplexSpectrogram apply_mask(const ComplexSpectrogram& noisy, const Tensor& mask_re,
                              const Tensor& mask_im);

// Periodic Hann window of the given length.
std::vector<double> hann_window(int length);

// Number of analysis frames for a signal length (tail zero-padded).
int stft_frame_count(int num_samples, const StftConfig& cfg);

// Differentiable synthesis: (re, im) tape nodes of shape (F, N) to a rank-1
// time-domain node of original_length samples. Imaginary parts of the DC and
// Nyquist bins are treated as zero; their gradients are zero as well.
int istft_node(Tape& t, int re_id, int im_id, const StftConfig& cfg, int original_length);

// WAV I/O: mono 16 kHz, PCM 16-bit or IEEE float 32-bit. Everything else is
// rejected with the offending path in the message.
TimeSignal read_wav(const std::string& path);
void write_wav(const std::string& path, const TimeSignal& signal, bool as_float = false);

}  // namespace nsvae

#endif
