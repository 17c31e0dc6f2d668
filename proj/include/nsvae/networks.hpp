// SPDX-License-Identifier: Apache-2.0
//
// The model zoo: complex-valued convolutional recurrent encoder and decoder,
// plus a real-valued discriminator for adversarial fine-tuning. All networks
// own their parameters in a ParamStore and describe one forward pass as tape
// nodes, so a single gradient mechanism serves every training stage.
//
// Complex layers follow the widely-used real-pair realisation: a complex
// feature map is a pair of real tensors (re, im), a complex conv is one real
// conv over packed channels with the block weight [[Wr, -Wi], [Wi, Wr]], and
// a complex LSTM combines two real LSTMs as
//   out_re = LSTMr(x_re) - LSTMi(x_im), out_im = LSTMr(x_im) + LSTMi(x_re).
#ifndef NSVAE_NETWORKS_HPP
#define NSVAE_NETWORKS_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nsvae/autodiff.hpp"
#include "nsvae/latent.hpp"
#include "nsvae/rng.hpp"
#include "nsvae/tensor.hpp"

namespace nsvae {

// Architecture hyperparameters shared by encoder, decoder and discriminator.
// The conv stack halves the frequency axis six times, so the spectrogram
// height without its DC row must be a multiple of 64.
struct NetworkConfig {
  std::vector<int> channels{32, 64, 128, 128, 256, 256};
  int latent_dim = 128;
  int lstm_hidden = 128;
  int bins = 257;

  void validate() const;
  int freq_in() const { return bins - 1; }
  int freq_bottom() const { return freq_in() / 64; }
  int bottom_feature() const { return channels.back() * freq_bottom(); }
};

// Named parameter registry. Handles are dense indices in registration order,
// which fixes both the checkpoint layout and the optimizer slot assignment.
class ParamStore {
 public:
  int add(std::string name, Tensor init);
  int handle(const std::string& name) const;  // -1 when absent
  const std::string& name(int h) const { return names_[static_cast<std::size_t>(h)]; }
  Tensor& value(int h) { return values_[static_cast<std::size_t>(h)]; }
  const Tensor& value(int h) const { return values_[static_cast<std::size_t>(h)]; }
  int count() const { return static_cast<int>(values_.size()); }
  std::int64_t total_size() const;

  // Leaves every parameter onto the tape; result is indexed by handle.
  std::vector<int> lift(Tape& t, bool requires_grad = true) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, int> index_;
};

// Accumulates handle-indexed gradients across a batch of per-utterance tapes,
// so peak memory stays at one utterance worth of graph.
class GradAccum {
 public:
  explicit GradAccum(const ParamStore& ps);
  void add_scaled(Tape& t, const std::vector<int>& ids, double scale);
  const std::vector<Tensor>& grads() const { return grads_; }
  double squared_norm() const;
  void scale_all(double s);
  void reset();

 private:
  std::vector<Tensor> grads_;
};

// Adam with global-norm gradient clipping. Moment slots live here, keyed by
// parameter handle; a non-finite gradient norm aborts the run.
class Adam {
 public:
  explicit Adam(double lr, double clip_norm = 5.0);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  void step(ParamStore& ps, const std::vector<Tensor>& grads);

 private:
  double lr_;
  double clip_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// Per-block parameter handles of one complex conv (or transposed conv) block.
struct ComplexConvHandles {
  int wr = -1, wi = -1;      // kernel, real and imaginary parts
  int br = -1, bi = -1;      // bias per output channel
  int gr = -1, betar = -1;   // channel norm affine, real part
  int gi = -1, betai = -1;   // channel norm affine, imaginary part
  int ar = -1, ai = -1;      // PReLU slopes per channel
};

struct LstmHandles {
  int wx = -1, wh = -1, b = -1;  // gates stacked [input, forget, cell, output]
};

struct ComplexLinearHandles {
  int wr = -1, wi = -1, br = -1, bi = -1;
};

struct RealLinearHandles {
  int w = -1, b = -1;
};

// Handles of one latent head: complex mean plus real scale / relation
// magnitude / relation phase lines read from the concatenated LSTM state.
struct LatentHeadHandles {
  ComplexLinearHandles mu;
  RealLinearHandles raw_s, raw_t, raw_ph;
};

namespace detail {

// Layer primitives the networks are assembled from; exposed for focused
// oracle tests against unpacked compositions.
std::pair<int, int> conv_block(Tape& t, const std::vector<int>& p, const ComplexConvHandles& h,
                               int xr, int xi, const ConvGeom& g, bool activate);
std::pair<int, int> deconv_block(Tape& t, const std::vector<int>& p, const ComplexConvHandles& h,
                                 int yr, int yi, const ConvGeom& g, bool activate);
int run_lstm(Tape& t, const std::vector<int>& p, const LstmHandles& h, int x, int hidden);
std::pair<int, int> complex_lstm(Tape& t, const std::vector<int>& p, const LstmHandles& re,
                                 const LstmHandles& im, int xr, int xi, int hidden);
std::pair<int, int> complex_linear(Tape& t, const std::vector<int>& p,
                                   const ComplexLinearHandles& h, int xr, int xi);

}  // namespace detail

struct EncoderOutput {
  DistNodes speech;
  DistNodes noise;                 // only set by dual-head encoders
  std::vector<ComplexNodes> taps;  // conv block activations, fine to coarse
};

// Spectrogram-to-posterior encoder: drop DC, six complex conv blocks, one
// complex LSTM, then one latent head (clean pretraining) or two sharing the
// trunk (noise suppression, speech head first).
class Encoder {
 public:
  Encoder(NetworkConfig cfg, bool dual_head, Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  bool dual_head() const { return dual_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // spec_re / spec_im: rank-2 (bins, frames) nodes of one utterance.
  EncoderOutput forward(Tape& t, const std::vector<int>& p, int spec_re, int spec_im) const;

 private:
  LatentHeadHandles add_head(const std::string& prefix, Rng& rng);

  NetworkConfig cfg_;
  bool dual_;
  ParamStore store_;
  std::vector<ComplexConvHandles> blocks_;
  LstmHandles lstm_re_, lstm_im_;
  LatentHeadHandles speech_, noise_;
};

// Latent-to-spectrogram decoder mirroring the encoder: complex linear to the
// LSTM width, complex LSTM, complex linear to the bottleneck feature map,
// six complex transposed conv blocks, DC row restored as zero. The output is
// a complex (bins, frames) map; callers read it as a spectrogram or apply it
// to a noisy spectrogram as a mask.
class Decoder {
 public:
  Decoder(NetworkConfig cfg, bool with_skips, Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  bool with_skips() const { return skips_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Grafts encoder-tap inputs onto a decoder trained without them. The new
  // kernel rows start at zero, so the function computed is unchanged until
  // fine-tuning moves them.
  void enable_skips();

  // taps: EncoderOutput::taps from the matching forward pass; required
  // exactly when skips are enabled.
  ComplexNodes forward(Tape& t, const std::vector<int>& p, const ComplexNodes& z,
                       const std::vector<ComplexNodes>* taps = nullptr) const;

 private:
  NetworkConfig cfg_;
  bool skips_;
  ParamStore store_;
  ComplexLinearHandles lin_in_, lin_mid_;
  LstmHandles lstm_re_, lstm_im_;
  std::vector<ComplexConvHandles> blocks_;
};

// Real conv-recurrent critic scoring a complex spectrogram with one number.
// Mirrors the encoder trunk on two real channels (re, im).
class Discriminator {
 public:
  Discriminator(NetworkConfig cfg, Rng& rng);

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Returns a scalar node: mean per-frame score.
  int forward(Tape& t, const std::vector<int>& p, int spec_re, int spec_im) const;

 private:
  NetworkConfig cfg_;
  ParamStore store_;
  struct RealBlock {
    int w = -1, b = -1, g = -1, beta = -1, a = -1;
  };
  std::vector<RealBlock> blocks_;
  LstmHandles lstm_;
  RealLinearHandles head_;
};

}  // namespace nsvae

#endif
