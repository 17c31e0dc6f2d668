// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over Tensor values. A Tape is a
// dynamic graph: every op appends a node whose backward closure scatters the
// incoming adjoint to its parents. Losses, latent-space formulas and the
// whole network stack are built from these ops, so analytic gradients come
// from one mechanism that is finite-difference checked in the tests.
#ifndef NSVAE_AUTODIFF_HPP
#define NSVAE_AUTODIFF_HPP

#include <functional>
#include <span>
#include <vector>

#include "nsvae/tensor.hpp"

namespace nsvae {

// Geometry of a 2-D convolution over (channels, freq, time) maps.
// Frequency is padded symmetrically; time is padded on the left only, which
// with kernel (5,2) and stride (2,1) keeps the frame count unchanged.
struct ConvGeom {
  int c_in = 0;
  int f_in = 0;
  int kf = 5;
  int kt = 2;
  int sf = 2;
  int st = 1;
  int pad_f = 2;
  int pad_t = 1;  // left-side time padding

  int f_out() const { return (f_in + 2 * pad_f - kf) / sf + 1; }
  int t_out(int t_in) const { return (t_in + pad_t - kt) / st + 1; }
  // Time extent whose forward conv yields t_out frames (stride 1 only).
  int t_in_for(int t_out_frames) const { return t_out_frames - pad_t + kt - 1; }
  int patch() const { return c_in * kf * kt; }
};

class Tape {
 public:
  int leaf(Tensor value, bool requires_grad = false);

  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& grad(int id);
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.v.empty(); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].rg; }
  double scalar(int id) const { return val(id).v[0]; }

  void backward(int loss_id);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  // -- elementwise binary (equal shapes) --
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);

  // -- constants --
  int scale(int a, double c);
  int add_const(int a, double c);

  // a * s where s is a scalar node broadcast over a
  int scale_by(int a, int s);

  // -- elementwise unary --
  int neg(int a);
  int exp_(int a);
  int log_(int a);
  int sqrt_(int a);
  int tanh_(int a);
  int sigmoid_(int a);
  int square(int a);
  int inv(int a);
  int cos_(int a);
  int sin_(int a);
  int clamp(int a, double lo, double hi);

  // -- reductions --
  int sum(int a);  // scalar node

  // -- shape --
  int reshape(int a, std::array<int, 3> dims, int rank);
  int slice_dim0(int a, int r0, int r1);
  int concat_dim0(std::span<const int> ids);
  int slice_cols(int a, int c0, int c1);          // rank-2
  int concat_cols(std::span<const int> ids);      // rank-2

  // -- linear algebra / nn --
  int matmul(int a, int b);                        // (m,k)(k,n)
  int bias_add_dim0(int a, int bias);              // bias per dim-0 slice
  int prelu(int x, int alpha);                     // alpha per dim-0 slice
  int channel_norm(int x, int gamma, int beta, double eps);
  int conv2d(int x, int w, const ConvGeom& g);
  int conv2d_transpose(int y, int w, const ConvGeom& g);

  // Custom op escape hatch: the closure receives the tape and the node id,
  // reads grad(id) and accumulates into grad(parent) as needed.
  int custom(Tensor value, std::vector<int> parents,
             std::function<void(Tape&, int)> back);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Tensor aux;  // op scratch kept for backward (e.g. im2col buffer)
    std::function<void(Tape&, int)> back;
    bool rg = false;
  };

  int push(Tensor value, bool rg, std::function<void(Tape&, int)> back);
  bool any_rg(std::span<const int> ids) const;

  std::vector<Node> nodes_;

  friend struct TapeAccess;
  Tensor& aux(int id) { return nodes_[static_cast<std::size_t>(id)].aux; }
};

// im2col / col2im used by the conv ops; exposed for tests.
void im2col(const Tensor& x, const ConvGeom& g, Tensor& col);
void col2im(const Tensor& col, const ConvGeom& g, int t_in, Tensor& x);

}  // namespace nsvae

#endif
