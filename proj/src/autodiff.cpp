// SPDX-License-Identifier: Apache-2.0
#include "nsvae/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "nsvae/common.hpp"

namespace nsvae {

// Backward closures are plain lambdas, so op scratch stored on nodes is
// reached through this narrow accessor instead of widening Tape's API.
struct TapeAccess {
  static Tensor& aux(Tape& t, int id) { return t.aux(id); }
};

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using CArrMap = Eigen::Map<const Eigen::ArrayXd>;

ArrMap arr(Tensor& t) { return ArrMap(t.data(), t.size()); }
CArrMap arr(const Tensor& t) { return CArrMap(t.data(), t.size()); }
CArrMap carr(const Tensor& t) { return CArrMap(t.data(), t.size()); }

}  // namespace

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

int Tape::push(Tensor value, bool rg, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.rg = rg;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

bool Tape::any_rg(std::span<const int> ids) const {
  for (int id : ids) {
    if (requires_grad(id)) return true;
  }
  return false;
}

int Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.v.empty()) {
    n.grad = n.value;
    std::fill(n.grad.v.begin(), n.grad.v.end(), 0.0);
  }
  return n.grad;
}

void Tape::backward(int loss_id) {
  require(val(loss_id).size() == 1, "backward: loss must be scalar");
  grad(loss_id).v[0] = 1.0;
  for (int i = loss_id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.rg || !n.back || n.grad.v.empty()) continue;
    n.back(*this, i);
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// elementwise

int Tape::add(int a, int b) {
  require(val(a).same_shape(val(b)), "add: shape mismatch");
  Tensor out = val(a);
  arr(out) += arr(val(b));
  return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(g);
    if (t.requires_grad(b)) arr(t.grad(b)) += arr(g);
  });
}

int Tape::sub(int a, int b) {
  require(val(a).same_shape(val(b)), "sub: shape mismatch");
  Tensor out = val(a);
  arr(out) -= arr(val(b));
  return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(g);
    if (t.requires_grad(b)) arr(t.grad(b)) -= arr(g);
  });
}

int Tape::mul(int a, int b) {
  require(val(a).same_shape(val(b)), "mul: shape mismatch");
  Tensor out = val(a);
  arr(out) *= arr(val(b));
  return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(g) * arr(t.val(b));
    if (t.requires_grad(b)) arr(t.grad(b)) += arr(g) * arr(t.val(a));
  });
}

int Tape::scale(int a, double c) {
  Tensor out = val(a);
  arr(out) *= c;
  return push(std::move(out), requires_grad(a), [a, c](Tape& t, int id) {
    if (t.requires_grad(a)) arr(t.grad(a)) += c * arr(t.grad(id));
  });
}

int Tape::add_const(int a, double c) {
  Tensor out = val(a);
  arr(out) += c;
  return push(std::move(out), requires_grad(a), [a](Tape& t, int id) {
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(t.grad(id));
  });
}

int Tape::scale_by(int a, int s) {
  require(val(s).size() == 1, "scale_by: s must be scalar");
  Tensor out = val(a);
  arr(out) *= val(s).v[0];
  std::array<int, 2> ps{a, s};
  return push(std::move(out), any_rg(ps), [a, s](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) arr(t.grad(a)) += t.val(s).v[0] * arr(g);
    if (t.requires_grad(s)) t.grad(s).v[0] += (arr(g) * arr(t.val(a))).sum();
  });
}

#define NSVAE_UNARY(NAME, FWD, BWD)                                              \
  int Tape::NAME(int a) {                                                        \
    Tensor out = val(a);                                                         \
    arr(out) = FWD;                                                              \
    return push(std::move(out), requires_grad(a), [a](Tape& t, int id) {         \
      if (!t.requires_grad(a)) return;                                           \
      CArrMap x = carr(t.val(a));                                                 \
      CArrMap y = carr(t.val(id));                                                \
      CArrMap g = carr(t.grad(id));                                               \
      (void)x;                                                                   \
      (void)y;                                                                   \
      arr(t.grad(a)) += BWD;                                                     \
    });                                                                          \
  }

NSVAE_UNARY(neg, -arr(val(a)), -g)
NSVAE_UNARY(exp_, arr(val(a)).exp(), g* y)
NSVAE_UNARY(log_, arr(val(a)).log(), g / x)
NSVAE_UNARY(tanh_, arr(val(a)).tanh(), g*(1.0 - y.square()))
NSVAE_UNARY(square, arr(val(a)).square(), 2.0 * g * x)
NSVAE_UNARY(inv, arr(val(a)).inverse(), -g * y.square())
NSVAE_UNARY(cos_, arr(val(a)).cos(), -g * x.sin())
NSVAE_UNARY(sin_, arr(val(a)).sin(), g* x.cos())
NSVAE_UNARY(sigmoid_, 1.0 / (1.0 + (-arr(val(a))).exp()), g* y*(1.0 - y))

#undef NSVAE_UNARY

int Tape::sqrt_(int a) {
  Tensor out = val(a);
  arr(out) = arr(val(a)).max(0.0).sqrt();
  return push(std::move(out), requires_grad(a), [a](Tape& t, int id) {
    if (!t.requires_grad(a)) return;
    CArrMap y = carr(t.val(id));
    CArrMap g = carr(t.grad(id));
    arr(t.grad(a)) += g * 0.5 / y.max(1e-150);
  });
}

int Tape::clamp(int a, double lo, double hi) {
  Tensor out = val(a);
  arr(out) = arr(val(a)).max(lo).min(hi);
  return push(std::move(out), requires_grad(a), [a, lo, hi](Tape& t, int id) {
    if (!t.requires_grad(a)) return;
    CArrMap x = carr(t.val(a));
    CArrMap g = carr(t.grad(id));
    arr(t.grad(a)) += g * ((x >= lo) && (x <= hi)).cast<double>();
  });
}

int Tape::sum(int a) {
  Tensor out = Tensor::scalar(arr(val(a)).sum());
  return push(std::move(out), requires_grad(a), [a](Tape& t, int id) {
    if (t.requires_grad(a)) arr(t.grad(a)) += t.grad(id).v[0];
  });
}

// ---------------------------------------------------------------------------
// shape

int Tape::reshape(int a, std::array<int, 3> dims, int rank) {
  Tensor out = val(a);
  out.d = dims;
  out.rank = rank;
  std::size_t n = 1;
  for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(dims[i]);
  require(static_cast<std::int64_t>(n) == val(a).size(), "reshape: size mismatch");
  return push(std::move(out), requires_grad(a), [a](Tape& t, int id) {
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(t.grad(id));
  });
}

int Tape::slice_dim0(int a, int r0, int r1) {
  const Tensor& x = val(a);
  require(0 <= r0 && r0 < r1 && r1 <= x.d[0], "slice_dim0: bad range");
  const std::int64_t inner = x.inner();
  Tensor out = x;
  out.d[0] = r1 - r0;
  out.v.assign(x.v.begin() + r0 * inner, x.v.begin() + r1 * inner);
  return push(std::move(out), requires_grad(a), [a, r0, inner](Tape& t, int id) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(id);
    double* dst = t.grad(a).data() + r0 * inner;
    const double* src = g.data();
    for (std::int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  });
}

int Tape::concat_dim0(std::span<const int> ids) {
  require(!ids.empty(), "concat_dim0: empty");
  const Tensor& first = val(ids[0]);
  Tensor out = first;
  int total = 0;
  std::int64_t inner = first.inner();
  for (int id : ids) {
    require(val(id).inner() == inner && val(id).rank == first.rank,
            "concat_dim0: incompatible shapes");
    total += val(id).d[0];
  }
  out.d[0] = total;
  out.v.resize(static_cast<std::size_t>(total) * inner);
  std::size_t off = 0;
  for (int id : ids) {
    const Tensor& x = val(id);
    std::memcpy(out.v.data() + off, x.data(), x.v.size() * sizeof(double));
    off += x.v.size();
  }
  std::vector<int> parents(ids.begin(), ids.end());
  return push(std::move(out), any_rg(ids), [parents](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    std::int64_t off = 0;
    for (int p : parents) {
      const std::int64_t n = t.val(p).size();
      if (t.requires_grad(p)) {
        double* dst = t.grad(p).data();
        const double* src = g.data() + off;
        for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
      }
      off += n;
    }
  });
}

int Tape::slice_cols(int a, int c0, int c1) {
  const Tensor& x = val(a);
  require(x.rank == 2 && 0 <= c0 && c0 < c1 && c1 <= x.d[1], "slice_cols: bad range");
  Tensor out = Tensor::zeros2(x.d[0], c1 - c0);
  for (int r = 0; r < x.d[0]; ++r)
    for (int c = c0; c < c1; ++c) out.at2(r, c - c0) = x.at2(r, c);
  return push(std::move(out), requires_grad(a), [a, c0](Tape& t, int id) {
    if (!t.requires_grad(a)) return;
    const Tensor& g = t.grad(id);
    Tensor& da = t.grad(a);
    for (int r = 0; r < g.d[0]; ++r)
      for (int c = 0; c < g.d[1]; ++c) da.at2(r, c0 + c) += g.at2(r, c);
  });
}

int Tape::concat_cols(std::span<const int> ids) {
  require(!ids.empty(), "concat_cols: empty");
  const int rows = val(ids[0]).d[0];
  int total = 0;
  for (int id : ids) {
    require(val(id).rank == 2 && val(id).d[0] == rows, "concat_cols: incompatible shapes");
    total += val(id).d[1];
  }
  Tensor out = Tensor::zeros2(rows, total);
  int off = 0;
  for (int id : ids) {
    const Tensor& x = val(id);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < x.d[1]; ++c) out.at2(r, off + c) = x.at2(r, c);
    off += x.d[1];
  }
  std::vector<int> parents(ids.begin(), ids.end());
  return push(std::move(out), any_rg(ids), [parents, rows](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    int off = 0;
    for (int p : parents) {
      const int pc = t.val(p).d[1];
      if (t.requires_grad(p)) {
        Tensor& dp = t.grad(p);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < pc; ++c) dp.at2(r, c) += g.at2(r, off + c);
      }
      off += pc;
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra / nn

int Tape::matmul(int a, int b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  require(A.rank == 2 && B.rank == 2 && A.d[1] == B.d[0], "matmul: shape mismatch");
  Tensor out = Tensor::zeros2(A.d[0], B.d[1]);
  MatMap(out.data(), out.d[0], out.d[1]).noalias() =
      CMatMap(A.data(), A.d[0], A.d[1]) * CMatMap(B.data(), B.d[0], B.d[1]);
  std::array<int, 2> ps{a, b};
  return push(std::move(out), any_rg(ps), [a, b](Tape& t, int id) {
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    const Tensor& G = t.grad(id);
    CMatMap g(G.data(), G.d[0], G.d[1]);
    if (t.requires_grad(a)) {
      Tensor& dA = t.grad(a);
      MatMap(dA.data(), dA.d[0], dA.d[1]).noalias() +=
          g * CMatMap(B.data(), B.d[0], B.d[1]).transpose();
    }
    if (t.requires_grad(b)) {
      Tensor& dB = t.grad(b);
      MatMap(dB.data(), dB.d[0], dB.d[1]).noalias() +=
          CMatMap(A.data(), A.d[0], A.d[1]).transpose() * g;
    }
  });
}

int Tape::bias_add_dim0(int a, int bias) {
  const Tensor& x = val(a);
  const Tensor& b = val(bias);
  require(b.size() == x.d[0], "bias_add_dim0: bias length mismatch");
  Tensor out = x;
  const std::int64_t inner = x.inner();
  for (int c = 0; c < x.d[0]; ++c) {
    double* row = out.data() + c * inner;
    for (std::int64_t i = 0; i < inner; ++i) row[i] += b.at(c);
  }
  std::array<int, 2> ps{a, bias};
  return push(std::move(out), any_rg(ps), [a, bias, inner](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a)) arr(t.grad(a)) += arr(g);
    if (t.requires_grad(bias)) {
      Tensor& db = t.grad(bias);
      for (int c = 0; c < g.d[0]; ++c) {
        const double* row = g.data() + c * inner;
        double s = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) s += row[i];
        db.at(c) += s;
      }
    }
  });
}

int Tape::prelu(int x, int alpha) {
  const Tensor& X = val(x);
  const Tensor& A = val(alpha);
  require(A.size() == X.d[0], "prelu: alpha length mismatch");
  Tensor out = X;
  const std::int64_t inner = X.inner();
  for (int c = 0; c < X.d[0]; ++c) {
    const double ac = A.at(c);
    double* row = out.data() + c * inner;
    for (std::int64_t i = 0; i < inner; ++i) {
      if (row[i] < 0.0) row[i] *= ac;
    }
  }
  std::array<int, 2> ps{x, alpha};
  return push(std::move(out), any_rg(ps), [x, alpha, inner](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    const Tensor& X = t.val(x);
    const Tensor& A = t.val(alpha);
    const bool gx = t.requires_grad(x);
    const bool ga = t.requires_grad(alpha);
    for (int c = 0; c < X.d[0]; ++c) {
      const double ac = A.at(c);
      const double* xr = X.data() + c * inner;
      const double* gr = g.data() + c * inner;
      double* dxr = gx ? t.grad(x).data() + c * inner : nullptr;
      double da = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) {
        if (xr[i] >= 0.0) {
          if (gx) dxr[i] += gr[i];
        } else {
          if (gx) dxr[i] += gr[i] * ac;
          da += gr[i] * xr[i];
        }
      }
      if (ga) t.grad(alpha).at(c) += da;
    }
  });
}

int Tape::channel_norm(int x, int gamma, int beta, double eps) {
  const Tensor& X = val(x);
  const Tensor& G = val(gamma);
  const Tensor& B = val(beta);
  require(G.size() == X.d[0] && B.size() == X.d[0], "channel_norm: param length mismatch");
  const std::int64_t m = X.inner();
  Tensor out = X;
  Tensor stats = Tensor::zeros2(X.d[0], 2);  // per channel: mean, inv_std
  for (int c = 0; c < X.d[0]; ++c) {
    const double* row = X.data() + c * m;
    double mean = 0.0;
    for (std::int64_t i = 0; i < m; ++i) mean += row[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double dv = row[i] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(m);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    stats.at2(c, 0) = mean;
    stats.at2(c, 1) = inv_std;
    double* orow = out.data() + c * m;
    const double gc = G.at(c);
    const double bc = B.at(c);
    for (std::int64_t i = 0; i < m; ++i) orow[i] = gc * (row[i] - mean) * inv_std + bc;
  }
  std::array<int, 3> ps{x, gamma, beta};
  int id = push(std::move(out), any_rg(ps), [x, gamma, beta, m](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    const Tensor& X = t.val(x);
    const Tensor& st = TapeAccess::aux(t, id);
    const Tensor& G = t.val(gamma);
    const bool need_x = t.requires_grad(x);
    for (int c = 0; c < X.d[0]; ++c) {
      const double mean = st.at2(c, 0);
      const double inv_std = st.at2(c, 1);
      const double* xr = X.data() + c * m;
      const double* gr = g.data() + c * m;
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::int64_t i = 0; i < m; ++i) {
        const double xh = (xr[i] - mean) * inv_std;
        sum_g += gr[i];
        sum_gx += gr[i] * xh;
      }
      if (t.requires_grad(beta)) t.grad(beta).at(c) += sum_g;
      if (t.requires_grad(gamma)) t.grad(gamma).at(c) += sum_gx;
      if (need_x) {
        const double gc = G.at(c);
        const double inv_m = 1.0 / static_cast<double>(m);
        double* dxr = t.grad(x).data() + c * m;
        for (std::int64_t i = 0; i < m; ++i) {
          const double xh = (xr[i] - mean) * inv_std;
          dxr[i] += gc * inv_std * (gr[i] - inv_m * sum_g - xh * inv_m * sum_gx);
        }
      }
    }
  });
  aux(id) = std::move(stats);
  return id;
}

// ---------------------------------------------------------------------------
// convolution

void im2col(const Tensor& x, const ConvGeom& g, Tensor& col) {
  const int T = x.d[2];
  const int fo = g.f_out();
  const int to = g.t_out(T);
  col = Tensor::zeros2(g.patch(), fo * to);
  for (int c = 0; c < g.c_in; ++c) {
    for (int i = 0; i < g.kf; ++i) {
      for (int j = 0; j < g.kt; ++j) {
        const int row = (c * g.kf + i) * g.kt + j;
        double* crow = col.data() + static_cast<std::int64_t>(row) * fo * to;
        for (int f = 0; f < fo; ++f) {
          const int fs = f * g.sf + i - g.pad_f;
          if (fs < 0 || fs >= g.f_in) continue;
          const double* src = x.data() + (static_cast<std::int64_t>(c) * g.f_in + fs) * T;
          double* dst = crow + static_cast<std::int64_t>(f) * to;
          if (g.st == 1) {
            const int shift = j - g.pad_t;  // t = tq + shift
            const int q0 = std::max(0, -shift);
            const int q1 = std::min(to, T - shift);
            for (int q = q0; q < q1; ++q) dst[q] = src[q + shift];
          } else {
            for (int q = 0; q < to; ++q) {
              const int ts = q * g.st + j - g.pad_t;
              if (ts >= 0 && ts < T) dst[q] = src[ts];
            }
          }
        }
      }
    }
  }
}

void col2im(const Tensor& col, const ConvGeom& g, int t_in, Tensor& x) {
  const int T = t_in;
  const int fo = g.f_out();
  const int to = g.t_out(T);
  x = Tensor::zeros3(g.c_in, g.f_in, T);
  for (int c = 0; c < g.c_in; ++c) {
    for (int i = 0; i < g.kf; ++i) {
      for (int j = 0; j < g.kt; ++j) {
        const int row = (c * g.kf + i) * g.kt + j;
        const double* crow = col.data() + static_cast<std::int64_t>(row) * fo * to;
        for (int f = 0; f < fo; ++f) {
          const int fs = f * g.sf + i - g.pad_f;
          if (fs < 0 || fs >= g.f_in) continue;
          double* dst = x.data() + (static_cast<std::int64_t>(c) * g.f_in + fs) * T;
          const double* src = crow + static_cast<std::int64_t>(f) * to;
          if (g.st == 1) {
            const int shift = j - g.pad_t;
            const int q0 = std::max(0, -shift);
            const int q1 = std::min(to, T - shift);
            for (int q = q0; q < q1; ++q) dst[q + shift] += src[q];
          } else {
            for (int q = 0; q < to; ++q) {
              const int ts = q * g.st + j - g.pad_t;
              if (ts >= 0 && ts < T) dst[ts] += src[q];
            }
          }
        }
      }
    }
  }
}

int Tape::conv2d(int x, int w, const ConvGeom& g) {
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  require(X.rank == 3 && X.d[0] == g.c_in && X.d[1] == g.f_in, "conv2d: input shape mismatch");
  require(W.rank == 2 && W.d[1] == g.patch(), "conv2d: weight shape mismatch");
  const int T = X.d[2];
  const int c_out = W.d[0];
  Tensor col;
  im2col(X, g, col);
  Tensor out = Tensor::zeros3(c_out, g.f_out(), g.t_out(T));
  MatMap(out.data(), c_out, col.d[1]).noalias() =
      CMatMap(W.data(), W.d[0], W.d[1]) * CMatMap(col.data(), col.d[0], col.d[1]);
  std::array<int, 2> ps{x, w};
  int id = push(std::move(out), any_rg(ps), [x, w, g, T](Tape& t, int id) {
    const Tensor& G = t.grad(id);
    const Tensor& col = TapeAccess::aux(t, id);
    const Tensor& W = t.val(w);
    const int c_out = W.d[0];
    CMatMap gm(G.data(), c_out, col.d[1]);
    if (t.requires_grad(w)) {
      Tensor& dW = t.grad(w);
      MatMap(dW.data(), dW.d[0], dW.d[1]).noalias() +=
          gm * CMatMap(col.data(), col.d[0], col.d[1]).transpose();
    }
    if (t.requires_grad(x)) {
      Tensor dcol = Tensor::zeros2(col.d[0], col.d[1]);
      MatMap(dcol.data(), dcol.d[0], dcol.d[1]).noalias() =
          CMatMap(W.data(), W.d[0], W.d[1]).transpose() * gm;
      Tensor dx;
      col2im(dcol, g, T, dx);
      arr(t.grad(x)) += arr(dx);
    }
  });
  aux(id) = std::move(col);
  return id;
}

int Tape::conv2d_transpose(int y, int w, const ConvGeom& g) {
  const Tensor& Y = val(y);
  const Tensor& W = val(w);
  require(Y.rank == 3 && Y.d[1] == g.f_out(), "conv2d_transpose: input shape mismatch");
  require(W.rank == 2 && W.d[0] == Y.d[0] && W.d[1] == g.patch(),
          "conv2d_transpose: weight shape mismatch");
  const int t_in = g.t_in_for(Y.d[2]);
  Tensor col = Tensor::zeros2(g.patch(), Y.d[1] * Y.d[2]);
  MatMap(col.data(), col.d[0], col.d[1]).noalias() =
      CMatMap(W.data(), W.d[0], W.d[1]).transpose() *
      CMatMap(Y.data(), Y.d[0], static_cast<int>(Y.inner()));
  Tensor out;
  col2im(col, g, t_in, out);
  std::array<int, 2> ps{y, w};
  return push(std::move(out), any_rg(ps), [y, w, g, t_in](Tape& t, int id) {
    const Tensor& G = t.grad(id);
    Tensor dcol;
    im2col(G, g, dcol);
    const Tensor& Y = t.val(y);
    const Tensor& W = t.val(w);
    CMatMap dc(dcol.data(), dcol.d[0], dcol.d[1]);
    if (t.requires_grad(y)) {
      Tensor& dY = t.grad(y);
      MatMap(dY.data(), W.d[0], dcol.d[1]).noalias() +=
          CMatMap(W.data(), W.d[0], W.d[1]) * dc;
    }
    if (t.requires_grad(w)) {
      Tensor& dW = t.grad(w);
      MatMap(dW.data(), dW.d[0], dW.d[1]).noalias() +=
          CMatMap(Y.data(), Y.d[0], static_cast<int>(Y.inner())) * dc.transpose();
    }
  });
}

int Tape::custom(Tensor value, std::vector<int> parents,
                 std::function<void(Tape&, int)> back) {
  const bool rg = any_rg(parents);
  return push(std::move(value), rg, rg ? std::move(back) : nullptr);
}

}  // namespace nsvae
