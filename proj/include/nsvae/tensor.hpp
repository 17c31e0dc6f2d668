// SPDX-License-Identifier: Apache-2.0
#ifndef NSVAE_TENSOR_HPP
#define NSVAE_TENSOR_HPP

#include <array>
#include <cassert>
#include <cstdint>
#include <vector>

namespace nsvae {

// Dense row-major double tensor, rank 1..3. Rank-3 tensors are feature maps
// (channels, freq, time) with time innermost; rank-2 are matrices (rows, cols).
struct Tensor {
  std::array<int, 3> d{0, 1, 1};
  int rank = 0;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros1(int n) { return make({n, 1, 1}, 1); }
  static Tensor zeros2(int r, int c) { return make({r, c, 1}, 2); }
  static Tensor zeros3(int a, int b, int c) { return make({a, b, c}, 3); }

  static Tensor scalar(double x) {
    Tensor t = zeros1(1);
    t.v[0] = x;
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  int rows() const { return d[0]; }
  int cols() const { return rank >= 2 ? d[1] : 1; }

  // Trailing extent per dim-0 slice (e.g. F*T for a feature map).
  std::int64_t inner() const {
    return d[0] == 0 ? 0 : size() / d[0];
  }

  double& at(int i) { return v[static_cast<std::size_t>(i)]; }
  double at(int i) const { return v[static_cast<std::size_t>(i)]; }
  double& at2(int r, int c) { return v[static_cast<std::size_t>(r) * d[1] + c]; }
  double at2(int r, int c) const { return v[static_cast<std::size_t>(r) * d[1] + c]; }
  double& at3(int a, int b, int c) {
    return v[(static_cast<std::size_t>(a) * d[1] + b) * d[2] + c];
  }
  double at3(int a, int b, int c) const {
    return v[(static_cast<std::size_t>(a) * d[1] + b) * d[2] + c];
  }

  bool same_shape(const Tensor& o) const {
    return rank == o.rank && d == o.d;
  }

  bool all_finite() const;

 private:
  static Tensor make(std::array<int, 3> dims, int rank) {
    Tensor t;
    t.d = dims;
    t.rank = rank;
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(dims[i]);
    t.v.assign(n, 0.0);
    return t;
  }
};

}  // namespace nsvae

#endif
