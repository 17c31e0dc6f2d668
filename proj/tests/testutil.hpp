// SPDX-License-Identifier: Apache-2.0
#ifndef NSVAE_TESTS_TESTUTIL_HPP
#define NSVAE_TESTS_TESTUTIL_HPP

#include <cmath>
#include <vector>

#include "doctest.h"
#include "nsvae/autodiff.hpp"
#include "nsvae/rng.hpp"
#include "nsvae/tensor.hpp"

namespace nsvae::testutil {

inline Tensor random_tensor(Rng& rng, std::array<int, 3> d, int rank, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t;
  switch (rank) {
    case 1: t = Tensor::zeros1(d[0]); break;
    case 2: t = Tensor::zeros2(d[0], d[1]); break;
    default: t = Tensor::zeros3(d[0], d[1], d[2]); break;
  }
  for (double& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

// Compares the tape's analytic gradient of a scalar-valued builder against
// central finite differences, element by element, over every input tensor.
template <typename Build>
void fd_check(const std::vector<Tensor>& inputs, Build build, double step = 1e-5,
              double tol = 1e-5) {
  Tape tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(tape.leaf(t, true));
  const int loss = build(tape, ids);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(inputs.size());
  for (int id : ids) grads.push_back(tape.grad(id));

  auto eval = [&](const std::vector<Tensor>& pt) {
    Tape t2;
    std::vector<int> ids2;
    ids2.reserve(pt.size());
    for (const Tensor& t : pt) ids2.push_back(t2.leaf(t, false));
    return t2.scalar(build(t2, ids2));
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].v.size(); ++j) {
      std::vector<Tensor> pt = inputs;
      pt[i].v[j] += step;
      const double fp = eval(pt);
      pt[i].v[j] -= 2.0 * step;
      const double fm = eval(pt);
      const double num = (fp - fm) / (2.0 * step);
      const double ana = grads[i].v[j];
      const double scale = std::max({1.0, std::fabs(num), std::fabs(ana)});
      INFO("input ", i, " elem ", j, " numeric ", num, " analytic ", ana);
      CHECK(std::fabs(num - ana) <= tol * scale);
    }
  }
}

}  // namespace nsvae::testutil

#endif
