#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ctsnet/ops.hpp"
#include "ctsnet/rng.hpp"
#include "ctsnet/tensor.hpp"

namespace testutil {

using ctsnet::Rng;
using ctsnet::Shape;
using ctsnet::Tensor;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  return Tensor<double>::uniform(std::move(shape), rng, lo, hi);
}

// Central finite-difference check of d(loss)/d(input) for every element of
// every listed input. make_loss must re-read the inputs' current values.
// Returns the worst relative error.
inline double max_rel_grad_error(
    const std::function<Tensor<double>()>& make_loss,
    const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  for (const auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    ctsnet::Tape<double> tape;
    Tensor<double> loss = make_loss();
    tape.backward(loss);
  }
  for (const auto& in : inputs) analytic.push_back(in.grad_values());

  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& in = inputs[k];
    for (int64_t i = 0; i < in.numel(); ++i) {
      const double saved = in.data()[i];
      in.data()[i] = saved + h;
      const double fp = make_loss().item();
      in.data()[i] = saved - h;
      const double fm = make_loss().item();
      in.data()[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[k][size_t(i)];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-2});
      worst = std::max(worst, std::fabs(a - fd) / denom);
    }
  }
  return worst;
}

inline bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace testutil
