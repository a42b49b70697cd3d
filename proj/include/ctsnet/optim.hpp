#pragma once

// Adam with per-group learning rates (stage-1 fine-tune vs stage-2) and a
// global-norm gradient clip. Updates walk the registry in registration
// order; given identical gradients the trajectory is bit-reproducible.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ctsnet/params.hpp"

namespace ctsnet {

inline constexpr double kAdamEps = 1e-8;

template <typename S>
class Adam {
 public:
  struct Slot {
    std::string name;
    Tensor<S> param;
    S lr;
    std::vector<S> m, v;
  };

  Adam(const ParamRegistry<S>& reg,
       const std::function<double(const std::string&)>& lr_for,
       double beta1 = 0.9, double beta2 = 0.999)
      : beta1_(S(beta1)), beta2_(S(beta2)) {
    for (const auto& e : reg.entries()) {
      Slot s;
      s.name = e.name;
      s.param = e.tensor;
      s.lr = S(lr_for(e.name));
      require(s.lr >= S(0), "negative learning rate for " + e.name);
      s.m.assign(size_t(e.tensor.numel()), S(0));
      s.v.assign(size_t(e.tensor.numel()), S(0));
      slots_.push_back(std::move(s));
    }
  }

  // Bias-corrected update from the gradients currently held by the params.
  void step() {
    ++t_;
    const S bc1 = S(1) - S(std::pow(double(beta1_), double(t_)));
    const S bc2 = S(1) - S(std::pow(double(beta2_), double(t_)));
    for (auto& s : slots_) {
      const S* g = s.param.grad();
      S* p = s.param.data();
      for (int64_t i = 0; i < s.param.numel(); ++i) {
        if (!std::isfinite(double(g[i])))
          throw NumericError("non-finite gradient in parameter " + s.name +
                             " at element " + std::to_string(i) +
                             " on step " + std::to_string(t_));
        s.m[size_t(i)] = beta1_ * s.m[size_t(i)] + (S(1) - beta1_) * g[i];
        s.v[size_t(i)] = beta2_ * s.v[size_t(i)] + (S(1) - beta2_) * g[i] * g[i];
        const S mh = s.m[size_t(i)] / bc1;
        const S vh = s.v[size_t(i)] / bc2;
        p[i] -= s.lr * mh / (std::sqrt(vh) + S(kAdamEps));
      }
    }
  }

  void zero_grad() const {
    for (const auto& s : slots_) s.param.zero_grad();
  }

  int64_t step_count() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  std::vector<Slot> slots_;
  S beta1_, beta2_;
  int64_t t_ = 0;
};

// Rescales all gradients so their global 2-norm is at most max_norm.
// Returns the pre-clip norm.
template <typename S>
double clip_grad_norm(const ParamRegistry<S>& reg, double max_norm) {
  double sq = 0.0;
  for (const auto& e : reg.entries()) {
    const S* g = e.tensor.grad();
    for (int64_t i = 0; i < e.tensor.numel(); ++i)
      sq += double(g[i]) * double(g[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const S scale = S(max_norm / norm);
    for (const auto& e : reg.entries()) {
      S* g = e.tensor.grad();
      for (int64_t i = 0; i < e.tensor.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

}  // namespace ctsnet
