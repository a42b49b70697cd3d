#pragma once

// Instance normalization in two flavours. The classic form normalizes each
// (batch, channel) slice by statistics of the whole time-frequency plane.
// The cumulative form normalizes frame t by statistics of frames 0..t only,
// which keeps a stack of normalized causal convolutions causal end to end;
// all network blocks use it.

#include <cmath>
#include <vector>

#include "ctsnet/ops.hpp"
#include "ctsnet/tensor.hpp"

namespace ctsnet {

inline constexpr double kNormEps = 1e-5;

// x: [B, C, T, F], gain/bias: [C]. Full-slice statistics.
template <typename S>
Tensor<S> instance_norm(const Tensor<S>& x, const Tensor<S>& gain,
                        const Tensor<S>& bias, S eps = S(kNormEps)) {
  require(x.ndim() == 4 && gain.ndim() == 1 && bias.ndim() == 1 &&
              gain.dim(0) == x.dim(1) && bias.dim(0) == x.dim(1),
          "instance_norm affine shape mismatch for input " +
              shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  require(N > 1, "instance_norm needs more than one element per slice");
  Tensor<S> y(x.shape());

  detail::ew_index(B * C, [&](int64_t bc) {
    const S* xs = x.data() + bc * N;
    S* ys = y.data() + bc * N;
    const S g = gain.data()[bc % C], be = bias.data()[bc % C];
    S mu = S(0);
    for (int64_t i = 0; i < N; ++i) mu += xs[i];
    mu /= S(N);
    S var = S(0);
    for (int64_t i = 0; i < N; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= S(N);
    const S d = S(1) / std::sqrt(var + eps);
    for (int64_t i = 0; i < N; ++i) ys[i] = g * (xs[i] - mu) * d + be;
  });

  if (grad_wanted(x, gain) || grad_wanted(x, bias)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, gain, bias, y, B, C, N, eps]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      detail::ew_index(B * C, [&](int64_t bc) {
        const S* xs = x.data() + bc * N;
        const S* gys = gy + bc * N;
        const S g = gain.data()[bc % C];
        S mu = S(0);
        for (int64_t i = 0; i < N; ++i) mu += xs[i];
        mu /= S(N);
        S var = S(0);
        for (int64_t i = 0; i < N; ++i) var += (xs[i] - mu) * (xs[i] - mu);
        var /= S(N);
        const S d = S(1) / std::sqrt(var + eps);
        S sum_gy = S(0), sum_gyxh = S(0);
        for (int64_t i = 0; i < N; ++i) {
          sum_gy += gys[i];
          sum_gyxh += gys[i] * (xs[i] - mu) * d;
        }
        if (x.requires_grad()) {
          S* gxs = x.grad() + bc * N;
          for (int64_t i = 0; i < N; ++i) {
            const S xh = (xs[i] - mu) * d;
            gxs[i] += g * d * (gys[i] - sum_gy / S(N) - xh * sum_gyxh / S(N));
          }
        }
        // Affine grads are per channel: accumulate serially afterwards to
        // keep thread independence; store partials via atomic-free pass.
      });
      if (gain.requires_grad() || bias.requires_grad()) {
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const S* xs = x.data() + bc * N;
          const S* gys = gy + bc * N;
          S mu = S(0);
          for (int64_t i = 0; i < N; ++i) mu += xs[i];
          mu /= S(N);
          S var = S(0);
          for (int64_t i = 0; i < N; ++i) var += (xs[i] - mu) * (xs[i] - mu);
          var /= S(N);
          const S d = S(1) / std::sqrt(var + eps);
          S sum_gy = S(0), sum_gyxh = S(0);
          for (int64_t i = 0; i < N; ++i) {
            sum_gy += gys[i];
            sum_gyxh += gys[i] * (xs[i] - mu) * d;
          }
          if (gain.requires_grad()) gain.grad()[bc % C] += sum_gyxh;
          if (bias.requires_grad()) bias.grad()[bc % C] += sum_gy;
        }
      }
    });
  }
  return y;
}

// Causal variant: frame t is normalized by the mean/variance of frames 0..t
// (all F bins included). x: [B, C, T, F], gain/bias: [C].
template <typename S>
Tensor<S> cumulative_norm(const Tensor<S>& x, const Tensor<S>& gain,
                          const Tensor<S>& bias, S eps = S(kNormEps)) {
  require(x.ndim() == 4 && gain.ndim() == 1 && bias.ndim() == 1 &&
              gain.dim(0) == x.dim(1) && bias.dim(0) == x.dim(1),
          "cumulative_norm affine shape mismatch for input " +
              shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  Tensor<S> y(x.shape());

  detail::ew_index(B * C, [&](int64_t bc) {
    const S* xs = x.data() + bc * T * F;
    S* ys = y.data() + bc * T * F;
    const S g = gain.data()[bc % C], be = bias.data()[bc % C];
    S s1 = S(0), s2 = S(0);
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t f = 0; f < F; ++f) {
        s1 += xs[t * F + f];
        s2 += xs[t * F + f] * xs[t * F + f];
      }
      const S n = S((t + 1) * F);
      const S mu = s1 / n;
      S var = s2 / n - mu * mu;
      if (var < S(0)) var = S(0);
      const S d = S(1) / std::sqrt(var + eps);
      for (int64_t f = 0; f < F; ++f)
        ys[t * F + f] = g * (xs[t * F + f] - mu) * d + be;
    }
  });

  if (grad_wanted(x, gain) || grad_wanted(x, bias)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, gain, bias, y, B, C, T, F, eps]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      // dx[tau] = g*(gy[tau]*d_tau - P_tau - x[tau]*Q_tau + R_tau) with
      //   P_tau = sum_{t>=tau} d_t A_t / N_t        A_t = sum_f gy[t,f]
      //   Q_tau = sum_{t>=tau} d_t^3 B_t / N_t      B_t = sum_f gy*(x-mu_t)
      //   R_tau = sum_{t>=tau} d_t^3 mu_t B_t / N_t
      detail::ew_index(B * C, [&](int64_t bc) {
        const S* xs = x.data() + bc * T * F;
        const S* gys = gy + bc * T * F;
        const S g = gain.data()[bc % C];
        std::vector<S> mu(size_t(T)), dinv(size_t(T));
        S s1 = S(0), s2 = S(0);
        for (int64_t t = 0; t < T; ++t) {
          for (int64_t f = 0; f < F; ++f) {
            s1 += xs[t * F + f];
            s2 += xs[t * F + f] * xs[t * F + f];
          }
          const S n = S((t + 1) * F);
          mu[size_t(t)] = s1 / n;
          S var = s2 / n - mu[size_t(t)] * mu[size_t(t)];
          if (var < S(0)) var = S(0);
          dinv[size_t(t)] = S(1) / std::sqrt(var + eps);
        }
        if (x.requires_grad()) {
          S* gxs = x.grad() + bc * T * F;
          S P = S(0), Q = S(0), R = S(0);
          for (int64_t t = T - 1; t >= 0; --t) {
            const S n = S((t + 1) * F);
            const S d = dinv[size_t(t)];
            S A = S(0), Bsum = S(0);
            for (int64_t f = 0; f < F; ++f) {
              A += gys[t * F + f];
              Bsum += gys[t * F + f] * (xs[t * F + f] - mu[size_t(t)]);
            }
            P += d * A / n;
            Q += d * d * d * Bsum / n;
            R += d * d * d * mu[size_t(t)] * Bsum / n;
            for (int64_t f = 0; f < F; ++f)
              gxs[t * F + f] +=
                  g * (gys[t * F + f] * d - P - xs[t * F + f] * Q + R);
          }
        }
      });
      if (gain.requires_grad() || bias.requires_grad()) {
        for (int64_t bc = 0; bc < B * C; ++bc) {
          const S* xs = x.data() + bc * T * F;
          const S* gys = gy + bc * T * F;
          S s1 = S(0), s2 = S(0), dg = S(0), db = S(0);
          for (int64_t t = 0; t < T; ++t) {
            for (int64_t f = 0; f < F; ++f) {
              s1 += xs[t * F + f];
              s2 += xs[t * F + f] * xs[t * F + f];
            }
            const S n = S((t + 1) * F);
            const S mu = s1 / n;
            S var = s2 / n - mu * mu;
            if (var < S(0)) var = S(0);
            const S d = S(1) / std::sqrt(var + eps);
            for (int64_t f = 0; f < F; ++f) {
              dg += gys[t * F + f] * (xs[t * F + f] - mu) * d;
              db += gys[t * F + f];
            }
          }
          if (gain.requires_grad()) gain.grad()[bc % C] += dg;
          if (bias.requires_grad()) bias.grad()[bc % C] += db;
        }
      }
    });
  }
  return y;
}

}  // namespace ctsnet
