#pragma once

// Differentiable operations over Tensor<S>. Each op validates shapes, runs a
// kernel, and (when a tape is active and an input requires grad) records a
// closure that accumulates into the inputs' grad buffers.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "ctsnet/kernels.hpp"
#include "ctsnet/tensor.hpp"

namespace ctsnet {

struct ConvSpec {
  int64_t stride_t = 1, stride_f = 1;
  int64_t dil_t = 1, dil_f = 1;
  int64_t pad_t_left = 0, pad_t_right = 0;
  int64_t pad_f_left = 0, pad_f_right = 0;
  int64_t groups = 1;

  // Left zero-pad of (Kt-1)*dt frames: output frame t sees inputs <= t.
  static ConvSpec causal(int64_t kt, int64_t dil_t = 1, int64_t stride_f = 1) {
    ConvSpec sp;
    sp.dil_t = dil_t;
    sp.stride_f = stride_f;
    sp.pad_t_left = (kt - 1) * dil_t;
    return sp;
  }

  // Symmetric time padding; not causal. Exists as a negative-control fixture
  // for the causality probe.
  static ConvSpec symmetric(int64_t kt, int64_t dil_t = 1) {
    ConvSpec sp;
    sp.dil_t = dil_t;
    sp.pad_t_left = (kt - 1) * dil_t / 2;
    sp.pad_t_right = (kt - 1) * dil_t - sp.pad_t_left;
    return sp;
  }
};

namespace detail {

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride,
                               int64_t dil, int64_t pl, int64_t pr) {
  return (in + pl + pr - dil * (k - 1) - 1) / stride + 1;
}

inline int64_t convt_out_extent(int64_t in, int64_t k, int64_t stride,
                                int64_t dil, int64_t pl, int64_t pr) {
  return (in - 1) * stride + dil * (k - 1) + 1 - pl - pr;
}

template <typename S>
void ensure_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
}

// Elementwise map driver; parallel only when the array is big enough to pay
// for the fork.
template <typename Body>
inline void ew_index(int64_t n, const Body& body) {
#ifdef _OPENMP
  if (kernels::backend() == kernels::Backend::openmp && n >= (1 << 15)) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) body(i);
}

template <typename S>
kernels::ConvGeom make_geom(const Tensor<S>& x, const Tensor<S>& w,
                            const ConvSpec& sp, bool transposed) {
  kernels::ConvGeom g;
  g.B = x.dim(0);
  g.Kt = w.dim(2);
  g.Kf = w.dim(3);
  g.st = sp.stride_t;
  g.sf = sp.stride_f;
  g.dt = sp.dil_t;
  g.df = sp.dil_f;
  g.pad_t = sp.pad_t_left;
  g.pad_f = sp.pad_f_left;
  g.groups = sp.groups;
  if (!transposed) {
    g.Cin = x.dim(1);
    g.Cout = w.dim(0);
    g.T = x.dim(2);
    g.F = x.dim(3);
    g.To = conv_out_extent(g.T, g.Kt, g.st, g.dt, sp.pad_t_left, sp.pad_t_right);
    g.Fo = conv_out_extent(g.F, g.Kf, g.sf, g.df, sp.pad_f_left, sp.pad_f_right);
  } else {
    g.Cin = x.dim(1);
    g.Cout = w.dim(1);
    g.To = x.dim(2);
    g.Fo = x.dim(3);
    g.T = convt_out_extent(g.To, g.Kt, g.st, g.dt, sp.pad_t_left, sp.pad_t_right);
    g.F = convt_out_extent(g.Fo, g.Kf, g.sf, g.df, sp.pad_f_left, sp.pad_f_right);
  }
  return g;
}

}  // namespace detail

// x: [B, Cin, T, F], w: [Cout, Cin/groups, Kt, Kf] -> [B, Cout, T', F'].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const ConvSpec& sp) {
  require(x.ndim() == 4 && w.ndim() == 4,
          "conv2d expects 4-D input and kernel, got " + shape_str(x.shape()) +
              " and " + shape_str(w.shape()));
  require(sp.dil_t >= 1 && sp.dil_f >= 1, "conv2d dilation must be >= 1");
  require(sp.groups >= 1 && x.dim(1) % sp.groups == 0 &&
              w.dim(0) % sp.groups == 0 && w.dim(1) == x.dim(1) / sp.groups,
          "conv2d channel/group mismatch: input " + shape_str(x.shape()) +
              " kernel " + shape_str(w.shape()));
  auto g = detail::make_geom(x, w, sp, false);
  require(g.To >= 1 && g.Fo >= 1,
          "conv2d kernel exceeds padded input: input " + shape_str(x.shape()) +
              " kernel " + shape_str(w.shape()));

  Tensor<S> y({g.B, g.Cout, g.To, g.Fo});
  kernels::conv2d_forward(x.data(), w.data(), y.data(), g);
  detail::ensure_finite(y, "conv2d");

  if (grad_wanted(x, w)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, w, y, g]() {
      if (!y.has_grad()) return;
      if (x.requires_grad()) {
        if (g.groups == 1) {
          kernels::ConvGeom gt = g;
          std::swap(gt.Cin, gt.Cout);
          kernels::conv2d_transposed_forward(y.grad(), w.data(), x.grad(), gt,
                                             /*add=*/true);
        } else {
          kernels::conv2d_grad_input_grouped(y.grad(), w.data(), x.grad(), g);
        }
      }
      if (w.requires_grad())
        kernels::conv2d_grad_kernel(x.data(), y.grad(), w.grad(), g);
    });
  }
  return y;
}

// x: [B, Cin, T, F], w: [Cin, Cout, Kt, Kf] -> [B, Cout, T', F'].
// Adjoint of conv2d at the same spec: <conv2d(a), b> == <a, conv2d_transposed(b)>.
template <typename S>
Tensor<S> conv2d_transposed(const Tensor<S>& x, const Tensor<S>& w,
                            const ConvSpec& sp) {
  require(x.ndim() == 4 && w.ndim() == 4,
          "conv2d_transposed expects 4-D input and kernel, got " +
              shape_str(x.shape()) + " and " + shape_str(w.shape()));
  require(sp.groups == 1, "conv2d_transposed supports groups == 1 only");
  require(w.dim(0) == x.dim(1),
          "conv2d_transposed channel mismatch: input " + shape_str(x.shape()) +
              " kernel " + shape_str(w.shape()));
  auto g = detail::make_geom(x, w, sp, true);
  require(g.T >= 1 && g.F >= 1,
          "conv2d_transposed output would be empty: input " +
              shape_str(x.shape()) + " kernel " + shape_str(w.shape()));

  Tensor<S> y({g.B, g.Cout, g.T, g.F});
  kernels::conv2d_transposed_forward(x.data(), w.data(), y.data(), g);
  detail::ensure_finite(y, "conv2d_transposed");

  if (grad_wanted(x, w)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, w, y, g]() {
      if (!y.has_grad()) return;
      if (x.requires_grad()) {
        kernels::ConvGeom gc = g;
        std::swap(gc.Cin, gc.Cout);
        std::swap(gc.T, gc.To);
        std::swap(gc.F, gc.Fo);
        kernels::conv2d_forward(y.grad(), w.data(), x.grad(), gc, /*add=*/true);
      }
      if (w.requires_grad())
        kernels::conv2d_transposed_grad_kernel(x.data(), y.grad(), w.grad(), g);
    });
  }
  return y;
}

// Causal per-channel temporal smoothing with a single kernel of odd length
// shared across all channels. x: [B, C, T, 1], k: [L].
template <typename S>
Tensor<S> shared_smooth(const Tensor<S>& x, const Tensor<S>& k) {
  require(x.ndim() == 4 && x.dim(3) == 1,
          "shared_smooth expects [B,C,T,1], got " + shape_str(x.shape()));
  require(k.ndim() == 1, "shared_smooth kernel must be 1-D");
  const int64_t rows = x.dim(0) * x.dim(1);
  const int64_t T = x.dim(2);
  const int64_t L = k.dim(0);

  Tensor<S> y(x.shape());
  kernels::shared_smooth_forward(x.data(), k.data(), y.data(), rows, T, L);
  detail::ensure_finite(y, "shared_smooth");

  if (grad_wanted(x, k)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, k, y, rows, T, L]() {
      if (!y.has_grad()) return;
      if (x.requires_grad())
        kernels::shared_smooth_grad_input(y.grad(), k.data(), x.grad(), rows, T, L);
      if (k.requires_grad())
        kernels::shared_smooth_grad_kernel(x.data(), y.grad(), k.grad(), rows, T, L);
    });
  }
  return y;
}

// Per-output-channel bias: x [B,C,T,F] + b [C].
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
  require(x.ndim() == 4 && b.ndim() == 1 && b.dim(0) == x.dim(1),
          "bias shape " + shape_str(b.shape()) + " does not match input " +
              shape_str(x.shape()));
  const int64_t C = x.dim(1), TF = x.dim(2) * x.dim(3), B = x.dim(0);
  Tensor<S> y(x.shape());
  detail::ew_index(x.numel(), [&](int64_t i) {
    y.data()[i] = x.data()[i] + b.data()[(i / TF) % C];
  });
  if (grad_wanted(x, b)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, b, y, B, C, TF]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      if (x.requires_grad()) {
        S* gx = x.grad();
        detail::ew_index(x.numel(), [&](int64_t i) { gx[i] += gy[i]; });
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (int64_t c = 0; c < C; ++c) {
          S acc = S(0);
          for (int64_t bi = 0; bi < B; ++bi) {
            const S* row = gy + (bi * C + c) * TF;
            for (int64_t i = 0; i < TF; ++i) acc += row[i];
          }
          gb[c] += acc;
        }
      }
    });
  }
  return y;
}

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_ew(const Tensor<S>& x, Fwd fwd, Bwd bwd) {
  Tensor<S> y(x.shape());
  const S* xd = x.data();
  S* yd = y.data();
  ew_index(x.numel(), [&](int64_t i) { yd[i] = fwd(xd[i]); });
  if (grad_wanted(x)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, y, bwd]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      const S* xd2 = x.data();
      const S* yd2 = y.data();
      S* gx = x.grad();
      ew_index(x.numel(),
               [&](int64_t i) { gx[i] += gy[i] * bwd(xd2[i], yd2[i]); });
    });
  }
  return y;
}

}  // namespace detail

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_ew(
      x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return detail::unary_ew(
      x,
      [](S v) {
        return v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      },
      [](S v, S) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      });
}

// sqrt(x + shift); shift keeps the derivative finite at x == 0.
template <typename S>
Tensor<S> sqrt_shift(const Tensor<S>& x, S shift) {
  return detail::unary_ew(
      x, [shift](S v) { return std::sqrt(v + shift); },
      [](S, S y) { return S(0.5) / y; });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::unary_ew(x, [c](S v) { return c * v; },
                          [c](S, S) { return c; });
}

namespace detail {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + " shape mismatch: " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<S> y(a.shape());
  const S* ad = a.data();
  const S* bd = b.data();
  S* yd = y.data();
  detail::ew_index(y.numel(), [&](int64_t i) { yd[i] = ad[i] + bd[i]; });
  if (grad_wanted(a, b)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([a, b, y]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      if (a.requires_grad()) {
        S* ga = a.grad();
        detail::ew_index(y.numel(), [&](int64_t i) { ga[i] += gy[i]; });
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        detail::ew_index(y.numel(), [&](int64_t i) { gb[i] += gy[i]; });
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<S> y(a.shape());
  const S* ad = a.data();
  const S* bd = b.data();
  S* yd = y.data();
  detail::ew_index(y.numel(), [&](int64_t i) { yd[i] = ad[i] - bd[i]; });
  if (grad_wanted(a, b)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([a, b, y]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      if (a.requires_grad()) {
        S* ga = a.grad();
        detail::ew_index(y.numel(), [&](int64_t i) { ga[i] += gy[i]; });
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        detail::ew_index(y.numel(), [&](int64_t i) { gb[i] -= gy[i]; });
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<S> y(a.shape());
  const S* ad = a.data();
  const S* bd = b.data();
  S* yd = y.data();
  detail::ew_index(y.numel(), [&](int64_t i) { yd[i] = ad[i] * bd[i]; });
  if (grad_wanted(a, b)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([a, b, y]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      if (a.requires_grad()) {
        S* ga = a.grad();
        const S* bd2 = b.data();
        detail::ew_index(y.numel(), [&](int64_t i) { ga[i] += gy[i] * bd2[i]; });
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        const S* ad2 = a.data();
        detail::ew_index(y.numel(), [&](int64_t i) { gb[i] += gy[i] * ad2[i]; });
      }
    });
  }
  return y;
}

// PReLU with one learnable slope per channel. alpha: [C].
template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& alpha) {
  require(x.ndim() == 4 && alpha.ndim() == 1 && alpha.dim(0) == x.dim(1),
          "prelu slope shape " + shape_str(alpha.shape()) +
              " does not match input " + shape_str(x.shape()));
  const int64_t C = x.dim(1), TF = x.dim(2) * x.dim(3), B = x.dim(0);
  Tensor<S> y(x.shape());
  const S* xd = x.data();
  const S* al = alpha.data();
  S* yd = y.data();
  detail::ew_index(x.numel(), [&](int64_t i) {
    const S v = xd[i];
    yd[i] = v >= S(0) ? v : al[(i / TF) % C] * v;
  });
  if (grad_wanted(x, alpha)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, alpha, y, B, C, TF]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      const S* xd2 = x.data();
      const S* al2 = alpha.data();
      if (x.requires_grad()) {
        S* gx = x.grad();
        detail::ew_index(x.numel(), [&](int64_t i) {
          gx[i] += gy[i] * (xd2[i] >= S(0) ? S(1) : al2[(i / TF) % C]);
        });
      }
      if (alpha.requires_grad()) {
        S* ga = alpha.grad();
        for (int64_t c = 0; c < C; ++c) {
          S acc = S(0);
          for (int64_t bi = 0; bi < B; ++bi) {
            const int64_t base = (bi * C + c) * TF;
            for (int64_t i = 0; i < TF; ++i) {
              const S v = xd2[base + i];
              if (v < S(0)) acc += gy[base + i] * v;
            }
          }
          ga[c] += acc;
        }
      }
    });
  }
  return y;
}

// Sum of all elements -> scalar. Blocked accumulation with a fixed block
// size so the result does not depend on the backend or thread count.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  constexpr int64_t kBlock = 4096;
  const int64_t n = x.numel();
  const int64_t nblk = (n + kBlock - 1) / kBlock;
  std::vector<S> partial(size_t(nblk), S(0));
  const S* xd = x.data();
  detail::ew_index(nblk, [&](int64_t blk) {
    S acc = S(0);
    const int64_t hi = std::min(n, (blk + 1) * kBlock);
    for (int64_t i = blk * kBlock; i < hi; ++i) acc += xd[i];
    partial[size_t(blk)] = acc;
  });
  S total = S(0);
  for (S v : partial) total += v;
  Tensor<S> y = Tensor<S>::scalar(total);
  if (grad_wanted(x)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, y]() {
      if (!y.has_grad()) return;
      const S g = y.grad()[0];
      S* gx = x.grad();
      detail::ew_index(x.numel(), [&](int64_t i) { gx[i] += g; });
    });
  }
  return y;
}

// Concatenate along the channel axis.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) &&
              a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels extents mismatch: " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
  const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const int64_t TF = a.dim(2) * a.dim(3);
  Tensor<S> y({B, Ca + Cb, a.dim(2), a.dim(3)});
  S* yd = y.data();
  detail::ew_index(B, [&](int64_t bi) {
    std::memcpy(yd + (bi * (Ca + Cb)) * TF, a.data() + bi * Ca * TF,
                size_t(Ca * TF) * sizeof(S));
    std::memcpy(yd + (bi * (Ca + Cb) + Ca) * TF, b.data() + bi * Cb * TF,
                size_t(Cb * TF) * sizeof(S));
  });
  if (grad_wanted(a, b)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([a, b, y, B, Ca, Cb, TF]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (int64_t bi = 0; bi < B; ++bi)
          for (int64_t i = 0; i < Ca * TF; ++i)
            ga[bi * Ca * TF + i] += gy[(bi * (Ca + Cb)) * TF + i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (int64_t bi = 0; bi < B; ++bi)
          for (int64_t i = 0; i < Cb * TF; ++i)
            gb[bi * Cb * TF + i] += gy[(bi * (Ca + Cb) + Ca) * TF + i];
      }
    });
  }
  return y;
}

// (B, C, T, F) -> (B, C*F, T, 1): feeds the encoder bottleneck into the TCM
// stack. Channel index of the result is c*F + f.
template <typename S>
Tensor<S> fold_freq_into_channels(const Tensor<S>& x) {
  require(x.ndim() == 4, "fold expects a 4-D tensor");
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), F = x.dim(3);
  Tensor<S> y({B, C * F, T, 1});
  const S* xd = x.data();
  S* yd = y.data();
  detail::ew_index(x.numel(), [&](int64_t i) {
    const int64_t f = i % F, t = (i / F) % T, c = (i / (F * T)) % C,
                  b = i / (F * T * C);
    yd[((b * C + c) * F + f) * T + t] = xd[i];
  });
  if (grad_wanted(x)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, y, B, C, T, F]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      S* gx = x.grad();
      detail::ew_index(x.numel(), [&](int64_t i) {
        const int64_t f = i % F, t = (i / F) % T, c = (i / (F * T)) % C,
                      b = i / (F * T * C);
        gx[i] += gy[((b * C + c) * F + f) * T + t];
      });
    });
  }
  return y;
}

// (B, C*F, T, 1) -> (B, C, T, F): inverse of fold_freq_into_channels.
template <typename S>
Tensor<S> unfold_channels_into_freq(const Tensor<S>& x, int64_t F) {
  require(x.ndim() == 4 && x.dim(3) == 1 && x.dim(1) % F == 0,
          "unfold expects [B,C*F,T,1] with channels divisible by " +
              std::to_string(F) + ", got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1) / F, T = x.dim(2);
  Tensor<S> y({B, C, T, F});
  const S* xd = x.data();
  S* yd = y.data();
  detail::ew_index(y.numel(), [&](int64_t i) {
    const int64_t f = i % F, t = (i / F) % T, c = (i / (F * T)) % C,
                  b = i / (F * T * C);
    yd[i] = xd[((b * C + c) * F + f) * T + t];
  });
  if (grad_wanted(x)) {
    y.set_requires_grad(true);
    Tape<S>::current()->record([x, y, B, C, T, F]() {
      if (!y.has_grad()) return;
      const S* gy = y.grad();
      S* gx = x.grad();
      detail::ew_index(y.numel(), [&](int64_t i) {
        const int64_t f = i % F, t = (i / F) % T, c = (i / (F * T)) % C,
                      b = i / (F * T * C);
        gx[((b * C + c) * F + f) * T + t] += gy[i];
      });
    });
  }
  return y;
}

}  // namespace ctsnet
