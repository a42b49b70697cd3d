#pragma once

// Dense convolution kernels behind the autograd ops. Every kernel exists in a
// serial reference form and an OpenMP form. Parallelism is always across
// independent output elements and the per-element accumulation loop is the
// same function in both drivers, so the two backends agree bit for bit and
// results do not depend on the thread count.

#include <cstdint>

#include "ctsnet/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ctsnet::kernels {

enum class Backend { serial, openmp };

inline Backend& backend_ref() {
#ifdef _OPENMP
  static Backend b = Backend::openmp;
#else
  static Backend b = Backend::serial;
#endif
  return b;
}

inline Backend backend() { return backend_ref(); }
inline void set_backend(Backend b) { backend_ref() = b; }

// Geometry shared by conv2d and its adjoint. Kernel layout is
// [Cout, Cin/groups, Kt, Kf] for conv and [Cin, Cout, Kt, Kf] for the
// transposed direction. Data layout is (batch, channel, time, frequency).
struct ConvGeom {
  int64_t B = 1;
  int64_t Cin = 1, Cout = 1;
  int64_t T = 1, F = 1;    // input extents (conv) / output extents (adjoint)
  int64_t To = 1, Fo = 1;  // output extents (conv) / input extents (adjoint)
  int64_t Kt = 1, Kf = 1;
  int64_t st = 1, sf = 1;
  int64_t dt = 1, df = 1;
  int64_t pad_t = 0, pad_f = 0;  // leading-edge pad (conv input side)
  int64_t groups = 1;
};

namespace detail {

// One output element of the forward convolution.
template <typename S>
inline S conv_out_elem(const S* x, const S* w, const ConvGeom& g, int64_t b,
                       int64_t co, int64_t to, int64_t fo) {
  const int64_t cpg_out = g.Cout / g.groups;
  const int64_t cpg_in = g.Cin / g.groups;
  const int64_t grp = co / cpg_out;
  const int64_t t0 = to * g.st - g.pad_t;
  const int64_t f0 = fo * g.sf - g.pad_f;
  S acc = S(0);
  for (int64_t ci = 0; ci < cpg_in; ++ci) {
    const S* xc = x + ((b * g.Cin + grp * cpg_in + ci) * g.T) * g.F;
    const S* wc = w + ((co * cpg_in + ci) * g.Kt) * g.Kf;
    for (int64_t kt = 0; kt < g.Kt; ++kt) {
      const int64_t t = t0 + kt * g.dt;
      if (t < 0 || t >= g.T) continue;
      for (int64_t kf = 0; kf < g.Kf; ++kf) {
        const int64_t f = f0 + kf * g.df;
        if (f < 0 || f >= g.F) continue;
        acc += xc[t * g.F + f] * wc[kt * g.Kf + kf];
      }
    }
  }
  return acc;
}

// One output element of the transposed convolution. y has extents (T, F),
// input x has extents (To, Fo); contribution exists where the forward map
// would have read this element.
template <typename S>
inline S convt_out_elem(const S* x, const S* w, const ConvGeom& g, int64_t b,
                        int64_t co, int64_t t, int64_t f) {
  S acc = S(0);
  for (int64_t ci = 0; ci < g.Cin; ++ci) {
    const S* xc = x + ((b * g.Cin + ci) * g.To) * g.Fo;
    const S* wc = w + ((ci * g.Cout + co) * g.Kt) * g.Kf;
    for (int64_t kt = 0; kt < g.Kt; ++kt) {
      const int64_t tn = t + g.pad_t - kt * g.dt;
      if (tn < 0 || tn % g.st) continue;
      const int64_t to = tn / g.st;
      if (to >= g.To) continue;
      for (int64_t kf = 0; kf < g.Kf; ++kf) {
        const int64_t fn = f + g.pad_f - kf * g.df;
        if (fn < 0 || fn % g.sf) continue;
        const int64_t fo = fn / g.sf;
        if (fo >= g.Fo) continue;
        acc += xc[to * g.Fo + fo] * wc[kt * g.Kf + kf];
      }
    }
  }
  return acc;
}

// Gradient of the conv kernel: one weight element, summed over batch/output.
template <typename S>
inline S conv_gradw_elem(const S* x, const S* gy, const ConvGeom& g, int64_t co,
                         int64_t ci, int64_t kt, int64_t kf) {
  const int64_t cpg_out = g.Cout / g.groups;
  const int64_t cpg_in = g.Cin / g.groups;
  const int64_t grp = co / cpg_out;
  const int64_t c_in = grp * cpg_in + ci;
  S acc = S(0);
  for (int64_t b = 0; b < g.B; ++b) {
    const S* xc = x + ((b * g.Cin + c_in) * g.T) * g.F;
    const S* gc = gy + ((b * g.Cout + co) * g.To) * g.Fo;
    for (int64_t to = 0; to < g.To; ++to) {
      const int64_t t = to * g.st - g.pad_t + kt * g.dt;
      if (t < 0 || t >= g.T) continue;
      for (int64_t fo = 0; fo < g.Fo; ++fo) {
        const int64_t f = fo * g.sf - g.pad_f + kf * g.df;
        if (f < 0 || f >= g.F) continue;
        acc += xc[t * g.F + f] * gc[to * g.Fo + fo];
      }
    }
  }
  return acc;
}

// Gradient of the transposed-conv kernel, layout [Cin, Cout, Kt, Kf].
template <typename S>
inline S convt_gradw_elem(const S* x, const S* gy, const ConvGeom& g,
                          int64_t ci, int64_t co, int64_t kt, int64_t kf) {
  S acc = S(0);
  for (int64_t b = 0; b < g.B; ++b) {
    const S* xc = x + ((b * g.Cin + ci) * g.To) * g.Fo;
    const S* gc = gy + ((b * g.Cout + co) * g.T) * g.F;
    for (int64_t to = 0; to < g.To; ++to) {
      const int64_t t = to * g.st - g.pad_t + kt * g.dt;
      if (t < 0 || t >= g.T) continue;
      for (int64_t fo = 0; fo < g.Fo; ++fo) {
        const int64_t f = fo * g.sf - g.pad_f + kf * g.df;
        if (f < 0 || f >= g.F) continue;
        acc += xc[to * g.Fo + fo] * gc[t * g.F + f];
      }
    }
  }
  return acc;
}

}  // namespace detail

namespace detail {

// Runs body(i) for i in [0, n) on the active backend. Iterations must be
// independent; each writes its own output element.
template <typename Body>
inline void parallel_index(int64_t n, const Body& body) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) body(i);
  } else {
    for (int64_t i = 0; i < n; ++i) body(i);
  }
}

}  // namespace detail

// y[B, Cout, To, Fo] = conv(x, w); add == true accumulates into y.
template <typename S>
void conv2d_forward(const S* x, const S* w, S* y, const ConvGeom& g,
                    bool add = false) {
  detail::parallel_index(g.B * g.Cout, [&](int64_t bc) {
    const int64_t b = bc / g.Cout, co = bc % g.Cout;
    S* yo = y + bc * g.To * g.Fo;
    for (int64_t to = 0; to < g.To; ++to)
      for (int64_t fo = 0; fo < g.Fo; ++fo) {
        const S v = detail::conv_out_elem(x, w, g, b, co, to, fo);
        S& dst = yo[to * g.Fo + fo];
        dst = add ? dst + v : v;
      }
  });
}

// y[B, Cout, T, F] = conv_transposed(x[B, Cin, To, Fo], w[Cin, Cout, Kt, Kf]).
// Exact adjoint of conv2d_forward at the same geometry (groups == 1).
template <typename S>
void conv2d_transposed_forward(const S* x, const S* w, S* y, const ConvGeom& g,
                               bool add = false) {
  detail::parallel_index(g.B * g.Cout, [&](int64_t bc) {
    const int64_t b = bc / g.Cout, co = bc % g.Cout;
    S* yo = y + bc * g.T * g.F;
    for (int64_t t = 0; t < g.T; ++t)
      for (int64_t f = 0; f < g.F; ++f) {
        const S v = detail::convt_out_elem(x, w, g, b, co, t, f);
        S& dst = yo[t * g.F + f];
        dst = add ? dst + v : v;
      }
  });
}

// gw[Cout, Cin/g, Kt, Kf] += dL/dw for the forward convolution.
template <typename S>
void conv2d_grad_kernel(const S* x, const S* gy, S* gw, const ConvGeom& g) {
  const int64_t cpg_in = g.Cin / g.groups;
  detail::parallel_index(g.Cout * cpg_in * g.Kt * g.Kf, [&](int64_t i) {
    const int64_t kf = i % g.Kf, kt = (i / g.Kf) % g.Kt;
    const int64_t ci = (i / (g.Kf * g.Kt)) % cpg_in;
    const int64_t co = i / (g.Kf * g.Kt * cpg_in);
    gw[i] += detail::conv_gradw_elem(x, gy, g, co, ci, kt, kf);
  });
}

// gw[Cin, Cout, Kt, Kf] += dL/dw for the transposed convolution.
template <typename S>
void conv2d_transposed_grad_kernel(const S* x, const S* gy, S* gw,
                                   const ConvGeom& g) {
  detail::parallel_index(g.Cin * g.Cout * g.Kt * g.Kf, [&](int64_t i) {
    const int64_t kf = i % g.Kf, kt = (i / g.Kf) % g.Kt;
    const int64_t co = (i / (g.Kf * g.Kt)) % g.Cout;
    const int64_t ci = i / (g.Kf * g.Kt * g.Cout);
    gw[i] += detail::convt_gradw_elem(x, gy, g, ci, co, kt, kf);
  });
}

// dL/dx of conv2d for groups > 1 (depthwise paths). Gather formulation over
// input elements, deterministic under any thread count.
template <typename S>
void conv2d_grad_input_grouped(const S* gy, const S* w, S* gx,
                               const ConvGeom& g) {
  const int64_t cpg_out = g.Cout / g.groups;
  const int64_t cpg_in = g.Cin / g.groups;
  const int64_t n_bc = g.B * g.Cin;
  auto body = [&](int64_t bc) {
    const int64_t b = bc / g.Cin, ci_g = bc % g.Cin;
    const int64_t grp = ci_g / cpg_in, ci = ci_g % cpg_in;
    S* gxo = gx + bc * g.T * g.F;
    for (int64_t t = 0; t < g.T; ++t)
      for (int64_t f = 0; f < g.F; ++f) {
        S acc = S(0);
        for (int64_t co = grp * cpg_out; co < (grp + 1) * cpg_out; ++co) {
          const S* gc = gy + ((b * g.Cout + co) * g.To) * g.Fo;
          const S* wc = w + ((co * cpg_in + ci) * g.Kt) * g.Kf;
          for (int64_t kt = 0; kt < g.Kt; ++kt) {
            const int64_t tn = t + g.pad_t - kt * g.dt;
            if (tn < 0 || tn % g.st) continue;
            const int64_t to = tn / g.st;
            if (to >= g.To) continue;
            for (int64_t kf = 0; kf < g.Kf; ++kf) {
              const int64_t fn = f + g.pad_f - kf * g.df;
              if (fn < 0 || fn % g.sf) continue;
              const int64_t fo = fn / g.sf;
              if (fo >= g.Fo) continue;
              acc += gc[to * g.Fo + fo] * wc[kt * g.Kf + kf];
            }
          }
        }
        gxo[t * g.F + f] += acc;
      }
  };
  detail::parallel_index(n_bc, body);
}

// Causal per-channel smoothing with one kernel shared across all channels.
// x, y: [B, C, T] flattened rows; k: [L]. y[t] = sum_j x[t - (L-1) + j] k[j].
template <typename S>
void shared_smooth_forward(const S* x, const S* k, S* y, int64_t rows,
                           int64_t T, int64_t L) {
  auto body = [&](int64_t r) {
    const S* xr = x + r * T;
    S* yr = y + r * T;
    for (int64_t t = 0; t < T; ++t) {
      S acc = S(0);
      for (int64_t j = 0; j < L; ++j) {
        const int64_t ti = t - (L - 1) + j;
        if (ti >= 0) acc += xr[ti] * k[j];
      }
      yr[t] = acc;
    }
  };
  detail::parallel_index(rows, body);
}

template <typename S>
void shared_smooth_grad_input(const S* gy, const S* k, S* gx, int64_t rows,
                              int64_t T, int64_t L) {
  auto body = [&](int64_t r) {
    const S* gr = gy + r * T;
    S* gxr = gx + r * T;
    for (int64_t t = 0; t < T; ++t) {
      S acc = S(0);
      for (int64_t j = 0; j < L; ++j) {
        const int64_t to = t + (L - 1) - j;
        if (to < T) acc += gr[to] * k[j];
      }
      gxr[t] += acc;
    }
  };
  detail::parallel_index(rows, body);
}

// Kernel gradient accumulates over every row in a fixed order; the tap loop
// is parallel, rows are not, keeping the reduction order independent of the
// thread count.
template <typename S>
void shared_smooth_grad_kernel(const S* x, const S* gy, S* gk, int64_t rows,
                               int64_t T, int64_t L) {
  auto body = [&](int64_t j) {
    S acc = S(0);
    for (int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * T;
      const S* gr = gy + r * T;
      for (int64_t t = 0; t < T; ++t) {
        const int64_t ti = t - (L - 1) + j;
        if (ti >= 0) acc += xr[ti] * gr[t];
      }
    }
    gk[j] += acc;
  };
  detail::parallel_index(L, body);
}

}  // namespace ctsnet::kernels
