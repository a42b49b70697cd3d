#pragma once

// Training objectives and the in-repo evaluation metrics. Losses are plain
// sums of squares (no frame or bin averaging); batch handling averages
// per-utterance losses at the call site. SDR is the energy-ratio form.

#include <algorithm>
#include <cmath>
#include <string>

#include "ctsnet/ops.hpp"
#include "ctsnet/stft.hpp"

namespace ctsnet {

inline constexpr double kMagLossEps = 1e-8;  // keeps d(sqrt)/dx finite at 0
inline constexpr double kSdrClampDb = 100.0;

template <typename S>
struct LossReport {
  S l_cm = S(0);
  S l_ri = S(0);
  S l_mag = S(0);
  S total = S(0);
  S lambda = S(0);
};

// Squared Frobenius norm of (est - clean); scalar tensor, differentiable.
template <typename S>
Tensor<S> loss_cm(const Tensor<S>& est_mag, const Tensor<S>& clean_mag) {
  require(est_mag.shape() == clean_mag.shape(),
          "loss_cm shape mismatch: " + shape_str(est_mag.shape()) + " vs " +
              shape_str(clean_mag.shape()));
  Tensor<S> d = sub(est_mag, clean_mag);
  return sum(mul(d, d));
}

template <typename S>
struct Stage2Loss {
  Tensor<S> total, l_ri, l_mag;  // scalar tensors on the tape
  LossReport<S> report;
};

// Eq-style stage-2 objective: RI error, derived-magnitude error, and the
// lambda-weighted stage-1 term.
template <typename S>
Stage2Loss<S> loss_stage2(const Tensor<S>& est_r, const Tensor<S>& est_i,
                          const Tensor<S>& clean_r, const Tensor<S>& clean_i,
                          S lambda, const Tensor<S>& l_cm) {
  if (!(lambda >= S(0) && lambda <= S(1)))
    throw ConfigError("lambda must lie in [0,1]");
  require(est_r.shape() == clean_r.shape() && est_i.shape() == clean_i.shape(),
          "loss_stage2 shape mismatch: est " + shape_str(est_r.shape()) +
              " vs clean " + shape_str(clean_r.shape()));

  Stage2Loss<S> out;
  out.l_ri = add(loss_cm(est_r, clean_r), loss_cm(est_i, clean_i));

  auto mag_of = [](const Tensor<S>& r, const Tensor<S>& i) {
    return sqrt_shift(add(mul(r, r), mul(i, i)), S(kMagLossEps));
  };
  Tensor<S> dm = sub(mag_of(est_r, est_i), mag_of(clean_r, clean_i));
  out.l_mag = sum(mul(dm, dm));

  out.total = add(add(out.l_ri, out.l_mag), scale(l_cm, lambda));
  out.report.l_cm = l_cm.item();
  out.report.l_ri = out.l_ri.item();
  out.report.l_mag = out.l_mag.item();
  out.report.total = out.total.item();
  out.report.lambda = lambda;
  return out;
}

namespace metricdetail {

inline void check_pair(const Waveform& ref, const Waveform& est) {
  require(ref.size() == est.size(),
          "metric requires equal lengths, got " + std::to_string(ref.size()) +
              " vs " + std::to_string(est.size()));
  double e = 0.0;
  for (double v : ref.samples) e += v * v;
  if (e <= 0.0)
    throw NumericError("metric undefined for an all-zero reference");
}

inline double ratio_db(double num, double den) {
  if (den <= num * 1e-12) return kSdrClampDb;
  return std::min(kSdrClampDb, 10.0 * std::log10(num / den));
}

}  // namespace metricdetail

// 10*log10(|s|^2 / |s - s_hat|^2), clamped to 100 dB.
inline double sdr_db(const Waveform& ref, const Waveform& est) {
  metricdetail::check_pair(ref, est);
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < ref.samples.size(); ++i) {
    const double s = ref.samples[i];
    const double d = s - est.samples[i];
    num += s * s;
    den += d * d;
  }
  return metricdetail::ratio_db(num, den);
}

// Scale-invariant SDR: the estimate is first projected onto the reference,
// so any positive or negative rescaling of the estimate scores identically.
inline double si_sdr_db(const Waveform& ref, const Waveform& est) {
  metricdetail::check_pair(ref, est);
  double dot = 0.0, ref_e = 0.0;
  for (size_t i = 0; i < ref.samples.size(); ++i) {
    dot += est.samples[i] * ref.samples[i];
    ref_e += ref.samples[i] * ref.samples[i];
  }
  const double alpha = dot / ref_e;
  double tgt_e = 0.0, err_e = 0.0;
  for (size_t i = 0; i < ref.samples.size(); ++i) {
    const double t = alpha * ref.samples[i];
    const double e = est.samples[i] - t;
    tgt_e += t * t;
    err_e += e * e;
  }
  if (tgt_e <= 0.0) return -kSdrClampDb;
  return metricdetail::ratio_db(tgt_e, err_e);
}

}  // namespace ctsnet
