#pragma once

// Waveform <-> time-frequency conversion: 320-point DFT frames, 160-sample
// hop, periodic Hann analysis window, 161 retained bins. The inverse is
// weighted overlap-add normalized by the summed squared window, which makes
// the round trip exact on samples covered by at least one nonzero window
// value. Frames start at sample 0; no center padding.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ctsnet/common.hpp"
#include "ctsnet/tensor.hpp"

namespace ctsnet {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFftSize = 320;
inline constexpr int kHop = 160;
inline constexpr int kBins = kFftSize / 2 + 1;  // 161

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  int64_t size() const { return int64_t(samples.size()); }
};

template <typename S>
struct ComplexSpectrogram {
  Tensor<S> real;  // [T, 161]
  Tensor<S> imag;  // [T, 161]

  int64_t frames() const { return real.defined() ? real.dim(0) : 0; }
};

template <typename S>
struct MagPhase {
  Tensor<S> mag;    // [T, 161], nonnegative
  Tensor<S> phase;  // [T, 161], radians
};

namespace detail {

inline const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kFftSize);
    for (int n = 0; n < kFftSize; ++n)
      v[size_t(n)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * n / kFftSize));
    return v;
  }();
  return w;
}

// cos/sin tables for the 161 retained bins of the 320-point DFT.
struct DftTables {
  std::vector<double> cos_t, sin_t;  // [kBins][kFftSize]
  DftTables() : cos_t(kBins * kFftSize), sin_t(kBins * kFftSize) {
    for (int k = 0; k < kBins; ++k)
      for (int n = 0; n < kFftSize; ++n) {
        const double a = 2.0 * M_PI * k * n / kFftSize;
        cos_t[size_t(k * kFftSize + n)] = std::cos(a);
        sin_t[size_t(k * kFftSize + n)] = std::sin(a);
      }
  }
};

inline const DftTables& dft_tables() {
  static const DftTables t;
  return t;
}

}  // namespace detail

inline int64_t stft_frame_count(int64_t samples) {
  return (samples - kFftSize) / kHop + 1;
}

// Number of samples addressed by a spectrogram with the given frame count.
inline int64_t stft_coverage(int64_t frames) {
  return (frames - 1) * kHop + kFftSize;
}

template <typename S>
ComplexSpectrogram<S> stft(const Waveform& w) {
  if (w.sample_rate != kSampleRate)
    throw ConfigError("stft requires a " + std::to_string(kSampleRate) +
                      " Hz waveform, got " + std::to_string(w.sample_rate) +
                      " Hz");
  require(w.size() >= kFftSize,
          "stft needs at least " + std::to_string(kFftSize) + " samples, got " +
              std::to_string(w.size()));
  const int64_t T = stft_frame_count(w.size());
  const auto& win = detail::hann_window();
  const auto& tb = detail::dft_tables();

  ComplexSpectrogram<S> out;
  out.real = Tensor<S>({T, kBins});
  out.imag = Tensor<S>({T, kBins});
  std::vector<double> frame(kFftSize);
  for (int64_t l = 0; l < T; ++l) {
    const double* src = w.samples.data() + l * kHop;
    for (int n = 0; n < kFftSize; ++n) frame[size_t(n)] = src[n] * win[size_t(n)];
    for (int k = 0; k < kBins; ++k) {
      const double* ct = tb.cos_t.data() + k * kFftSize;
      const double* st = tb.sin_t.data() + k * kFftSize;
      double re = 0.0, im = 0.0;
      for (int n = 0; n < kFftSize; ++n) {
        re += frame[size_t(n)] * ct[n];
        im -= frame[size_t(n)] * st[n];
      }
      out.real.data()[l * kBins + k] = S(re);
      out.imag.data()[l * kBins + k] = S(im);
    }
  }
  return out;
}

template <typename S>
Waveform istft(const ComplexSpectrogram<S>& spec, int64_t length) {
  require(spec.real.defined() && spec.imag.defined() &&
              spec.real.shape() == spec.imag.shape() &&
              spec.real.ndim() == 2 && spec.real.dim(1) == kBins,
          "istft: malformed spectrogram");
  const int64_t T = spec.frames();
  if (length > stft_coverage(T))
    throw ConfigError("istft: requested " + std::to_string(length) +
                      " samples but spectrogram covers only " +
                      std::to_string(stft_coverage(T)));
  const auto& win = detail::hann_window();
  const auto& tb = detail::dft_tables();

  std::vector<double> acc(size_t(stft_coverage(T)), 0.0);
  std::vector<double> norm(size_t(stft_coverage(T)), 0.0);
  std::vector<double> frame(kFftSize);
  for (int64_t l = 0; l < T; ++l) {
    const S* re = spec.real.data() + l * kBins;
    const S* im = spec.imag.data() + l * kBins;
    // Real inverse DFT with Hermitian extension of the 161 stored bins.
    for (int n = 0; n < kFftSize; ++n) {
      double v = double(re[0]) + double(re[kBins - 1]) * (n % 2 ? -1.0 : 1.0);
      for (int k = 1; k < kBins - 1; ++k) {
        v += 2.0 * (double(re[k]) * tb.cos_t[size_t(k * kFftSize + n)] -
                    double(im[k]) * tb.sin_t[size_t(k * kFftSize + n)]);
      }
      frame[size_t(n)] = v / kFftSize;
    }
    for (int n = 0; n < kFftSize; ++n) {
      acc[size_t(l * kHop + n)] += win[size_t(n)] * frame[size_t(n)];
      norm[size_t(l * kHop + n)] += win[size_t(n)] * win[size_t(n)];
    }
  }

  Waveform out;
  out.samples.resize(size_t(length));
  for (int64_t n = 0; n < length; ++n)
    out.samples[size_t(n)] =
        norm[size_t(n)] > 1e-12 ? acc[size_t(n)] / norm[size_t(n)] : 0.0;
  return out;
}

template <typename S>
MagPhase<S> to_mag_phase(const ComplexSpectrogram<S>& spec) {
  MagPhase<S> mp;
  mp.mag = Tensor<S>(spec.real.shape());
  mp.phase = Tensor<S>(spec.real.shape());
  for (int64_t i = 0; i < spec.real.numel(); ++i) {
    const double re = double(spec.real.data()[i]);
    const double im = double(spec.imag.data()[i]);
    mp.mag.data()[i] = S(std::hypot(re, im));
    mp.phase.data()[i] = S(std::atan2(im, re));
  }
  return mp;
}

template <typename S>
ComplexSpectrogram<S> couple(const Tensor<S>& mag, const Tensor<S>& phase) {
  require(mag.shape() == phase.shape(), "couple: magnitude " +
                                            shape_str(mag.shape()) +
                                            " vs phase " +
                                            shape_str(phase.shape()));
  for (int64_t i = 0; i < mag.numel(); ++i)
    if (mag.data()[i] < S(0))
      throw NumericError("couple: negative magnitude violates the contract");
  ComplexSpectrogram<S> out;
  out.real = Tensor<S>(mag.shape());
  out.imag = Tensor<S>(mag.shape());
  for (int64_t i = 0; i < mag.numel(); ++i) {
    out.real.data()[i] = mag.data()[i] * S(std::cos(double(phase.data()[i])));
    out.imag.data()[i] = mag.data()[i] * S(std::sin(double(phase.data()[i])));
  }
  return out;
}

}  // namespace ctsnet
