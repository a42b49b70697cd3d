#pragma once

// Structural verification: exact parameter counts from the registry,
// receptive fields by interval propagation over the layer list, and a
// black-box causality probe that perturbs future frames and compares
// prefixes bitwise.

#include <cstring>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ctsnet/networks.hpp"

namespace ctsnet {

struct ParamReport {
  std::vector<std::pair<std::string, int64_t>> per_block;
  int64_t conv_only = 0;
  int64_t norm_act = 0;
  int64_t total = 0;
};

namespace analysisdetail {

// Block key: "cme.enc.0", "cme.tcm.g0.b3", "cme.dec.4", ...
inline std::string block_of(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  std::string tok;
  while (std::getline(ss, tok, '.')) parts.push_back(tok);
  size_t depth = 3;
  if (parts.size() > 1 && parts[1] == "tcm") depth = 4;
  if (parts.size() < depth) depth = parts.size();
  std::string key;
  for (size_t i = 0; i < depth; ++i) key += (i ? "." : "") + parts[i];
  return key;
}

}  // namespace analysisdetail

template <typename S>
ParamReport count_params(const ParamRegistry<S>& reg, bool include_norms) {
  ParamReport rep;
  std::map<std::string, int64_t> blocks;
  for (const auto& e : reg.entries()) {
    const int64_t n = e.tensor.numel();
    rep.total += n;
    if (is_conv_param(e.kind))
      rep.conv_only += n;
    else
      rep.norm_act += n;
    if (include_norms || is_conv_param(e.kind))
      blocks[analysisdetail::block_of(e.name)] += n;
  }
  for (const auto& [k, v] : blocks) rep.per_block.emplace_back(k, v);
  return rep;
}

struct ReceptiveFieldReport {
  int64_t past_frames = 0;
  int64_t future_frames = 0;
  double past_seconds = 0.0;

  static ReceptiveFieldReport from_layers(const std::vector<TimeLayer>& ls) {
    ReceptiveFieldReport r;
    for (const auto& l : ls) {
      r.past_frames += l.past;
      r.future_frames += l.future;
    }
    r.past_seconds = double(r.past_frames) * kHop / kSampleRate;
    return r;
  }
};

// One probe subject: how to draw an input, how to corrupt frames > t, and a
// forward pass exposing per-layer taps. The time axis is dim 2.
template <typename S>
struct ProbeTarget {
  std::string name;
  Shape input_shape;  // [1, C, T, F]
  std::function<void(Tensor<S>&, int64_t, Rng&)> fill;  // fill frames >= from
  std::function<Tensor<S>(const Tensor<S>&, ActivationTrace<S>*)> forward;
};

struct CausalityReport {
  std::string model;
  int64_t trials = 0;
  int64_t violations = 0;
  int64_t sensitive_trials = 0;  // future change visible at frames > t
  std::string first_violation_layer;
  int64_t first_violation_frame = -1;

  bool pass() const { return violations == 0; }
};

namespace analysisdetail {

// Bitwise comparison of frames [0, t] of two taps.
template <typename S>
bool prefix_equal(const Tensor<S>& a, const Tensor<S>& b, int64_t t) {
  if (a.shape() != b.shape()) return false;
  const int64_t T = a.dim(2), F = a.dim(3), BC = a.dim(0) * a.dim(1);
  const int64_t upto = std::min(t + 1, T);
  for (int64_t bc = 0; bc < BC; ++bc) {
    const S* pa = a.data() + bc * T * F;
    const S* pb = b.data() + bc * T * F;
    if (std::memcmp(pa, pb, size_t(upto * F) * sizeof(S)) != 0) return false;
  }
  return true;
}

template <typename S>
bool suffix_differs(const Tensor<S>& a, const Tensor<S>& b, int64_t t) {
  const int64_t T = a.dim(2), F = a.dim(3), BC = a.dim(0) * a.dim(1);
  for (int64_t bc = 0; bc < BC; ++bc)
    for (int64_t ti = t + 1; ti < T; ++ti) {
      const S* pa = a.data() + (bc * T + ti) * F;
      const S* pb = b.data() + (bc * T + ti) * F;
      if (std::memcmp(pa, pb, size_t(F) * sizeof(S)) != 0) return true;
    }
  return false;
}

}  // namespace analysisdetail

// For each trial: draw an input, pick a split frame t, redraw everything
// after t, and require output frames <= t to be unchanged bitwise. On a
// violation the first differing tap names the offending layer.
template <typename S>
CausalityReport probe_causality(const ProbeTarget<S>& target, int64_t trials,
                                Rng& rng) {
  CausalityReport rep;
  rep.model = target.name;
  rep.trials = trials;
  const int64_t T = target.input_shape[2];
  require(T >= 3, "probe needs at least 3 frames");
  for (int64_t trial = 0; trial < trials; ++trial) {
    Tensor<S> x0(target.input_shape);
    target.fill(x0, 0, rng);
    const int64_t t = 1 + int64_t(rng.below(uint64_t(T - 2)));
    Tensor<S> x1 = x0.clone();
    target.fill(x1, t + 1, rng);

    ActivationTrace<S> tr0, tr1;
    Tensor<S> y0 = target.forward(x0, &tr0);
    Tensor<S> y1 = target.forward(x1, &tr1);

    if (!analysisdetail::prefix_equal(y0, y1, t)) {
      ++rep.violations;
      if (rep.first_violation_layer.empty()) {
        rep.first_violation_frame = t;
        rep.first_violation_layer = "output";
        for (size_t i = 0; i < tr0.taps.size() && i < tr1.taps.size(); ++i) {
          if (!analysisdetail::prefix_equal(tr0.taps[i].second,
                                            tr1.taps[i].second, t)) {
            rep.first_violation_layer = tr0.taps[i].first;
            break;
          }
        }
      }
    }
    if (analysisdetail::suffix_differs(y0, y1, t)) ++rep.sensitive_trials;
  }
  return rep;
}

// Standard probe targets for the shipped models.
template <typename S>
ProbeTarget<S> probe_target_cme(const Model<S>& model, int64_t frames) {
  ProbeTarget<S> t;
  t.name = "CME-Net";
  t.input_shape = {1, 1, frames, model.cfg.freq_bins};
  t.fill = [](Tensor<S>& x, int64_t from, Rng& rng) {
    const int64_t T = x.dim(2), F = x.dim(3);
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t ti = from; ti < T; ++ti)
        for (int64_t f = 0; f < F; ++f)
          x.data()[x.index4(0, c, ti, f)] = S(rng.uniform(0.0, 1.0));
  };
  const CmeNet<S>* net = model.cme.get();
  t.forward = [net](const Tensor<S>& x, ActivationTrace<S>* tr) {
    NoGradGuard<S> ng;
    return net->forward(x, tr);
  };
  return t;
}

template <typename S>
ProbeTarget<S> probe_target_csr(const Model<S>& model, int64_t frames) {
  ProbeTarget<S> t;
  t.name = "CSR-Net";
  t.input_shape = {1, 4, frames, model.cfg.freq_bins};
  t.fill = [](Tensor<S>& x, int64_t from, Rng& rng) {
    const int64_t T = x.dim(2), F = x.dim(3);
    for (int64_t c = 0; c < x.dim(1); ++c)
      for (int64_t ti = from; ti < T; ++ti)
        for (int64_t f = 0; f < F; ++f)
          x.data()[x.index4(0, c, ti, f)] = S(rng.uniform(-1.0, 1.0));
  };
  const CsrNet<S>* net = model.csr.get();
  require(net != nullptr, "model has no stage 2");
  t.forward = [net](const Tensor<S>& x, ActivationTrace<S>* tr) {
    NoGradGuard<S> ng;
    auto out = net->forward(x, tr);
    return concat_channels(out.first, out.second);
  };
  return t;
}

// End-to-end target: magnitude + RI planes derived from one random "noisy"
// tensor triple; perturbation rewrites all three past the split.
template <typename S>
ProbeTarget<S> probe_target_cts(const Model<S>& model, int64_t frames) {
  ProbeTarget<S> t;
  t.name = "CTS-Net";
  t.input_shape = {1, 2, frames, model.cfg.freq_bins};  // packed (re, im)
  t.fill = [](Tensor<S>& x, int64_t from, Rng& rng) {
    const int64_t T = x.dim(2), F = x.dim(3);
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t ti = from; ti < T; ++ti)
        for (int64_t f = 0; f < F; ++f)
          x.data()[x.index4(0, c, ti, f)] = S(rng.uniform(-1.0, 1.0));
  };
  const Model<S>* m = &model;
  t.forward = [m](const Tensor<S>& packed, ActivationTrace<S>* tr) {
    NoGradGuard<S> ng;
    const int64_t T = packed.dim(2), F = packed.dim(3);
    Tensor<S> re({1, 1, T, F}), im({1, 1, T, F}), mag({1, 1, T, F});
    for (int64_t i = 0; i < T * F; ++i) {
      re.data()[i] = packed.data()[i];
      im.data()[i] = packed.data()[T * F + i];
      mag.data()[i] = S(std::hypot(double(re.data()[i]), double(im.data()[i])));
    }
    CtsOutput<S> out = m->forward(mag, re, im, tr);
    return concat_channels(out.refined_r, out.refined_i);
  };
  return t;
}

// Hop-aligned waveform-level probe of the full enhancement chain: replacing
// audio after sample (k+1)*hop + (fft - hop) must leave the first k*hop
// output samples bit-identical.
template <typename S>
CausalityReport probe_waveform_causality(const Model<S>& model, int64_t trials,
                                         int64_t num_samples, Rng& rng) {
  CausalityReport rep;
  rep.model = "CTS-Net (waveform)";
  rep.trials = trials;
  const int64_t frames = stft_frame_count(num_samples);
  require(frames >= 3, "waveform probe input too short");
  for (int64_t trial = 0; trial < trials; ++trial) {
    Waveform w0;
    w0.samples.resize(size_t(num_samples));
    for (auto& v : w0.samples) v = rng.uniform(-0.5, 0.5);
    const int64_t k = 1 + int64_t(rng.below(uint64_t(frames - 2)));
    Waveform w1 = w0;
    for (int64_t n = k * kHop + kFftSize; n < num_samples; ++n)
      w1.samples[size_t(n)] = rng.uniform(-0.5, 0.5);

    const Waveform y0 = cts_enhance(model, w0);
    const Waveform y1 = cts_enhance(model, w1);
    if (std::memcmp(y0.samples.data(), y1.samples.data(),
                    size_t(k * kHop) * sizeof(double)) != 0) {
      ++rep.violations;
      if (rep.first_violation_frame < 0) rep.first_violation_frame = k;
    }
    bool changed = false;
    for (int64_t n = k * kHop; n < num_samples && !changed; ++n)
      changed = y0.samples[size_t(n)] != y1.samples[size_t(n)];
    if (changed) ++rep.sensitive_trials;
  }
  return rep;
}

// Empirical time reach: width of the output response to a unit change at one
// input frame, maximized over probe positions. Linear fixtures attain their
// analytic reach exactly; gated stacks may respond on a narrower span.
template <typename S>
int64_t impulse_past_reach(
    const std::function<Tensor<S>(const Tensor<S>&)>& forward,
    const Shape& input_shape, Rng& rng) {
  Tensor<S> x0(input_shape);
  const int64_t T = input_shape[2], F = input_shape[3], C = input_shape[1];
  for (int64_t i = 0; i < x0.numel(); ++i)
    x0.data()[i] = S(rng.uniform(-1.0, 1.0));
  NoGradGuard<S> ng;
  const Tensor<S> y0 = forward(x0);
  const int64_t t_probe = 0;  // earliest frame reaches the furthest forward
  Tensor<S> x1 = x0.clone();
  for (int64_t c = 0; c < C; ++c)
    for (int64_t f = 0; f < F; ++f)
      x1.data()[x1.index4(0, c, t_probe, f)] += S(1);
  const Tensor<S> y1 = forward(x1);
  int64_t last_affected = -1;
  const int64_t To = y0.dim(2), Fo = y0.dim(3), Co = y0.dim(1);
  for (int64_t t = 0; t < To; ++t)
    for (int64_t c = 0; c < Co; ++c)
      for (int64_t f = 0; f < Fo; ++f)
        if (y0.data()[y0.index4(0, c, t, f)] != y1.data()[y1.index4(0, c, t, f)]) {
          last_affected = std::max(last_affected, t);
          break;
        }
  return last_affected - t_probe;
}

// key=value block used by the CLI alongside the human-readable table.
inline std::string param_report_kv(const ParamReport& rep,
                                   const std::string& prefix) {
  std::ostringstream os;
  for (const auto& [k, v] : rep.per_block)
    os << prefix << ".block." << k << "=" << v << "\n";
  os << prefix << ".conv_only=" << rep.conv_only << "\n";
  os << prefix << ".norm_act=" << rep.norm_act << "\n";
  os << prefix << ".total=" << rep.total << "\n";
  return os.str();
}

inline std::string rf_report_kv(const ReceptiveFieldReport& rep,
                                const std::string& prefix) {
  std::ostringstream os;
  os << prefix << ".past_frames=" << rep.past_frames << "\n";
  os << prefix << ".future_frames=" << rep.future_frames << "\n";
  os << prefix << ".past_seconds=" << rep.past_seconds << "\n";
  return os.str();
}

}  // namespace ctsnet
