#pragma once

// The two-stage pipeline. Stage 1 (CmeNet) maps the noisy magnitude to a
// coarse clean-magnitude estimate; coupled with the noisy phase it gives a
// coarse complex spectrum. Stage 2 (CsrNet) sees the coarse and noisy RI
// planes and predicts an additive complex residual. Both stages share the
// encoder/TCM/decoder topology with skip connections from each encoder stage
// to its mirrored decoder stage.

#include <memory>
#include <string>
#include <vector>

#include "ctsnet/blocks.hpp"
#include "ctsnet/stft.hpp"

namespace ctsnet {

struct ModelConfig {
  int64_t channels = 64;    // intermediate encoder/decoder channels
  int64_t freq_bins = kBins;
  int64_t cme_tcms = 18;    // MG-TCMs in stage 1
  int64_t csr_tcms = 12;    // DMG-TCMs in stage 2
  int64_t tcm_per_group = 6;
  int64_t dilation_cycle_M = 5;
  bool gate_weight_sharing = false;
  bool smoothed = true;
  uint64_t init_seed = 1;

  // Encoder kernels in frequency; first layer (2,5), the rest (2,3).
  std::vector<int64_t> freq_kernels() const { return {5, 3, 3, 3, 3}; }

  std::vector<int64_t> encoder_freq_chain() const {
    std::vector<int64_t> chain{freq_bins};
    for (int64_t kf : freq_kernels())
      chain.push_back(ConvBlock<float>::out_freq(chain.back(), kf));
    return chain;
  }

  int64_t bottleneck_channels() const {
    return channels * encoder_freq_chain().back();
  }
};

namespace netdetail {

// The decoder must rebuild the encoder's frequency extents exactly.
inline void check_mirroring(const ModelConfig& cfg) {
  const auto chain = cfg.encoder_freq_chain();
  const auto kfs = cfg.freq_kernels();
  for (size_t i = 0; i < kfs.size(); ++i) {
    require(chain[i + 1] >= 1, "encoder collapsed the frequency axis: chain " +
                                   std::to_string(chain[i]) + " -> " +
                                   std::to_string(chain[i + 1]));
    const int64_t rebuilt =
        DeconvBlock<float>::out_freq(chain[i + 1], kfs[i]);
    if (rebuilt != chain[i])
      throw ConfigError(
          "decoder stage cannot mirror its encoder twin: encoder " +
          std::to_string(chain[i]) + " -> " + std::to_string(chain[i + 1]) +
          " but transposed kernel " + std::to_string(kfs[i]) + " rebuilds " +
          std::to_string(rebuilt));
  }
}

}  // namespace netdetail

// Shared encoder / TCM trunk / decoder assembly.
template <typename S>
class EncoderDecoderNet {
 public:
  EncoderDecoderNet(ParamRegistry<S>& reg, const std::string& prefix,
                    const ModelConfig& cfg, int64_t in_channels,
                    TcmVariant variant, int64_t tcm_count, Rng& rng,
                    int64_t decoder_heads)
      : cfg_(cfg), prefix_(prefix) {
    netdetail::check_mirroring(cfg);
    const auto kfs = cfg.freq_kernels();
    int64_t cin = in_channels;
    for (size_t i = 0; i < kfs.size(); ++i) {
      encoder_.push_back(std::make_unique<ConvBlock<S>>(
          reg, prefix + ".enc." + std::to_string(i), cin, cfg.channels, kfs[i],
          rng, &time_layers_));
      cin = cfg.channels;
    }
    const int64_t cio = cfg.bottleneck_channels();
    for (int64_t gi = 0; gi * cfg.tcm_per_group < tcm_count; ++gi) {
      const int64_t n =
          std::min(cfg.tcm_per_group, tcm_count - gi * cfg.tcm_per_group);
      groups_.push_back(std::make_unique<TcmGroup<S>>(
          reg, prefix + ".tcm.g" + std::to_string(gi), variant, cio, n,
          cfg.dilation_cycle_M, cfg.gate_weight_sharing, cfg.smoothed, rng,
          &time_layers_));
    }
    for (int64_t h = 0; h < decoder_heads; ++h) {
      std::vector<std::unique_ptr<DeconvBlock<S>>> head;
      const std::string hp =
          prefix + (decoder_heads > 1 ? ".dec" + std::to_string(h) : ".dec");
      for (size_t i = 0; i < kfs.size(); ++i) {
        const bool last = i + 1 == kfs.size();
        // Skip connection doubles the input channels of every stage.
        head.push_back(std::make_unique<DeconvBlock<S>>(
            reg, hp + "." + std::to_string(i), 2 * cfg.channels,
            last ? 1 : cfg.channels, kfs[kfs.size() - 1 - i], last, rng,
            h == 0 ? &time_layers_ : nullptr));
      }
      decoders_.push_back(std::move(head));
    }
  }

  // Runs encoder, TCM trunk and all decoder heads; returns one pre-activation
  // output per head, each [B, 1, T, freq_bins].
  std::vector<Tensor<S>> forward(const Tensor<S>& x,
                                 ActivationTrace<S>* tr = nullptr) const {
    std::vector<Tensor<S>> skips;
    Tensor<S> h = x;
    for (const auto& blk : encoder_) {
      h = blk->forward(h, tr);
      skips.push_back(h);
    }
    h = fold_freq_into_channels(h);
    for (const auto& g : groups_) h = g->forward(h, tr);
    h = unfold_channels_into_freq(h, skips.back().dim(3));
    std::vector<Tensor<S>> outs;
    for (const auto& head : decoders_) {
      Tensor<S> d = h;
      for (size_t i = 0; i < head.size(); ++i) {
        d = concat_channels(d, skips[head.size() - 1 - i]);
        d = head[i]->forward(d, tr);
      }
      outs.push_back(d);
    }
    return outs;
  }

  const std::vector<TimeLayer>& time_layers() const { return time_layers_; }
  const std::vector<std::unique_ptr<TcmGroup<S>>>& tcm_groups() const {
    return groups_;
  }

 private:
  ModelConfig cfg_;
  std::string prefix_;
  std::vector<std::unique_ptr<ConvBlock<S>>> encoder_;
  std::vector<std::unique_ptr<TcmGroup<S>>> groups_;
  std::vector<std::vector<std::unique_ptr<DeconvBlock<S>>>> decoders_;
  std::vector<TimeLayer> time_layers_;
};

// Stage 1: noisy magnitude in, nonnegative coarse magnitude out (softplus).
template <typename S>
class CmeNet {
 public:
  CmeNet(ParamRegistry<S>& reg, const ModelConfig& cfg, Rng& rng,
         const std::string& prefix = "cme")
      : trunk_(reg, prefix, cfg, /*in_channels=*/1, TcmVariant::gated,
               cfg.cme_tcms, rng, /*decoder_heads=*/1) {}

  Tensor<S> forward(const Tensor<S>& noisy_mag,
                    ActivationTrace<S>* tr = nullptr) const {
    require(noisy_mag.ndim() == 4 && noisy_mag.dim(1) == 1,
            "cme_forward expects [B,1,T,F], got " +
                shape_str(noisy_mag.shape()));
    for (int64_t i = 0; i < noisy_mag.numel(); ++i)
      if (noisy_mag.data()[i] < S(0))
        throw NumericError(
            "cme_forward: negative input magnitude violates the contract");
    Tensor<S> y = softplus(trunk_.forward(noisy_mag, tr)[0]);
    trace_tap(tr, "cme.output", y);
    return y;
  }

  const std::vector<TimeLayer>& time_layers() const {
    return trunk_.time_layers();
  }
  const EncoderDecoderNet<S>& trunk() const { return trunk_; }

 private:
  EncoderDecoderNet<S> trunk_;
};

// Stage 2: 4-channel RI input (coarse_r, coarse_i, noisy_r, noisy_i), two
// linear decoder heads producing the real and imaginary residual planes.
template <typename S>
class CsrNet {
 public:
  CsrNet(ParamRegistry<S>& reg, const ModelConfig& cfg, Rng& rng,
         const std::string& prefix = "csr")
      : trunk_(reg, prefix, cfg, /*in_channels=*/4, TcmVariant::dual_gated,
               cfg.csr_tcms, rng, /*decoder_heads=*/2) {}

  std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& input4,
                                          ActivationTrace<S>* tr = nullptr) const {
    require(input4.ndim() == 4 && input4.dim(1) == 4,
            "csr_forward expects [B,4,T,F], got " + shape_str(input4.shape()));
    auto outs = trunk_.forward(input4, tr);
    trace_tap(tr, "csr.residual_r", outs[0]);
    trace_tap(tr, "csr.residual_i", outs[1]);
    return {outs[0], outs[1]};
  }

  const std::vector<TimeLayer>& time_layers() const {
    return trunk_.time_layers();
  }
  const EncoderDecoderNet<S>& trunk() const { return trunk_; }

 private:
  EncoderDecoderNet<S> trunk_;
};

// Couples an estimated magnitude with the noisy phase. The cos/sin planes
// are constants of the noisy input, so gradients flow into the magnitude.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> couple_noisy_phase(const Tensor<S>& mag,
                                                   const Tensor<S>& noisy_r,
                                                   const Tensor<S>& noisy_i) {
  require(mag.shape() == noisy_r.shape() && mag.shape() == noisy_i.shape(),
          "couple_noisy_phase shape mismatch: " + shape_str(mag.shape()) +
              " vs " + shape_str(noisy_r.shape()));
  for (int64_t i = 0; i < mag.numel(); ++i)
    if (mag.data()[i] < S(0))
      throw NumericError(
          "couple_noisy_phase: negative magnitude violates the contract");
  Tensor<S> cos_p(mag.shape()), sin_p(mag.shape());
  for (int64_t i = 0; i < mag.numel(); ++i) {
    const double re = double(noisy_r.data()[i]);
    const double im = double(noisy_i.data()[i]);
    const double a = std::hypot(re, im);
    if (a > 0.0) {
      cos_p.data()[i] = S(re / a);
      sin_p.data()[i] = S(im / a);
    } else {
      cos_p.data()[i] = S(1);  // atan2(0,0) == 0 convention
      sin_p.data()[i] = S(0);
    }
  }
  return {mul(mag, cos_p), mul(mag, sin_p)};
}

template <typename S>
struct CtsOutput {
  Tensor<S> coarse_mag;                 // stage-1 magnitude
  Tensor<S> coarse_r, coarse_i;        // coarse spectrum (noisy phase)
  Tensor<S> residual_r, residual_i;    // stage-2 additive residual
  Tensor<S> refined_r, refined_i;      // coarse + residual
};

// A complete model: stage 1 alone ("cme") or the full pipeline ("cts").
// All parameters live in one registry; stage-1 names carry the "cme." prefix
// in both kinds, which is what lets a cme checkpoint initialize stage 1 of a
// cts model.
template <typename S>
struct Model {
  std::string kind;
  ModelConfig cfg;
  ParamRegistry<S> params;
  std::unique_ptr<CmeNet<S>> cme;
  std::unique_ptr<CsrNet<S>> csr;

  static Model make(const std::string& kind, const ModelConfig& cfg) {
    require(kind == "cme" || kind == "cts",
            "unknown model kind '" + kind + "' (expected cme or cts)");
    Model m;
    m.kind = kind;
    m.cfg = cfg;
    Rng rng(cfg.init_seed);
    Rng cme_rng = rng.fork(1);
    m.cme = std::make_unique<CmeNet<S>>(m.params, cfg, cme_rng);
    if (kind == "cts") {
      Rng csr_rng = rng.fork(2);
      m.csr = std::make_unique<CsrNet<S>>(m.params, cfg, csr_rng);
    }
    return m;
  }

  // Full two-stage forward on spectrogram planes [B,1,T,F].
  CtsOutput<S> forward(const Tensor<S>& noisy_mag, const Tensor<S>& noisy_r,
                       const Tensor<S>& noisy_i,
                       ActivationTrace<S>* tr = nullptr) const {
    CtsOutput<S> out;
    out.coarse_mag = cme->forward(noisy_mag, tr);
    auto coarse = couple_noisy_phase(out.coarse_mag, noisy_r, noisy_i);
    out.coarse_r = coarse.first;
    out.coarse_i = coarse.second;
    if (!csr) {
      out.residual_r = Tensor<S>(out.coarse_r.shape());
      out.residual_i = Tensor<S>(out.coarse_i.shape());
      out.refined_r = out.coarse_r;
      out.refined_i = out.coarse_i;
      return out;
    }
    Tensor<S> input4 = concat_channels(
        concat_channels(out.coarse_r, out.coarse_i),
        concat_channels(noisy_r, noisy_i));
    auto res = csr->forward(input4, tr);
    out.residual_r = res.first;
    out.residual_i = res.second;
    out.refined_r = add(out.coarse_r, out.residual_r);
    out.refined_i = add(out.coarse_i, out.residual_i);
    return out;
  }
};

// Spectrogram [T,F] planes -> network input [1,1,T,F].
template <typename S>
Tensor<S> as_batch_plane(const Tensor<S>& tf) {
  require(tf.ndim() == 2, "expected a [T,F] plane");
  Tensor<S> out({1, 1, tf.dim(0), tf.dim(1)});
  std::copy(tf.data(), tf.data() + tf.numel(), out.data());
  return out;
}

template <typename S>
Tensor<S> as_plane(const Tensor<S>& b1tf) {
  require(b1tf.ndim() == 4 && b1tf.dim(0) == 1 && b1tf.dim(1) == 1,
          "expected a [1,1,T,F] tensor");
  Tensor<S> out({b1tf.dim(2), b1tf.dim(3)});
  std::copy(b1tf.data(), b1tf.data() + b1tf.numel(), out.data());
  return out;
}

// Waveform-level enhancement: stft -> stage 1 -> couple -> stage 2 -> istft.
// stage1_only reconstructs from the coarse magnitude and noisy phase.
template <typename S>
Waveform cts_enhance(const Model<S>& model, const Waveform& noisy,
                     bool stage1_only = false) {
  if (noisy.sample_rate != kSampleRate)
    throw ConfigError("enhance requires 16 kHz mono input, got " +
                      std::to_string(noisy.sample_rate) + " Hz");
  auto spec = stft<S>(noisy);
  auto mp = to_mag_phase(spec);
  NoGradGuard<S> ng;
  CtsOutput<S> out;
  {
    Tensor<S> mag = as_batch_plane(mp.mag);
    Tensor<S> re = as_batch_plane(spec.real);
    Tensor<S> im = as_batch_plane(spec.imag);
    out = model.forward(mag, re, im);
  }
  ComplexSpectrogram<S> est;
  if (stage1_only || !model.csr) {
    est = couple(as_plane(out.coarse_mag), mp.phase);
  } else {
    est.real = as_plane(out.refined_r);
    est.imag = as_plane(out.refined_i);
  }
  return istft(est, noisy.size());
}

}  // namespace ctsnet
