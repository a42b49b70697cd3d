#pragma once

// Building blocks: the original TCM, the gated MG-TCM, the dual-domain
// DMG-TCM, smoothed dilated convolution, and the encoder/decoder convolution
// blocks. All temporal convolutions are causal; normalization is cumulative
// so the causality of the whole stack is mechanical, not statistical.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ctsnet/normalization.hpp"
#include "ctsnet/ops.hpp"
#include "ctsnet/params.hpp"

namespace ctsnet {

// Per-layer time reach used by receptive-field analysis: output frame t
// depends on input frames [t - past, t + future].
struct TimeLayer {
  std::string name;
  int64_t past = 0;
  int64_t future = 0;
};

// Named intermediate outputs, used by the causality probe to point at the
// first offending layer.
template <typename S>
struct ActivationTrace {
  std::vector<std::pair<std::string, Tensor<S>>> taps;
  void tap(const std::string& name, const Tensor<S>& t) {
    taps.emplace_back(name, t);
  }
};

template <typename S>
inline void trace_tap(ActivationTrace<S>* tr, const std::string& name,
                      const Tensor<S>& t) {
  if (tr) tr->tap(name, t);
}

enum class TcmVariant { original, gated, dual_gated };

inline const char* tcm_variant_name(TcmVariant v) {
  switch (v) {
    case TcmVariant::original: return "O-TCM";
    case TcmVariant::gated: return "MG-TCM";
    default: return "DMG-TCM";
  }
}

// One TCM at group position r. Dilation in the primal domain is 2^r; the
// dual domain (dual_gated only) runs at 2^(M-r).
struct TcmConfig {
  TcmVariant variant = TcmVariant::gated;
  int64_t channels_io = 256;
  int64_t bottleneck = 64;  // original variant uses 2 * channels_io instead
  int64_t kernel_t = 5;     // original variant uses 3
  int64_t r = 0;            // group position, 0..M
  int64_t M = 5;
  bool gate_weight_sharing = false;
  bool smoothed = false;

  int64_t dilation() const { return int64_t(1) << r; }
  int64_t dual_dilation() const { return int64_t(1) << (M - r); }

  static TcmConfig at_position(TcmVariant v, int64_t r, int64_t channels_io = 256,
                               int64_t M = 5) {
    TcmConfig c;
    c.variant = v;
    c.r = r;
    c.M = M;
    c.channels_io = channels_io;
    c.bottleneck =
        v == TcmVariant::original ? 2 * channels_io : channels_io / 4;
    c.kernel_t = v == TcmVariant::original ? 3 : 5;
    return c;
  }
};

namespace blockdetail {

template <typename S>
struct NormAct {
  Tensor<S> gain, bias, slope;

  NormAct() = default;
  NormAct(ParamRegistry<S>& reg, const std::string& prefix, int64_t ch) {
    gain = reg.add(prefix + ".norm.gain", Tensor<S>({ch}, S(1)),
                   ParamKind::norm_gain);
    bias = reg.add(prefix + ".norm.bias", Tensor<S>({ch}, S(0)),
                   ParamKind::norm_bias);
    slope = reg.add(prefix + ".prelu", Tensor<S>({ch}, S(0.2)),
                    ParamKind::prelu_slope);
  }

  Tensor<S> norm(const Tensor<S>& x) const {
    return cumulative_norm(x, gain, bias);
  }
  Tensor<S> operator()(const Tensor<S>& x) const {
    return prelu(norm(x), slope);
  }
};

// Main/gate pair of one domain: 1x1 channel squeeze, pre-activation, dilated
// k5 convolution, then PReLU (main) and sigmoid (gate) on the post-norm
// features. With gate_weight_sharing the gate reuses the main computation and
// only the final activation differs.
template <typename S>
struct GatedBranch {
  TcmConfig cfg;
  int64_t dil = 1;
  Tensor<S> in_main, dconv_main, smooth_main;
  Tensor<S> in_gate, dconv_gate, smooth_gate;
  NormAct<S> pre_main, pre_gate;
  Tensor<S> post_gain_m, post_bias_m, post_slope_m;
  Tensor<S> post_gain_g, post_bias_g;

  GatedBranch(ParamRegistry<S>& reg, const std::string& p, const TcmConfig& c,
              int64_t dilation, Rng& rng)
      : cfg(c), dil(dilation) {
    const int64_t cio = c.channels_io, cb = c.bottleneck, kt = c.kernel_t;
    in_main = reg.add(p + ".main.in.weight",
                      init_uniform<S>({cb, cio, 1, 1}, cio, rng),
                      ParamKind::conv_weight);
    pre_main = NormAct<S>(reg, p + ".main.pre", cb);
    if (c.smoothed)
      smooth_main = reg.add(p + ".main.smooth", impulse_kernel(2 * dil - 1),
                            ParamKind::smooth_kernel);
    dconv_main = reg.add(p + ".main.dconv.weight",
                         init_uniform<S>({cb, cb, kt, 1}, cb * kt, rng),
                         ParamKind::conv_weight);
    post_gain_m = reg.add(p + ".main.post.norm.gain", Tensor<S>({cb}, S(1)),
                          ParamKind::norm_gain);
    post_bias_m = reg.add(p + ".main.post.norm.bias", Tensor<S>({cb}, S(0)),
                          ParamKind::norm_bias);
    post_slope_m = reg.add(p + ".main.post.prelu", Tensor<S>({cb}, S(0.2)),
                           ParamKind::prelu_slope);
    if (!c.gate_weight_sharing) {
      in_gate = reg.add(p + ".gate.in.weight",
                        init_uniform<S>({cb, cio, 1, 1}, cio, rng),
                        ParamKind::conv_weight);
      pre_gate = NormAct<S>(reg, p + ".gate.pre", cb);
      if (c.smoothed)
        smooth_gate = reg.add(p + ".gate.smooth", impulse_kernel(2 * dil - 1),
                              ParamKind::smooth_kernel);
      dconv_gate = reg.add(p + ".gate.dconv.weight",
                           init_uniform<S>({cb, cb, kt, 1}, cb * kt, rng),
                           ParamKind::conv_weight);
      post_gain_g = reg.add(p + ".gate.post.norm.gain", Tensor<S>({cb}, S(1)),
                            ParamKind::norm_gain);
      post_bias_g = reg.add(p + ".gate.post.norm.bias", Tensor<S>({cb}, S(0)),
                            ParamKind::norm_bias);
    }
  }

  // Unit impulse at the newest tap: smoothing starts out as the identity.
  static Tensor<S> impulse_kernel(int64_t len) {
    Tensor<S> k({len});
    k.data()[len - 1] = S(1);
    return k;
  }

  Tensor<S> trunk(const Tensor<S>& x, const Tensor<S>& in_w,
                  const NormAct<S>& pre, const Tensor<S>& smooth_k,
                  const Tensor<S>& dconv_w) const {
    Tensor<S> h = conv2d(x, in_w, ConvSpec{});
    h = pre(h);
    if (cfg.smoothed) h = shared_smooth(h, smooth_k);
    return conv2d(h, dconv_w, ConvSpec::causal(cfg.kernel_t, dil));
  }

  // Returns main (x) gate at bottleneck width.
  Tensor<S> forward(const Tensor<S>& x) const {
    const Tensor<S> zm = cumulative_norm(
        trunk(x, in_main, pre_main, smooth_main, dconv_main), post_gain_m,
        post_bias_m);
    const Tensor<S> main = prelu(zm, post_slope_m);
    Tensor<S> gate;
    if (cfg.gate_weight_sharing) {
      gate = sigmoid(zm);
    } else {
      const Tensor<S> zg = cumulative_norm(
          trunk(x, in_gate, pre_gate, smooth_gate, dconv_gate), post_gain_g,
          post_bias_g);
      gate = sigmoid(zg);
    }
    return mul(main, gate);
  }

  int64_t time_reach() const {
    return (cfg.kernel_t - 1) * dil + (cfg.smoothed ? 2 * dil - 2 : 0);
  }
};

}  // namespace blockdetail

// Temporal convolution module, all three variants. Input and output are
// [B, channels_io, T, 1]; the residual connection makes a zero-parameter
// branch the identity.
template <typename S>
class Tcm {
 public:
  Tcm(ParamRegistry<S>& reg, const std::string& prefix, const TcmConfig& cfg,
      Rng& rng, std::vector<TimeLayer>* layers = nullptr)
      : cfg_(cfg), name_(prefix) {
    const int64_t cio = cfg.channels_io;
    if (cfg.variant == TcmVariant::original) {
      const int64_t cb = cfg.bottleneck;
      in_w_ = reg.add(prefix + ".in.weight",
                      init_uniform<S>({cb, cio, 1, 1}, cio, rng),
                      ParamKind::conv_weight);
      act1_ = blockdetail::NormAct<S>(reg, prefix + ".pre", cb);
      if (cfg.smoothed)
        smooth_ = reg.add(prefix + ".smooth",
                          blockdetail::GatedBranch<S>::impulse_kernel(
                              2 * cfg.dilation() - 1),
                          ParamKind::smooth_kernel);
      dd_w_ = reg.add(prefix + ".ddconv.weight",
                      init_uniform<S>({cb, 1, cfg.kernel_t, 1}, cfg.kernel_t, rng),
                      ParamKind::conv_weight);
      act2_ = blockdetail::NormAct<S>(reg, prefix + ".post", cb);
      out_w_ = reg.add(prefix + ".out.weight",
                       init_uniform<S>({cio, cb, 1, 1}, cb, rng),
                       ParamKind::conv_weight);
    } else {
      primal_ = std::make_unique<blockdetail::GatedBranch<S>>(
          reg, prefix + ".primal", cfg, cfg.dilation(), rng);
      int64_t merged = cfg.bottleneck;
      if (cfg.variant == TcmVariant::dual_gated) {
        dual_ = std::make_unique<blockdetail::GatedBranch<S>>(
            reg, prefix + ".dual", cfg, cfg.dual_dilation(), rng);
        merged *= 2;
      }
      out_w_ = reg.add(prefix + ".out.weight",
                       init_uniform<S>({cio, merged, 1, 1}, merged, rng),
                       ParamKind::conv_weight);
    }
    if (layers) layers->push_back({prefix, past_reach(), 0});
  }

  Tensor<S> forward(const Tensor<S>& x, ActivationTrace<S>* tr = nullptr) const {
    require(x.ndim() == 4 && x.dim(1) == cfg_.channels_io,
            name_ + ": expected " + std::to_string(cfg_.channels_io) +
                " channels, got input " + shape_str(x.shape()));
    Tensor<S> branch;
    if (cfg_.variant == TcmVariant::original) {
      Tensor<S> h = conv2d(x, in_w_, ConvSpec{});
      h = act1_(h);
      if (cfg_.smoothed) h = shared_smooth(h, smooth_);
      ConvSpec sp = ConvSpec::causal(cfg_.kernel_t, cfg_.dilation());
      sp.groups = cfg_.bottleneck;
      h = conv2d(h, dd_w_, sp);
      h = act2_(h);
      branch = conv2d(h, out_w_, ConvSpec{});
    } else {
      Tensor<S> merged = primal_->forward(x);
      if (dual_) merged = concat_channels(merged, dual_->forward(x));
      branch = conv2d(merged, out_w_, ConvSpec{});
    }
    Tensor<S> y = add(x, branch);
    trace_tap(tr, name_, y);
    return y;
  }

  // Frames of past context this block adds on top of its input.
  int64_t past_reach() const {
    if (cfg_.variant == TcmVariant::original)
      return (cfg_.kernel_t - 1) * cfg_.dilation() +
             (cfg_.smoothed ? 2 * cfg_.dilation() - 2 : 0);
    int64_t reach = primal_->time_reach();
    if (dual_) reach = std::max(reach, dual_->time_reach());
    return reach;
  }

  const TcmConfig& config() const { return cfg_; }

 private:
  TcmConfig cfg_;
  std::string name_;
  // original variant
  Tensor<S> in_w_, dd_w_, out_w_, smooth_;
  blockdetail::NormAct<S> act1_, act2_;
  // gated variants
  std::unique_ptr<blockdetail::GatedBranch<S>> primal_, dual_;
};

// A group of TCMs cycling dilations 1, 2, 4, ..., 2^M.
template <typename S>
class TcmGroup {
 public:
  TcmGroup(ParamRegistry<S>& reg, const std::string& prefix, TcmVariant v,
           int64_t channels_io, int64_t count, int64_t M, bool sharing,
           bool smoothed, Rng& rng, std::vector<TimeLayer>* layers = nullptr) {
    for (int64_t i = 0; i < count; ++i) {
      TcmConfig c = TcmConfig::at_position(v, i % (M + 1), channels_io, M);
      c.gate_weight_sharing = sharing;
      c.smoothed = smoothed;
      blocks_.push_back(std::make_unique<Tcm<S>>(
          reg, prefix + ".b" + std::to_string(i), c, rng, layers));
    }
  }

  Tensor<S> forward(Tensor<S> x, ActivationTrace<S>* tr = nullptr) const {
    for (const auto& b : blocks_) x = b->forward(x, tr);
    return x;
  }

  int64_t past_reach() const {
    int64_t p = 0;
    for (const auto& b : blocks_) p += b->past_reach();
    return p;
  }

  const std::vector<std::unique_ptr<Tcm<S>>>& blocks() const { return blocks_; }

 private:
  std::vector<std::unique_ptr<Tcm<S>>> blocks_;
};

// Encoder stage: causal (2, kf) convolution at stride (1, 2), valid in
// frequency, then cumulative norm and PReLU.
template <typename S>
class ConvBlock {
 public:
  ConvBlock(ParamRegistry<S>& reg, const std::string& prefix, int64_t cin,
            int64_t cout, int64_t kf, Rng& rng,
            std::vector<TimeLayer>* layers = nullptr)
      : name_(prefix) {
    weight_ = reg.add(prefix + ".conv.weight",
                      init_uniform<S>({cout, cin, 2, kf}, cin * 2 * kf, rng),
                      ParamKind::conv_weight);
    bias_ = reg.add(prefix + ".conv.bias", Tensor<S>({cout}, S(0)),
                    ParamKind::conv_bias);
    act_ = blockdetail::NormAct<S>(reg, prefix, cout);
    if (layers) layers->push_back({prefix, 1, 0});
  }

  Tensor<S> forward(const Tensor<S>& x, ActivationTrace<S>* tr = nullptr) const {
    ConvSpec sp = ConvSpec::causal(2, 1, /*stride_f=*/2);
    Tensor<S> y = add_channel_bias(conv2d(x, weight_, sp), bias_);
    y = act_(y);
    trace_tap(tr, name_, y);
    return y;
  }

  static int64_t out_freq(int64_t f, int64_t kf) { return (f - kf) / 2 + 1; }

 private:
  std::string name_;
  Tensor<S> weight_, bias_;
  blockdetail::NormAct<S> act_;
};

// Decoder stage: causal transposed convolution at stride (1, 2) exactly
// mirroring an encoder stage in frequency. The last stage omits norm and
// PReLU; the network applies its own output activation.
template <typename S>
class DeconvBlock {
 public:
  DeconvBlock(ParamRegistry<S>& reg, const std::string& prefix, int64_t cin,
              int64_t cout, int64_t kf, bool last, Rng& rng,
              std::vector<TimeLayer>* layers = nullptr)
      : name_(prefix), last_(last) {
    weight_ = reg.add(prefix + ".deconv.weight",
                      init_uniform<S>({cin, cout, 2, kf}, cin * 2 * kf, rng),
                      ParamKind::conv_weight);
    bias_ = reg.add(prefix + ".deconv.bias", Tensor<S>({cout}, S(0)),
                    ParamKind::conv_bias);
    if (!last) act_ = blockdetail::NormAct<S>(reg, prefix, cout);
    if (layers) layers->push_back({prefix, 1, 0});
  }

  Tensor<S> forward(const Tensor<S>& x, ActivationTrace<S>* tr = nullptr) const {
    ConvSpec sp;
    sp.stride_f = 2;
    sp.pad_t_right = 1;  // trim the trailing frame: keeps time extent, causal
    Tensor<S> y = add_channel_bias(conv2d_transposed(x, weight_, sp), bias_);
    if (!last_) y = act_(y);
    trace_tap(tr, name_, y);
    return y;
  }

  static int64_t out_freq(int64_t f, int64_t kf) { return (f - 1) * 2 + kf; }

 private:
  std::string name_;
  bool last_;
  Tensor<S> weight_, bias_;
  blockdetail::NormAct<S> act_;
};

// Smoothed dilated convolution as a free function: the separable-shared
// pre-filter followed by a plain dilated convolution. The blocks above use
// the same two ops inline; this form exists for direct use and testing.
template <typename S>
Tensor<S> sd_conv(const Tensor<S>& x, const Tensor<S>& smooth_kernel,
                  const Tensor<S>& conv_kernel, int64_t dilation) {
  require(smooth_kernel.ndim() == 1 &&
              smooth_kernel.dim(0) == 2 * dilation - 1,
          "sd_conv smoothing kernel must have length 2d-1 = " +
              std::to_string(2 * dilation - 1) + ", got " +
              shape_str(smooth_kernel.shape()));
  Tensor<S> h = shared_smooth(x, smooth_kernel);
  return conv2d(h, conv_kernel,
                ConvSpec::causal(conv_kernel.dim(2), dilation));
}

}  // namespace ctsnet
