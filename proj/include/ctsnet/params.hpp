#pragma once

// Named parameter registry. Every trainable tensor of a model is registered
// exactly once, in construction order; the optimizer, the checkpoint codec
// and the parameter-count reports all walk this list.

#include <string>
#include <vector>

#include "ctsnet/rng.hpp"
#include "ctsnet/tensor.hpp"

namespace ctsnet {

enum class ParamKind {
  conv_weight,
  conv_bias,
  smooth_kernel,
  norm_gain,
  norm_bias,
  prelu_slope,
};

inline bool is_conv_param(ParamKind k) {
  return k == ParamKind::conv_weight || k == ParamKind::conv_bias ||
         k == ParamKind::smooth_kernel;
}

template <typename S>
struct ParamEntry {
  std::string name;
  Tensor<S> tensor;
  ParamKind kind;
};

template <typename S>
class ParamRegistry {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t, ParamKind kind) {
    for (const auto& e : entries_)
      require(e.name != name, "parameter registered twice: " + name);
    t.set_requires_grad(true);
    entries_.push_back({name, t, kind});
    return t;
  }

  const std::vector<ParamEntry<S>>& entries() const { return entries_; }
  std::vector<ParamEntry<S>>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

  const ParamEntry<S>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void zero_grad() const {
    for (const auto& e : entries_) e.tensor.zero_grad();
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }
};

// Uniform init in +-sqrt(1/fan_in), from the model's seeded stream.
template <typename S>
Tensor<S> init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / double(fan_in));
  return Tensor<S>::uniform(std::move(shape), rng, S(-bound), S(bound));
}

}  // namespace ctsnet
