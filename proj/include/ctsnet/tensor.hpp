#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "ctsnet/common.hpp"
#include "ctsnet/rng.hpp"

namespace ctsnet {

// Dense tensor with shared storage. Copies alias the same buffer, so handing
// a Tensor to the tape or a module is cheap; ops never mutate their inputs.
// Gradient buffer lives next to the values and is allocated on first use.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : st_(std::make_shared<Storage>()) {
    st_->shape = std::move(shape);
    st_->values.assign(size_t(shape_numel(st_->shape)), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor from(Shape shape, std::vector<S> values) {
    require(shape_numel(shape) == int64_t(values.size()),
            "tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = std::move(shape);
    t.st_->values = std::move(values);
    return t;
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi) {
    Tensor t(std::move(shape));
    for (S& v : t.st_->values) v = S(rng.uniform(double(lo), double(hi)));
    return t;
  }

  bool defined() const { return bool(st_); }
  const Shape& shape() const { return st_->shape; }
  int64_t ndim() const { return int64_t(st_->shape.size()); }
  int64_t dim(int i) const { return st_->shape[size_t(i)]; }
  int64_t numel() const { return int64_t(st_->values.size()); }

  S* data() const { return st_->values.data(); }
  const std::vector<S>& values() const { return st_->values; }
  std::vector<S>& values() { return st_->values; }

  S item() const {
    require(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return st_->values[0];
  }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  void set_requires_grad(bool b) const { st_->requires_grad = b; }

  bool has_grad() const { return st_ && !st_->grad.empty(); }

  // Allocates (zero-filled) on first access.
  S* grad() const {
    if (st_->grad.empty()) st_->grad.assign(st_->values.size(), S(0));
    return st_->grad.data();
  }

  const std::vector<S>& grad_values() const {
    grad();
    return st_->grad;
  }

  void zero_grad() const {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), S(0));
  }

  Tensor clone() const {
    Tensor t;
    t.st_ = std::make_shared<Storage>();
    t.st_->shape = st_->shape;
    t.st_->values = st_->values;
    return t;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

  // Flat index for the fixed (batch, channel, time, frequency) layout.
  int64_t index4(int64_t b, int64_t c, int64_t t, int64_t f) const {
    const Shape& s = st_->shape;
    return ((b * s[1] + c) * s[2] + t) * s[3] + f;
  }

  bool all_finite() const {
    for (S v : st_->values)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> st_;
};

// Reverse-mode tape. Ops append a backward closure while a tape is active on
// the current thread; backward() replays them in reverse. Execution order is
// a topological order of the graph, fan-out accumulates additively because
// closures += into shared grad buffers.
template <typename S>
class Tape {
 public:
  Tape() : prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::function<void()> backfn) {
    nodes_.push_back(std::move(backfn));
  }

  size_t size() const { return nodes_.size(); }

  void backward(const Tensor<S>& loss) {
    require(loss.numel() == 1,
            "backward() requires a scalar loss, got " + shape_str(loss.shape()));
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  static thread_local Tape* current_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

// Suppresses recording (model evaluation inside a training loop).
template <typename S>
class NoGradGuard {
 public:
  NoGradGuard() { ++depth_; }
  ~NoGradGuard() { --depth_; }
  NoGradGuard(const NoGradGuard&) = delete;

  static bool grad_enabled() { return depth_ == 0; }

 private:
  static thread_local int depth_;
};

template <typename S>
thread_local int NoGradGuard<S>::depth_ = 0;

template <typename S>
inline bool grad_wanted(const Tensor<S>& a) {
  return Tape<S>::current() && NoGradGuard<S>::grad_enabled() && a.requires_grad();
}

template <typename S>
inline bool grad_wanted(const Tensor<S>& a, const Tensor<S>& b) {
  return Tape<S>::current() && NoGradGuard<S>::grad_enabled() &&
         (a.requires_grad() || b.requires_grad());
}

}  // namespace ctsnet
