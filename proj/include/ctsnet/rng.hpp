#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ctsnet {

// splitmix64 generator. Self-contained so that seeded runs produce identical
// streams on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  double normal() {
    // Box-Muller; spare discarded to keep the stream position predictable.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Fisher-Yates, implementation-independent unlike std::shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream (per-parameter init, per-epoch chunking).
  Rng fork(uint64_t salt) {
    Rng r(state_ ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

}  // namespace ctsnet
