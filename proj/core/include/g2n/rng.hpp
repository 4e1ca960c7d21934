#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace g2n {

// Deterministic splitmix64 generator. The full state is a single u64, which
// makes RNG streams trivial to checkpoint and restore bit-exactly. Normal
// draws use Box-Muller without caching the spare value, so every draw
// consumes a fixed number of raw steps.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; u clamped away from 0 so log() stays finite.
    double u = uniform();
    double v = uniform();
    if (u < 1e-300) u = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * v);
  }

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = i;
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = int64_t(below(uint64_t(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  // Derives an independent stream for a named purpose.
  Rng fork(uint64_t tag) {
    Rng r(state_ ^ (0xd1b54a32d192ed03ull * (tag + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

}  // namespace g2n
