#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cvrt {

// Deterministic random source. Only the raw mt19937_64 stream is
// standardized, so uniform/gaussian/bounded draws are derived here by hand
// instead of through std distributions (whose output is
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
  uint64_t below(uint64_t n) { return gen_() % n; }

  // Standard normal via Box-Muller, one cached value.
  double gaussian();

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) {
      const size_t j = below(i);
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_{false};
  double spare_{0.0};
};

}  // namespace cvrt
