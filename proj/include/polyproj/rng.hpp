#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace polyproj {

// Deterministic random helpers on top of std::mt19937_64. The distributions
// are hand-rolled because the standard library's are allowed to differ across
// implementations and every artifact here must be reproducible from a seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return std::ldexp(static_cast<double>(gen_() >> 11), -53); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    double t = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Unbiased integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound) {
    std::uint64_t threshold = (~bound + 1) % bound;
    for (;;) {
      std::uint64_t r = gen_();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace polyproj
