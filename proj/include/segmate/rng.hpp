#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace segmate {

// Deterministic RNG. std::mt19937 has a pinned sequence by the standard, but
// the std distributions do not, so uniform/normal are derived here by hand to
// keep streams bit-identical across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return gen_(); }

  // uniform in [0, 1) with 24 bits of mantissa
  double uniform() { return (gen_() >> 8) * (1.0 / 16777216.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(gen_() % static_cast<std::uint32_t>(hi - lo + 1));
  }

  // Box-Muller; consumes two uniforms per pair, caches the second.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-12) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace segmate
