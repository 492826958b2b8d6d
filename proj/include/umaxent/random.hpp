#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace umaxent {

// Seeded generator with portable draws: the standard distributions are
// implementation-defined, so uniform and normal variates are derived from
// raw mt19937_64 output here to keep seeded runs identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Index drawn with probability proportional to weights (which sum to ~1).
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cumulative += probs[i];
      if (u < cumulative) return i;
    }
    // Rounding left u above the total; fall back to the last positive entry.
    for (std::size_t i = probs.size(); i-- > 0;) {
      if (probs[i] > 0.0) return i;
    }
    return probs.size() - 1;
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace umaxent
