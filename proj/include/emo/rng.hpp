#pragma once

#include <cmath>
#include <cstdint>

namespace emo {

// Counter-based generator: every draw is a pure hash of (seed, stream, counter),
// so parallel streams are reproducible by index and the sequence is identical
// across platforms (no libc distributions involved).
class Rng {
 public:
  Rng() = default;
  Rng(uint64_t seed, uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream * 0x9E3779B97F4A7C15ull))) {}

  uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one value per call (second value discarded to keep draws
  // independent of call interleaving)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  uint64_t next_below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

 private:
  static uint64_t mix(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  uint64_t key_ = 0x853C49E6748FEA9Bull;
  uint64_t counter_ = 0;
};

}  // namespace emo
