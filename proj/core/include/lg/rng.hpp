#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace lg {

// Deterministic, implementation-independent random stream (splitmix64).
// Used instead of <random> engines/distributions so that generated datasets,
// masks and weight initializations are bit-stable across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (single value per call keeps streams simple).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Independent child stream; (seed, stream-id) pairs give per-scene
  // determinism regardless of processing order.
  Rng derive(uint64_t stream_id) const {
    Rng mix(state_ ^ 0xd1b54a32d192ed03ULL);
    mix.state_ += stream_id * 0x2545f4914f6cdd1dULL;
    uint64_t s = mix.next_u64();
    return Rng(s);
  }

  Rng derive(const std::string& tag) const { return derive(fnv1a64(tag)); }

  static uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  uint64_t state_;
};

}  // namespace lg
