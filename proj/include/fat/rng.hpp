#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <vector>

namespace fat {

// splitmix64 step: advances the state and returns a well-mixed 64-bit word.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_mix(uint64_t h, uint64_t v) {
  uint64_t s = h ^ (v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
  return splitmix64(s);
}

/// Stable stream id for a (seed, part0, part1, ...) tuple. All randomness in
/// the project flows from one seed through these named substreams, so results
/// never depend on call order or scheduling.
inline uint64_t substream_id(uint64_t seed, std::initializer_list<uint64_t> parts) {
  uint64_t s = seed;
  uint64_t h = splitmix64(s);
  for (uint64_t p : parts) h = hash_mix(h, p);
  return h;
}

// Substream tags. Arbitrary distinct constants.
inline constexpr uint64_t kStreamSilo = 0x53494C4FULL;      // per (silo, round) training
inline constexpr uint64_t kStreamData = 0x44415441ULL;      // per-silo dataset generation
inline constexpr uint64_t kStreamTest = 0x54455354ULL;      // test-set generation
inline constexpr uint64_t kStreamSource = 0x53524345ULL;    // pretraining source dataset
inline constexpr uint64_t kStreamInit = 0x494E4954ULL;      // model initialization
inline constexpr uint64_t kStreamCentral = 0x43454E54ULL;   // pooled central training
inline constexpr uint64_t kStreamPretrain = 0x50524554ULL;  // pretraining loop

/// Deterministic random stream (splitmix64 sequence). Hand-rolled so that
/// draws are pinned independent of the standard library implementation.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform double in [0, 1).
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    return (uint64_t)(((__uint128_t)next_u64() * n) >> 64);
  }

  /// Standard normal via Box-Muller (single sample, two draws).
  float normal() {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double u1 = 1.0 - next_unit();  // (0, 1]
    double u2 = next_unit();
    return float(std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2));
  }

  /// Fisher-Yates permutation of 0..n-1. Consumes n-1 draws.
  std::vector<int> shuffled_indices(int n) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[(size_t)i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = (int)next_below((uint64_t)i + 1);
      int t = idx[(size_t)i];
      idx[(size_t)i] = idx[(size_t)j];
      idx[(size_t)j] = t;
    }
    return idx;
  }

 private:
  uint64_t state_;
};

}  // namespace fat
