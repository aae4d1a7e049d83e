#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace metricord {

// mt19937_64 output is fully specified by the C++ standard, but the
// distributions layered on top of it are not, so everything downstream of the
// raw engine is written out by hand here. A given seed therefore produces the
// same stream on every platform and compiler.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  // Each permutation replicate gets its own generator keyed on
  // (seed, replicate), so results do not depend on execution order or on how
  // replicates are split across threads.
  static DeterministicRng for_replicate(std::uint64_t seed, std::uint64_t replicate) {
    return DeterministicRng(splitmix64(seed ^ splitmix64(replicate + 1)));
  }

  std::uint64_t next() { return engine_(); }

  // Unbiased draw from [0, bound); rejection sampling instead of modulo so the
  // distribution is exact.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t x = engine_();
      if (x >= threshold) return x % bound;
    }
  }

  // Uniform on [0, 1) with 53 random bits.
  double unit_real() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates with our own index draws (std::shuffle is
// implementation-defined and would break cross-platform reproducibility).
template <typename T>
void deterministic_shuffle(std::vector<T>& v, DeterministicRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace metricord
