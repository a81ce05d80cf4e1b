#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace graft {

// Deterministic RNG used for parameter init, dataset synthesis and batch
// sampling. The raw engine is mt19937_64, but all value transforms are done
// by hand so that streams are reproducible across standard libraries
// (std::uniform_real_distribution et al. are not portable bit-for-bit).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased enough for batch sampling; modulo bias is negligible for the
  // small ranges used here and keeps the stream layout simple.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller. Consumes exactly two uniforms per call; no cached spare, so
  // the stream position is a pure function of the call count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Standard normal rejected to |z| <= lim, then scaled by std.
  double trunc_normal(double stddev, double lim = 2.0) {
    double z = normal();
    while (z < -lim || z > lim) z = normal();
    return z * stddev;
  }

 private:
  std::mt19937_64 eng_;
};

namespace detail {
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

// Seed for a named stream. Parameters are initialized from streams keyed by
// their registry name, so a tensor shared between two model variants draws
// identical values regardless of what else either model allocates.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view name) {
  return detail::splitmix(seed ^ detail::splitmix(detail::fnv1a(name)));
}

}  // namespace graft
