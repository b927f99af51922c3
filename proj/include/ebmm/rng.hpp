#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ebmm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded random stream. Substreams are derived from the root seed, not the
// current engine state, so two streams created with the same (seed, salt)
// agree regardless of how much the parent has been consumed. All draw paths
// are written out here (no distribution objects) to keep the byte-for-byte
// reproducibility contract independent of the standard library.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RngStream substream(std::uint64_t salt) const {
    return RngStream(splitmix64(seed_ ^ splitmix64(salt + 1)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n). Rejection keeps the distribution exact.
  int uniform_int(int n) {
    const std::uint64_t bound = ~0ull - ~0ull % static_cast<std::uint64_t>(n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return static_cast<int>(x % static_cast<std::uint64_t>(n));
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Standard Laplace (location 0, scale 1) by inverse CDF.
  double laplace() {
    const double u = uniform() - 0.5;
    const double a = std::abs(u);
    const double mag = -std::log1p(-2.0 * a);
    return u < 0 ? -mag : mag;
  }

  void fill_normal(double* dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] = normal();
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ebmm
