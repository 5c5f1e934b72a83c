#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace optree {

// splitmix64; all seeding in the project funnels through this so streams are
// decorrelated and platform-independent.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a) { return splitmix64(a); }

template <typename... Rest>
std::uint64_t mix64(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return mix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL), rest...);
}

// Counter-based generator with explicitly specified update; keeps every
// stochastic path bit-reproducible regardless of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_ ^ 0xd1b54a32d192ed03ULL);
    return state_;
  }

  // uniform in [0, 1)
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // uniform integer in [0, n)
  std::uint64_t next_index(std::uint64_t n) {
    // Lemire-style rejection-free enough for our n << 2^64
    return next_u64() % n;
  }

  // Box-Muller, one value per call (the spare is discarded for simplicity)
  double normal() {
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::vector<double> normal_vec(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = normal();
    return out;
  }

 private:
  std::uint64_t state_;
};

// FNV-1a over bytes, used for content hashes of configs and datasets.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace optree
