#pragma once

// Seeded randomness keyed by (seed, item, stream) so that per-item draws do
// not depend on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <random>

namespace act::rng {

enum class Stream : std::uint64_t {
  annotate = 1,
  criticize = 2,
  indicator = 3,
  tie_break = 4,
  resample = 5,
  generator = 6,
  budget_grid = 7,
};

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t key,
                               std::uint64_t salt = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ key) ^ (salt * 0xd1342543de82ef95ULL));
}

inline Engine engine(std::uint64_t seed, std::uint64_t key, Stream stream) {
  return Engine(derive(seed, key, static_cast<std::uint64_t>(stream)));
}

/// Uniform in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Engine& eng, double p) { return uniform01(eng) < p; }

/// Uniform integer in [0, n) by rejection, platform-independent.
inline std::uint64_t below(Engine& eng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = eng();
  while (x >= limit) x = eng();
  return x % n;
}

inline double beta(Engine& eng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(eng);
  const double y = gb(eng);
  if (x + y == 0.0) return a >= b ? 1.0 : 0.0;
  return x / (x + y);
}

inline double normal(Engine& eng) {
  // Box-Muller keeps the draw sequence independent of libstdc++ internals.
  double u1 = uniform01(eng);
  while (u1 <= 0.0) u1 = uniform01(eng);
  const double u2 = uniform01(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace act::rng
