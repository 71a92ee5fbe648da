#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mixr {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a named sub-stream, e.g. derive_seed(master, {iteration, sample}).
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix_seed(base);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Beta(alpha, alpha) via two gamma draws.
inline double sample_symmetric_beta(Rng& rng, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  double a = gamma(rng);
  double b = gamma(rng);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

}  // namespace mixr
