#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mnar::rng {

// Counter-based generation: every draw is a pure function of
// (seed, stream, counter). Parallel consumers own disjoint streams, so results
// are bit-identical no matter how work is scheduled.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t counter) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

// uniform on (0,1); 53-bit resolution, never exactly 0 or 1
inline double uniform(std::uint64_t seed, std::uint64_t stream,
                      std::uint64_t counter) {
  return (static_cast<double>(mix(seed, stream, counter) >> 11) + 0.5) *
         (1.0 / 9007199254740992.0);
}

// standard normal from the uniforms at counters c and c+1 (Box-Muller);
// hand-rolled so results do not depend on any library's normal algorithm
inline double normal(std::uint64_t seed, std::uint64_t stream,
                     std::uint64_t counter) {
  const double u1 = uniform(seed, stream, counter);
  const double u2 = uniform(seed, stream, counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mnar::rng
