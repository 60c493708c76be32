#pragma once

#include <cstdint>
#include <random>

namespace fasmap {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for a named pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t salt = 0) {
  return mix64(mix64(seed ^ mix64(stream)) + salt);
}

namespace stream {
inline constexpr std::uint64_t kObstacles = 1;
inline constexpr std::uint64_t kShadowing = 2;
inline constexpr std::uint64_t kSampling = 3;
inline constexpr std::uint64_t kNoise = 4;
}  // namespace stream

}  // namespace fasmap
