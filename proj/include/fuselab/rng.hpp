#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fuselab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for element `index` of a stream rooted at `master`.
inline std::uint64_t split_mix(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

// Independent generator per (seed, purpose) so adding a consumer in one place
// never shifts the numbers drawn somewhere else.
inline Rng named_stream(std::uint64_t seed, std::string_view name) {
  return Rng(split_mix(seed, fnv1a(name)));
}

inline float uniform(Rng &rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

} // namespace fuselab
