#pragma once

#include <cstdint>

namespace ganimorph {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the `stream`-th independent substream derived from `seed`.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return substream_seed(substream_seed(seed, a), b);
}

}  // namespace ganimorph
