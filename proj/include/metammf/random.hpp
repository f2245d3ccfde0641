#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metammf {

using Rng = std::mt19937_64;

// Independent generator for one named purpose ("init", "sampling", "split",
// ...) derived from a run seed, so each consumer is reproducible on its own.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return Rng(z);
}

// Uniform integer in [0, n) without the modulo bias of rng() % n.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace metammf
