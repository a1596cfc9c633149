#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace layoutdm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent subsystem seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive a child seed for a named subsystem ("corpus", "corruption", "sampling", ...)
/// so each can be replayed on its own from the root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix_seed(root ^ mix_seed(h));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return mix_seed(root + mix_seed(index + 0x632be59bd9b4e019ULL));
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Draw an index from unnormalized nonnegative weights.
template <typename Weights>
int sample_categorical(const Weights& weights, int count, double total, Rng& rng) {
  double u = uniform01(rng) * total;
  int last_positive = -1;
  for (int i = 0; i < count; ++i) {
    if (weights[i] <= 0) continue;
    last_positive = i;
    u -= weights[i];
    if (u < 0) return i;
  }
  return last_positive;
}

}  // namespace layoutdm
