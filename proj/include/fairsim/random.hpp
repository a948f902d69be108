#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fairsim {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
  return splitmix64(seed ^ splitmix64(a + 0x632BE59BD9B4E019ULL));
}

inline constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                                        std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

/// Uniform in [0, 1) with 53 bits of precision.
inline constexpr double hash_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

/// Orders `rows` by a per-row hash key. The result depends only on the set
/// of rows and the key seed, not on the input order or on which role the
/// set plays elsewhere.
inline std::vector<std::size_t> hash_shuffle(std::span<const std::size_t> rows,
                                             std::uint64_t key_seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(rows.size());
  for (std::size_t r : rows) keyed.emplace_back(mix_seed(key_seed, r), r);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> out;
  out.reserve(keyed.size());
  for (const auto& kv : keyed) out.push_back(kv.second);
  return out;
}

}  // namespace fairsim
