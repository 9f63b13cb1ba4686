#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace stagehand {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Hashes an ordered tuple of words into one 64-bit value. Used as a
/// counter-based generator: the draw for a given key never depends on how many
/// other draws happened before it.
constexpr std::uint64_t hash_words(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ull;
  for (std::uint64_t w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

/// Maps a 64-bit value to [0, 1) using its top 53 bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline double unit_draw(std::initializer_list<std::uint64_t> key) noexcept { return to_unit(hash_words(key)); }

}  // namespace stagehand
