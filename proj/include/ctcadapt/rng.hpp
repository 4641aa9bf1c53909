// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ctcadapt {

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream per (seed, label): results do not depend on the order
// in which streams are created.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view label) {
  const std::uint64_t tag = fnv1a64(label);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace ctcadapt
