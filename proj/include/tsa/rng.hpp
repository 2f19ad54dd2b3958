#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace tsa {

using Rng = std::mt19937_64;

/// Named sub-seed of a root seed, so dataset, init and shuffle streams can be
/// varied independently from one --seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t index) {
  return derive_seed(derive_seed(root, name), std::to_string(index));
}

}  // namespace tsa
