#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace deepcc {

using Rng = std::mt19937_64;

// Independent generator for a named purpose ("trace", "noise", "init", ...)
// derived from one user seed. Changing how one component draws numbers never
// perturbs another component's stream.
inline Rng make_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace deepcc
