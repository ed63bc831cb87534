#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace femagents {

inline constexpr std::uint64_t kFnv64Offset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnv64Prime = 0x100000001b3ULL;

// FNV-1a, 64 bit. Stable across platforms; used for transcript digests,
// request fingerprints and per-trial seed derivation.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t state = kFnv64Offset) {
  for (unsigned char c : data) {
    state ^= c;
    state *= kFnv64Prime;
  }
  return state;
}

inline std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace femagents
