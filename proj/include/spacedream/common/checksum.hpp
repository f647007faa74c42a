#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>

#include "spacedream/common/bytes.hpp"

namespace spacedream {

/// CRC-32 (IEEE 802.3 polynomial, reflected), as produced by zlib.
inline std::uint32_t crc32(ByteView data, std::uint32_t seed = 0) {
  uLong crc = seed;
  // zlib takes uInt lengths; chunk to stay within range on very large inputs.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < data.size(); off += kChunk) {
    auto n = std::min(kChunk, data.size() - off);
    crc = ::crc32(crc, data.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::uint64_t fnv1a64(ByteView data, std::uint64_t hash = 0xcbf29ce484222325ull) {
  for (auto b : data) {
    hash ^= b;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

}  // namespace spacedream
