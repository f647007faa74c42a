#pragma once

#include <algorithm>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/checksum.hpp"
#include "spacedream/common/clock.hpp"
#include "spacedream/common/error.hpp"

namespace spacedream::sync {

enum class SyncErrc { EmptyFile, UnknownLength, ChannelClosed, RootMissing, BadConfig, BadFragment };
using SyncError = Error<SyncErrc>;

// Fragment (all integers little-endian):
//   "SDFR" | u8 version=1 | u8 kind | u64 file_id | u32 generation | u32 frag_index | u32 total_frags
//   | u16 payload_len | payload | u32 crc32 over every preceding byte of the fragment
// A packet is one or more fragments back to back.

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFragmentOverhead = 4 + 1 + 1 + 8 + 4 + 4 + 4 + 2 + 4;
inline constexpr std::size_t kDefaultFragmentSize = 1024;
inline constexpr std::size_t kDefaultPacketBudget = 1400;
inline constexpr std::size_t kMinFragmentSize = 64;
inline constexpr std::size_t kMaxFragmentSize = 65535;

enum class FragKind : std::uint8_t { Data = 0, Metadata = 1, HeaderCopy = 2 };

inline const char* to_string(FragKind k) {
  switch (k) {
    case FragKind::Data: return "data";
    case FragKind::Metadata: return "metadata";
    case FragKind::HeaderCopy: return "header_copy";
  }
  return "?";
}

struct TransferConfig {
  int priority = 0;
  int resend_count = 1;
  Duration min_resend_interval{};

  void validate() const {
    if (resend_count < 1) throw SyncError(SyncErrc::BadConfig, "resend_count must be >= 1");
    if (min_resend_interval < Duration::zero()) throw SyncError(SyncErrc::BadConfig, "min_resend_interval must be >= 0");
  }
  bool operator==(const TransferConfig&) const = default;
};

struct Fragment {
  std::uint64_t file_id = 0;
  std::uint32_t generation = 0;
  std::uint32_t frag_index = 0;
  std::uint32_t total_frags = 0;  // data fragments of the file
  FragKind kind = FragKind::Data;
  Bytes payload;
  bool operator==(const Fragment&) const = default;
};

inline Bytes encode_fragment(const Fragment& f) {
  if (f.payload.size() > kMaxFragmentSize) throw SyncError(SyncErrc::BadFragment, "payload too large");
  ByteWriter w;
  w.raw(std::string_view("SDFR")).u8(kWireVersion).u8(static_cast<std::uint8_t>(f.kind)).u64(f.file_id);
  w.u32(f.generation).u32(f.frag_index).u32(f.total_frags).u16(static_cast<std::uint16_t>(f.payload.size()));
  w.raw(f.payload);
  w.u32(crc32(w.bytes()));
  return std::move(w).take();
}

enum class DecodeStatus { Ok, NoMagic, Truncated, BadCrc, BadField };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::NoMagic;
  Fragment fragment;
  std::size_t consumed = 0;  // valid only for Ok
};

/// Decodes the fragment starting at data[0].
inline DecodeResult decode_fragment(ByteView data) {
  DecodeResult out;
  if (data.size() < 4 || as_string(data.first(4)) != "SDFR") return out;
  if (data.size() < kFragmentOverhead) return {DecodeStatus::Truncated, {}, 0};
  ByteReader r(data);
  r.raw(4);
  const auto version = r.u8();
  const auto kind = r.u8();
  Fragment f;
  f.file_id = r.u64();
  f.generation = r.u32();
  f.frag_index = r.u32();
  f.total_frags = r.u32();
  const std::size_t len = r.u16();
  const std::size_t total = kFragmentOverhead + len;
  if (data.size() < total) return {DecodeStatus::Truncated, {}, 0};
  std::uint32_t crc = 0;
  for (int i = 0; i < 4; ++i) crc |= std::uint32_t{data[total - 4 + i]} << (8 * i);
  if (crc32(data.first(total - 4)) != crc) return {DecodeStatus::BadCrc, {}, 0};
  if (version != kWireVersion || kind > 2) return {DecodeStatus::BadField, {}, 0};
  f.kind = static_cast<FragKind>(kind);
  if (f.kind == FragKind::Data && f.frag_index >= f.total_frags) return {DecodeStatus::BadField, {}, 0};
  auto p = data.subspan(kFragmentOverhead - 4, len);
  f.payload.assign(p.begin(), p.end());
  return {DecodeStatus::Ok, std::move(f), total};
}

// Metadata payload: u64 size | u32 file crc32 | u32 fragment_size | u64 version | str16 name
// `version` orders successive contents of the same name (newest wins at the receiver).

struct FileMeta {
  std::string name;
  std::uint64_t size = 0;
  std::uint32_t crc = 0;
  std::uint32_t fragment_size = 0;
  std::uint64_t version = 0;
  bool operator==(const FileMeta&) const = default;
};

inline Bytes encode_meta(const FileMeta& m) {
  ByteWriter w;
  w.u64(m.size).u32(m.crc).u32(m.fragment_size).u64(m.version).str16(m.name);
  return std::move(w).take();
}

inline std::optional<FileMeta> decode_meta(ByteView b) {
  try {
    ByteReader r(b);
    FileMeta m;
    m.size = r.u64();
    m.crc = r.u32();
    m.fragment_size = r.u32();
    m.version = r.u64();
    m.name = r.str16();
    if (m.fragment_size < kMinFragmentSize || m.fragment_size > kMaxFragmentSize || r.remaining() != 0) return std::nullopt;
    return m;
  } catch (const DecodeError&) {
    return std::nullopt;
  }
}

inline std::uint64_t data_fragment_count(std::uint64_t size, std::size_t fragment_size) {
  return (size + fragment_size - 1) / fragment_size;
}

/// 64-bit FNV-1a over the relative path followed by the file CRC (LE).
inline std::uint64_t make_file_id(std::string_view relpath, std::uint32_t file_crc) {
  auto h = fnv1a64(as_bytes(relpath));
  std::uint8_t c[4] = {static_cast<std::uint8_t>(file_crc), static_cast<std::uint8_t>(file_crc >> 8),
                       static_cast<std::uint8_t>(file_crc >> 16), static_cast<std::uint8_t>(file_crc >> 24)};
  return fnv1a64(ByteView(c, 4), h);
}

inline bool is_jpeg_name(std::string_view name) {
  auto dot = name.rfind('.');
  if (dot == std::string_view::npos) return false;
  std::string ext(name.substr(dot + 1));
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == "jpg" || ext == "jpeg";
}

/// A fragment together with the transfer parameters it is queued with.
struct OutgoingFragment {
  Fragment fragment;
  TransferConfig cfg;
};

/// Splits a file: data fragments, one metadata fragment and, for JPEG files, a
/// copy of data fragment 0. Metadata and the copy get priority+1 and resend_count+2.
inline std::vector<OutgoingFragment> fragment_file(std::string_view relpath, ByteView content, std::size_t fragment_size,
                                                   const TransferConfig& cfg, std::uint32_t generation,
                                                   std::uint64_t version = 0) {
  if (fragment_size < kMinFragmentSize || fragment_size > kMaxFragmentSize)
    throw SyncError(SyncErrc::BadConfig, "fragment_size must be in [64, 65535]");
  cfg.validate();
  const auto crc = crc32(content);
  const auto id = make_file_id(relpath, crc);
  const auto n = static_cast<std::uint32_t>(data_fragment_count(content.size(), fragment_size));
  TransferConfig elevated = cfg;
  elevated.priority = cfg.priority + 1;
  elevated.resend_count = cfg.resend_count + 2;

  std::vector<OutgoingFragment> out;
  out.reserve(n + 2);
  FileMeta meta{std::string(relpath), content.size(), crc, static_cast<std::uint32_t>(fragment_size), version};
  out.push_back({{id, generation, 0, n, FragKind::Metadata, encode_meta(meta)}, elevated});
  for (std::uint32_t i = 0; i < n; ++i) {
    auto chunk = content.subspan(i * fragment_size, std::min<std::size_t>(fragment_size, content.size() - i * fragment_size));
    out.push_back({{id, generation, i, n, FragKind::Data, Bytes(chunk.begin(), chunk.end())}, cfg});
  }
  if (n > 0 && is_jpeg_name(relpath)) {
    auto copy = out[1].fragment;
    copy.kind = FragKind::HeaderCopy;
    out.push_back({std::move(copy), elevated});
  }
  return out;
}

}  // namespace spacedream::sync
