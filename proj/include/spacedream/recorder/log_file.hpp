#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/checksum.hpp"
#include "spacedream/common/clock.hpp"
#include "spacedream/common/error.hpp"
#include "spacedream/common/files.hpp"

namespace spacedream::rec {

// File layout
//   header : "SDLG" | u8 version | u32 boot generation | str16 topic | i64 opened (ns)
//   record : u32 n | n bytes body | u32 crc32(body)
//            body = u64 seq | i64 stamp (ns) | str16 topic | payload
//   footer : "SDLF" | u32 record count | u32 crc32(all bytes before the footer)
//
// The active file carries a ".partial" suffix and is renamed once the footer is written.

enum class RecorderErrc { StorageFull, BadLog, Io };
using RecorderError = Error<RecorderErrc>;

inline constexpr std::uint8_t kLogVersion = 1;
inline constexpr std::size_t kFooterSize = 12;
inline constexpr std::size_t kMinRecordBody = 8 + 8 + 2;
inline constexpr std::uint32_t kMaxRecordBody = 16u << 20;
inline constexpr const char* kLogExtension = ".sdlg";
inline constexpr const char* kPartialSuffix = ".partial";

struct LogHeader {
  std::uint32_t boot_generation = 0;
  std::string topic;
  TimePoint opened{};
  bool operator==(const LogHeader&) const = default;
};

struct LogRecord {
  std::uint64_t seq = 0;
  TimePoint stamp{};
  std::string topic;
  Bytes payload;
  bool operator==(const LogRecord&) const = default;
};

inline Bytes encode_header(const LogHeader& h) {
  ByteWriter w;
  w.raw(std::string_view("SDLG")).u8(kLogVersion).u32(h.boot_generation).str16(h.topic).i64(h.opened.time_since_epoch().count());
  return std::move(w).take();
}

inline Bytes encode_record(const LogRecord& r) {
  ByteWriter body;
  body.u64(r.seq).i64(r.stamp.time_since_epoch().count()).str16(r.topic).raw(r.payload);
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(body.size())).raw(body.bytes()).u32(crc32(body.bytes()));
  return std::move(w).take();
}

inline Bytes encode_footer(std::uint32_t count, std::uint32_t crc) {
  return ByteWriter().raw(std::string_view("SDLF")).u32(count).u32(crc).bytes();
}

struct LogContents {
  LogHeader header;
  std::vector<LogRecord> records;
  bool footer_present = false;
  bool footer_valid = false;    // count and checksum match
  std::size_t skipped_bytes = 0;  // bytes that did not parse as records (holes, truncation)
};

/// Parses a log file. Damaged regions (zero-filled holes, a truncated tail) are
/// skipped; every record whose checksum validates is returned.
inline LogContents parse_log(ByteView data) {
  LogContents out;
  std::size_t pos = 0;
  try {
    ByteReader r(data);
    if (as_string(r.raw(4)) != "SDLG") throw RecorderError(RecorderErrc::BadLog, "not a log file");
    if (r.u8() != kLogVersion) throw RecorderError(RecorderErrc::BadLog, "unsupported log version");
    out.header.boot_generation = r.u32();
    out.header.topic = r.str16();
    out.header.opened = TimePoint{Duration{r.i64()}};
    pos = r.position();
  } catch (const DecodeError&) {
    throw RecorderError(RecorderErrc::BadLog, "truncated log header");
  }

  auto u32_at = [&](std::size_t p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{data[p + i]} << (8 * i);
    return v;
  };

  while (pos < data.size()) {
    const std::size_t left = data.size() - pos;
    if (left == kFooterSize && as_string(data.subspan(pos, 4)) == "SDLF") {
      out.footer_present = true;
      out.footer_valid = u32_at(pos + 4) == out.records.size() && u32_at(pos + 8) == crc32(data.first(pos)) &&
                         out.skipped_bytes == 0;
      break;
    }
    if (left >= 8) {
      const std::uint32_t n = u32_at(pos);
      if (n >= kMinRecordBody && n <= kMaxRecordBody && n + 8 <= left) {
        auto body = data.subspan(pos + 4, n);
        if (crc32(body) == u32_at(pos + 4 + n)) {
          ByteReader br(body);
          LogRecord rec;
          rec.seq = br.u64();
          rec.stamp = TimePoint{Duration{br.i64()}};
          try {
            rec.topic = br.str16();
            auto p = br.rest();
            rec.payload.assign(p.begin(), p.end());
            out.records.push_back(std::move(rec));
            pos += 8 + n;
            continue;
          } catch (const DecodeError&) {
          }
        }
      }
    }
    ++pos;
    ++out.skipped_bytes;
  }
  return out;
}

inline LogContents read_log(const fs::path& path) { return parse_log(read_file(path)); }

/// Appends records to `<final>.partial`; close() writes the footer and renames.
class LogWriter {
 public:
  LogWriter(fs::path final_path, const LogHeader& header) : final_(std::move(final_path)) {
    partial_ = final_;
    partial_ += kPartialSuffix;
    fs::create_directories(final_.parent_path());
    out_.open(partial_, std::ios::binary | std::ios::trunc);
    if (!out_) throw RecorderError(RecorderErrc::Io, "cannot create " + partial_.string());
    write(encode_header(header));
  }

  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;
  ~LogWriter() {
    if (out_.is_open()) out_.close();  // left as .partial; recovered at next start
  }

  void append(const LogRecord& r) {
    write(encode_record(r));
    ++count_;
  }

  std::size_t size() const { return size_; }
  std::uint32_t count() const { return count_; }
  const fs::path& final_path() const { return final_; }

  /// Writes the footer and publishes the file under its final name.
  fs::path close() {
    auto footer = encode_footer(count_, crc_);
    out_.write(reinterpret_cast<const char*>(footer.data()), static_cast<std::streamsize>(footer.size()));
    out_.close();
    if (!out_) throw RecorderError(RecorderErrc::Io, "cannot finish " + partial_.string());
    fs::rename(partial_, final_);
    return final_;
  }

 private:
  void write(const Bytes& b) {
    out_.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    out_.flush();
    if (!out_) throw RecorderError(RecorderErrc::Io, "write failed on " + partial_.string());
    crc_ = crc32(b, crc_);
    size_ += b.size();
  }

  fs::path final_, partial_;
  std::ofstream out_;
  std::size_t size_ = 0;
  std::uint32_t count_ = 0;
  std::uint32_t crc_ = 0;
};

/// Finishes a log left behind as ".partial" by a crash or reboot: keeps every
/// valid record, writes a footer and renames. Returns the number of records kept.
inline std::size_t recover_partial(const fs::path& partial) {
  auto name = partial.string();
  if (!name.ends_with(kPartialSuffix)) throw RecorderError(RecorderErrc::BadLog, "not a partial log: " + name);
  fs::path final_path = name.substr(0, name.size() - std::string_view(kPartialSuffix).size());
  LogContents c;
  try {
    c = read_log(partial);
  } catch (const RecorderError&) {
    fs::remove(partial);  // header never made it to disk
    return 0;
  }
  Bytes out = encode_header(c.header);
  for (const auto& r : c.records) {
    auto b = encode_record(r);
    out.insert(out.end(), b.begin(), b.end());
  }
  auto footer = encode_footer(static_cast<std::uint32_t>(c.records.size()), crc32(out));
  out.insert(out.end(), footer.begin(), footer.end());
  write_file_atomic(final_path, out);
  fs::remove(partial);
  return c.records.size();
}

/// Recovers every partial log below `root`.
inline std::size_t recover_partials(const fs::path& root) {
  std::size_t files = 0;
  if (!fs::exists(root)) return 0;
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().string().ends_with(std::string(kLogExtension) + kPartialSuffix))
      found.push_back(e.path());
  for (const auto& p : found) {
    recover_partial(p);
    ++files;
  }
  return files;
}

}  // namespace spacedream::rec
