#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <vector>

#include "spacedream/common/files.hpp"
#include "spacedream/datasync/fragment.hpp"

namespace spacedream::sync {

struct FileManifest {
  std::uint64_t file_id = 0;
  std::uint32_t generation = 0;
  bool meta_known = false;
  std::string name;
  std::uint64_t size = 0;
  std::uint32_t total_frags = 0;
  std::vector<bool> received;
  bool header_copy = false;
  bool complete = false;
  std::size_t holes = 0;
};

struct Reassembled {
  Bytes bytes;
  std::vector<std::uint32_t> holes;  // missing data fragment indices
  bool crc_ok = false;
  bool header_substituted = false;
};

struct RxStats {
  std::uint64_t packets = 0;
  std::uint64_t fragments = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t corrupt = 0;    // CRC failures
  std::uint64_t malformed = 0;  // CRC-valid but inconsistent fragments, stray bytes
  std::uint64_t files_written = 0;
};

/// Output path for a transferred file: <out>/<generation>/<name>. Names that
/// would escape the generation folder are replaced.
inline fs::path receive_path(const fs::path& out, std::uint32_t generation, std::string_view name, std::uint64_t file_id) {
  fs::path rel(std::string{name});
  bool ok = !name.empty() && rel.is_relative();
  for (const auto& part : rel)
    if (part == ".." || part == "." || part.empty()) ok = false;
  if (!ok) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "_unnamed/%016llx", static_cast<unsigned long long>(file_id));
    rel = buf;
  }
  return out / std::to_string(generation) / rel;
}

/// Collects fragments and merges them into files. Completed files are written
/// as soon as their last fragment arrives; finalize() writes the rest with holes.
class Receiver {
 public:
  explicit Receiver(std::optional<fs::path> out_dir = std::nullopt) : out_(std::move(out_dir)) {}

  void ingest_packet(ByteView packet) {
    std::lock_guard lock(mutex_);
    ++stats_.packets;
    std::size_t pos = 0;
    while (pos < packet.size()) {
      auto r = decode_fragment(packet.subspan(pos));
      if (r.status == DecodeStatus::Ok) {
        ++stats_.fragments;
        store(std::move(r.fragment));
        pos += r.consumed;
        continue;
      }
      if (r.status == DecodeStatus::BadCrc || r.status == DecodeStatus::Truncated) ++stats_.corrupt;
      else if (r.status == DecodeStatus::BadField) ++stats_.malformed;
      // resynchronise on the next magic
      auto next = find_magic(packet, pos + 1);
      if (r.status == DecodeStatus::NoMagic) ++stats_.malformed;
      pos = next;
    }
  }

  std::vector<FileManifest> manifests() const {
    std::lock_guard lock(mutex_);
    std::vector<FileManifest> out;
    for (const auto& [k, f] : files_) out.push_back(manifest(k, f));
    return out;
  }

  std::optional<FileManifest> manifest(std::uint32_t generation, std::uint64_t file_id) const {
    std::lock_guard lock(mutex_);
    auto it = files_.find({generation, file_id});
    if (it == files_.end()) return std::nullopt;
    return manifest(it->first, it->second);
  }

  Reassembled reassemble(std::uint32_t generation, std::uint64_t file_id) const {
    std::lock_guard lock(mutex_);
    auto it = files_.find({generation, file_id});
    if (it == files_.end() || !it->second.meta)
      throw SyncError(SyncErrc::UnknownLength, "no metadata for file " + std::to_string(file_id));
    return build(it->second);
  }

  /// Writes every file with known metadata that has not been written complete,
  /// zero-filling holes and leaving a `<name>.holes` report.
  void finalize() {
    std::lock_guard lock(mutex_);
    for (auto& [k, f] : files_)
      if (f.meta && !f.written_complete) write(k, f);
  }

  RxStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

 private:
  static constexpr std::uint32_t kMaxFragments = 1u << 24;
  using FileKey = std::pair<std::uint32_t, std::uint64_t>;  // generation, file id

  struct FileState {
    std::optional<FileMeta> meta;
    std::optional<std::uint32_t> total;
    std::map<std::uint32_t, Bytes> data;
    std::optional<Bytes> header_copy;
    bool written_complete = false;
  };

  static std::size_t find_magic(ByteView b, std::size_t from) {
    for (std::size_t i = from; i + 4 <= b.size(); ++i)
      if (b[i] == 'S' && b[i + 1] == 'D' && b[i + 2] == 'F' && b[i + 3] == 'R') return i;
    return b.size();
  }

  static bool complete(const FileState& f) { return f.meta && f.total && f.data.size() == *f.total; }

  static FileManifest manifest(const FileKey& k, const FileState& f) {
    FileManifest m;
    m.generation = k.first;
    m.file_id = k.second;
    m.meta_known = f.meta.has_value();
    if (f.meta) {
      m.name = f.meta->name;
      m.size = f.meta->size;
    }
    m.total_frags = f.total.value_or(0);
    m.received.assign(m.total_frags, false);
    for (const auto& [i, _] : f.data) m.received[i] = true;
    m.header_copy = f.header_copy.has_value();
    m.holes = m.total_frags - f.data.size();
    m.complete = complete(f);
    return m;
  }

  void store(Fragment fr) {
    if (fr.total_frags > kMaxFragments) {
      ++stats_.malformed;
      return;
    }
    auto& f = files_[{fr.generation, fr.file_id}];
    if (f.total && *f.total != fr.total_frags) {
      ++stats_.malformed;
      return;
    }
    const bool was_complete = complete(f);
    switch (fr.kind) {
      case FragKind::Metadata: {
        auto meta = decode_meta(fr.payload);
        if (!meta || data_fragment_count(meta->size, meta->fragment_size) != fr.total_frags) {
          ++stats_.malformed;
          return;
        }
        if (f.meta) {
          ++stats_.duplicates;
          return;
        }
        f.meta = std::move(meta);
        f.total = fr.total_frags;
        // drop data fragments whose length disagrees with the metadata
        std::erase_if(f.data, [&](const auto& kv) { return kv.second.size() != expected_len(*f.meta, kv.first); });
        break;
      }
      case FragKind::Data:
        if (f.meta && fr.payload.size() != expected_len(*f.meta, fr.frag_index)) {
          ++stats_.malformed;
          return;
        }
        f.total = fr.total_frags;
        if (!f.data.emplace(fr.frag_index, std::move(fr.payload)).second) ++stats_.duplicates;
        break;
      case FragKind::HeaderCopy:
        f.total = fr.total_frags;
        if (f.header_copy) ++stats_.duplicates;
        else f.header_copy = std::move(fr.payload);
        break;
    }
    if (!was_complete && complete(f)) write({fr.generation, fr.file_id}, f);
  }

  static std::size_t expected_len(const FileMeta& m, std::uint32_t index) {
    const std::uint64_t start = std::uint64_t{index} * m.fragment_size;
    return start >= m.size ? 0 : static_cast<std::size_t>(std::min<std::uint64_t>(m.fragment_size, m.size - start));
  }

  static Reassembled build(const FileState& f) {
    const auto& m = *f.meta;
    Reassembled r;
    r.bytes.assign(m.size, 0);
    const auto n = static_cast<std::uint32_t>(data_fragment_count(m.size, m.fragment_size));
    for (std::uint32_t i = 0; i < n; ++i) {
      const Bytes* src = nullptr;
      if (auto it = f.data.find(i); it != f.data.end()) {
        src = &it->second;
      } else if (i == 0 && f.header_copy && f.header_copy->size() == expected_len(m, 0)) {
        src = &*f.header_copy;
        r.header_substituted = true;
      }
      if (src) std::copy(src->begin(), src->end(), r.bytes.begin() + std::uint64_t{i} * m.fragment_size);
      else r.holes.push_back(i);
    }
    r.crc_ok = crc32(r.bytes) == m.crc;
    return r;
  }

  void write(const FileKey& k, FileState& f) {
    const bool done = complete(f);
    if (done) f.written_complete = true;
    if (!out_) return;
    const auto& m = *f.meta;
    auto path = receive_path(*out_, k.first, m.name, k.second);
    // newest content of a name wins
    auto& newest = versions_[path.string()];
    if (newest && *newest > m.version) return;
    newest = m.version;
    auto r = build(f);
    write_file_atomic(path, r.bytes);
    fs::path holes = path;
    holes += ".holes";
    if (r.holes.empty()) {
      fs::remove(holes);
    } else {
      std::ostringstream s;
      char id[24];
      std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(k.second));
      s << "file_id=" << id << "\nsize=" << m.size << "\nfragments=" << data_fragment_count(m.size, m.fragment_size)
        << "\nfragment_size=" << m.fragment_size << "\nheader_copy=" << (r.header_substituted ? "used" : "no")
        << "\nmissing=";
      for (std::size_t i = 0; i < r.holes.size(); ++i) s << (i ? "," : "") << r.holes[i];
      s << "\n";
      write_text_atomic(holes, s.str());
    }
    ++stats_.files_written;
  }

  std::optional<fs::path> out_;
  mutable std::mutex mutex_;
  std::map<FileKey, FileState> files_;
  std::map<std::string, std::optional<std::uint64_t>> versions_;
  RxStats stats_;
};

/// Parses a `.holes` report back into its missing indices.
inline std::vector<std::uint32_t> read_holes_report(const fs::path& p) {
  std::vector<std::uint32_t> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.starts_with("missing=")) continue;
    std::istringstream items(line.substr(8));
    std::string tok;
    while (std::getline(items, tok, ','))
      if (!tok.empty()) out.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
  }
  return out;
}

}  // namespace spacedream::sync
