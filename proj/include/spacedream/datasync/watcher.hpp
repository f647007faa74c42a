#pragma once

#include <sys/inotify.h>
#include <unistd.h>

#include <cerrno>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spacedream/common/files.hpp"
#include "spacedream/common/text_config.hpp"
#include "spacedream/datasync/sender.hpp"

namespace spacedream::sync {

enum class ChangeKind { Created, Modified, Removed };

struct FileChange {
  std::string relpath;  // relative to the watch root, '/' separated
  ChangeKind kind = ChangeKind::Created;
  std::uint32_t crc = 0;
  std::uint64_t order = 0;  // modification order, increasing
};

/// Files still being written are never transferred.
inline bool is_transient_name(std::string_view name) {
  return name.ends_with(".partial") || name.ends_with(".tmp") || name.ends_with(".holes");
}

/// Watches a directory tree with inotify and a periodic checksum rescan. Each
/// distinct content of a path is reported once.
class FolderWatcher {
 public:
  FolderWatcher(fs::path root, Duration rescan_period, bool use_inotify = true)
      : root_(std::move(root)), period_(rescan_period) {
    if (!fs::is_directory(root_)) throw SyncError(SyncErrc::RootMissing, "watch root missing: " + root_.string());
    if (use_inotify) {
      fd_ = inotify_init1(IN_NONBLOCK | IN_CLOEXEC);
      if (fd_ >= 0) add_watches(root_);
    }
  }

  ~FolderWatcher() {
    if (fd_ >= 0) ::close(fd_);
  }
  FolderWatcher(const FolderWatcher&) = delete;
  FolderWatcher& operator=(const FolderWatcher&) = delete;

  /// Handles pending notifications and, when due, a full rescan.
  std::vector<FileChange> poll(TimePoint now) {
    if (!fs::is_directory(root_)) throw SyncError(SyncErrc::RootMissing, "watch root missing: " + root_.string());
    std::vector<FileChange> out;
    for (const auto& rel : read_notifications()) check(rel, out);
    if (!last_scan_ || now - *last_scan_ >= period_) {
      rescan(out);
      last_scan_ = now;
    }
    return out;
  }

  /// Drops queued notifications unread (a missed event, for tests of the rescan path).
  void discard_notifications() { read_notifications(); }

  std::size_t rescans() const { return rescans_; }
  bool notifications_enabled() const { return fd_ >= 0; }
  const fs::path& root() const { return root_; }

 private:
  void add_watches(const fs::path& dir) {
    const auto mask = IN_CLOSE_WRITE | IN_MOVED_TO | IN_CREATE | IN_DELETE | IN_MOVED_FROM | IN_MODIFY;
    int wd = inotify_add_watch(fd_, dir.c_str(), mask);
    if (wd >= 0) dirs_[wd] = dir;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec))
      if (e.is_directory() && !watched(e.path())) add_watches(e.path());
  }

  bool watched(const fs::path& p) const {
    for (const auto& [_, d] : dirs_)
      if (d == p) return true;
    return false;
  }

  std::vector<std::string> read_notifications() {
    std::set<std::string> touched;
    if (fd_ < 0) return {};
    alignas(inotify_event) char buf[16384];
    for (;;) {
      auto n = ::read(fd_, buf, sizeof buf);
      if (n <= 0) break;
      for (char* p = buf; p < buf + n;) {
        auto* ev = reinterpret_cast<inotify_event*>(p);
        p += sizeof(inotify_event) + ev->len;
        auto it = dirs_.find(ev->wd);
        if (it == dirs_.end() || ev->len == 0) continue;
        auto full = it->second / ev->name;
        if (ev->mask & IN_ISDIR) {
          if ((ev->mask & (IN_CREATE | IN_MOVED_TO)) && !watched(full)) {
            add_watches(full);
            // files created before the watch was in place
            std::error_code ec;
            for (const auto& e : fs::recursive_directory_iterator(full, ec))
              if (e.is_regular_file()) touched.insert(rel(e.path()));
          }
          continue;
        }
        touched.insert(rel(full));
      }
    }
    return {touched.begin(), touched.end()};
  }

  std::string rel(const fs::path& p) const { return fs::relative(p, root_).generic_string(); }

  void check(const std::string& relpath, std::vector<FileChange>& out) {
    if (is_transient_name(relpath)) return;
    const auto full = root_ / relpath;
    std::error_code ec;
    if (!fs::is_regular_file(full, ec)) {
      if (known_.erase(relpath)) out.push_back({relpath, ChangeKind::Removed, 0, ++order_});
      return;
    }
    const auto size = fs::file_size(full, ec);
    const auto mtime = fs::last_write_time(full, ec);
    auto it = known_.find(relpath);
    if (ec) return;
    if (it != known_.end() && it->second.size == size && it->second.mtime == mtime) return;  // unchanged, skip the read
    std::uint32_t crc;
    try {
      crc = crc32(read_file(full));
    } catch (const std::exception&) {
      return;  // vanished between listing and reading
    }
    if (it != known_.end() && it->second.crc == crc) {
      it->second.size = size;
      it->second.mtime = mtime;
      return;
    }
    out.push_back({relpath, it == known_.end() ? ChangeKind::Created : ChangeKind::Modified, crc, ++order_});
    known_[relpath] = {crc, size, mtime};
  }

  void rescan(std::vector<FileChange>& out) {
    ++rescans_;
    std::set<std::string> present;
    std::error_code ec;
    std::vector<std::string> paths;
    for (const auto& e : fs::recursive_directory_iterator(root_, ec))
      if (e.is_regular_file()) paths.push_back(rel(e.path()));
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      present.insert(p);
      check(p, out);
    }
    for (auto it = known_.begin(); it != known_.end();) {
      if (!present.contains(it->first)) {
        out.push_back({it->first, ChangeKind::Removed, 0, ++order_});
        it = known_.erase(it);
      } else {
        ++it;
      }
    }
  }

  fs::path root_;
  Duration period_;
  int fd_ = -1;
  std::map<int, fs::path> dirs_;
  struct Seen {
    std::uint32_t crc = 0;
    std::uintmax_t size = 0;
    fs::file_time_type mtime{};
  };
  std::map<std::string, Seen> known_;
  std::optional<TimePoint> last_scan_;
  std::uint64_t order_ = 0;
  std::size_t rescans_ = 0;
};

// Transfer rules, one block per top-level folder below the generation folder:
//
//   [folder logs]
//   priority = 5
//   resend = 3
//   min_interval_ms = 200
//
// "[folder *]" sets the default for folders without a block of their own.

struct TransferRules {
  std::map<std::string, TransferConfig> folders;
  TransferConfig fallback;

  const TransferConfig& for_folder(const std::string& folder) const {
    auto it = folders.find(folder);
    return it == folders.end() ? fallback : it->second;
  }
};

inline TransferRules parse_rules(std::string_view text) {
  TransferRules rules;
  auto doc = parse_config(text);
  for (const auto& b : doc.blocks) {
    if (b.kind != "folder") throw ConfigParseError(b.line, "unknown block '" + b.kind + "'");
    TransferConfig tc;
    for (const auto& e : b.entries) {
      if (e.key == "priority") tc.priority = static_cast<int>(parse_int(e.value, e.line));
      else if (e.key == "resend") tc.resend_count = static_cast<int>(parse_int(e.value, e.line));
      else if (e.key == "min_interval_ms") tc.min_resend_interval = from_seconds(parse_double(e.value, e.line) / 1000.0);
      else throw ConfigParseError(e.line, "unknown key '" + e.key + "'");
    }
    try {
      tc.validate();
    } catch (const SyncError& err) {
      throw ConfigParseError(b.line, err.what());
    }
    if (b.name == "*" || b.name.empty()) rules.fallback = tc;
    else rules.folders[b.name] = tc;
  }
  return rules;
}

/// Splits "<generation>/<folder>/<rest>" under a tx root. Paths outside a
/// numeric generation folder belong to `default_generation`.
struct TxPath {
  std::uint32_t generation = 0;
  std::string name;    // path below the generation folder
  std::string folder;  // first component of name
};

inline TxPath split_tx_path(std::string_view relpath, std::uint32_t default_generation) {
  TxPath t{default_generation, std::string(relpath), {}};
  auto slash = relpath.find('/');
  if (slash != std::string_view::npos && slash > 0) {
    auto head = relpath.substr(0, slash);
    if (head.find_first_not_of("0123456789") == std::string_view::npos && head.size() <= 9) {
      t.generation = static_cast<std::uint32_t>(std::stoul(std::string(head)));
      t.name = std::string(relpath.substr(slash + 1));
    }
  }
  auto s2 = t.name.find('/');
  t.folder = s2 == std::string::npos ? std::string{} : t.name.substr(0, s2);
  return t;
}

struct SyncStats {
  std::uint64_t files_queued = 0;
  std::uint64_t files_superseded = 0;
};

/// Watcher + sender: every new content of a file under the tx root is fragmented
/// and queued with its folder's rules; superseded or deleted versions are dropped.
class SyncService {
 public:
  SyncService(fs::path tx_root, TransferRules rules, SenderConfig cfg, Duration rescan_period,
              std::uint32_t boot_generation, bool use_inotify = true)
      : watcher_(std::move(tx_root), rescan_period, use_inotify),
        rules_(std::move(rules)),
        sender_(cfg),
        generation_(boot_generation) {}

  std::vector<SentPacket> poll(TimePoint now) {
    for (const auto& c : watcher_.poll(now)) handle(c);
    return sender_.poll(now);
  }

  /// Rescan without sending (e.g. right after startup).
  void scan(TimePoint now) {
    for (const auto& c : watcher_.poll(now)) handle(c);
  }

  Sender& sender() { return sender_; }
  const Sender& sender() const { return sender_; }
  FolderWatcher& watcher() { return watcher_; }
  const SyncStats& stats() const { return stats_; }

 private:
  void handle(const FileChange& c) {
    auto tx = split_tx_path(c.relpath, generation_);
    if (auto it = active_.find(c.relpath); it != active_.end()) {
      sender_.drop_file(it->second, tx.generation);
      active_.erase(it);
      ++stats_.files_superseded;
    }
    if (c.kind == ChangeKind::Removed) return;
    Bytes content;
    try {
      content = read_file(watcher_.root() / c.relpath);
    } catch (const std::exception&) {
      return;
    }
    if (crc32(content) != c.crc) return;  // changed again; the next event carries it
    const auto& tc = rules_.for_folder(tx.folder);
    active_[c.relpath] = sender_.enqueue_file(tx.name, content, tc, tx.generation, c.order);
    ++stats_.files_queued;
  }

  FolderWatcher watcher_;
  TransferRules rules_;
  Sender sender_;
  std::uint32_t generation_;
  std::map<std::string, std::uint64_t> active_;
  SyncStats stats_;
};

}  // namespace spacedream::sync
