#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "spacedream/datasync/fragment.hpp"

namespace spacedream::sync {

/// Token bucket in bits. A packet may be sent whenever the balance is positive;
/// its full size is then charged, so the balance can go briefly negative.
class TokenBucket {
 public:
  TokenBucket(double rate_bps, double depth_bits) : rate_(rate_bps), depth_(depth_bits), tokens_(depth_bits) {
    if (!(rate_bps > 0.0)) throw SyncError(SyncErrc::BadConfig, "rate must be > 0");
  }

  bool can_send(TimePoint now) {
    refill(now);
    return tokens_ > 0.0;
  }
  void charge(double bits) { tokens_ -= bits; }

  /// Earliest time at which can_send() turns true.
  TimePoint next_send_time(TimePoint now) {
    refill(now);
    if (tokens_ > 0.0) return now;
    return now + from_seconds((-tokens_ + 1.0) / rate_);
  }

  double rate() const { return rate_; }

 private:
  void refill(TimePoint now) {
    if (last_ && now > *last_) tokens_ = std::min(depth_, tokens_ + rate_ * to_seconds(now - *last_));
    if (!last_ || now > *last_) last_ = now;
  }

  double rate_, depth_, tokens_;
  std::optional<TimePoint> last_;
};

/// Newer boot generation first, then newer file.
struct Recency {
  std::uint32_t generation = 0;
  std::uint64_t order = 0;
};

struct SendRecord {
  TimePoint time{};
  std::uint64_t file_id = 0;
  std::uint32_t generation = 0;
  std::uint32_t frag_index = 0;
  FragKind kind = FragKind::Data;
  int priority = 0;  // effective priority when sent
  int round = 0;     // sends done before this one
};

/// Priority queue of fragments. Ordering: priority desc, sends_done asc,
/// recency desc, frag_index asc. Entries retire after resend_count sends.
class SendQueue {
 public:
  static constexpr int kRefillPriority = std::numeric_limits<int>::min() / 2;

  explicit SendQueue(bool refill_when_idle = false) : refill_(refill_when_idle) {}

  void push(const OutgoingFragment& f, Recency rec) {
    Entry e;
    e.wire = encode_fragment(f.fragment);
    e.file_id = f.fragment.file_id;
    e.generation = f.fragment.generation;
    e.frag_index = f.fragment.frag_index;
    e.kind = f.fragment.kind;
    e.cfg = f.cfg;
    e.priority = f.cfg.priority;
    e.recency = rec;
    const auto uid = next_uid_++;
    ready_.insert(key(uid, e));
    entries_.emplace(uid, std::move(e));
  }

  /// Best eligible entry at `now`, if any. The pointer stays valid until the next mutation.
  const Bytes* peek(TimePoint now) {
    promote(now);
    if (ready_.empty() && waiting_.empty() && refill_ && !retired_.empty()) refill();
    if (ready_.empty()) return nullptr;
    return &entries_.at(ready_.begin()->uid).wire;
  }

  /// Sends the entry returned by the last peek().
  SendRecord commit(TimePoint now) {
    auto k = *ready_.begin();
    ready_.erase(ready_.begin());
    auto& e = entries_.at(k.uid);
    SendRecord rec{now, e.file_id, e.generation, e.frag_index, e.kind, e.priority, e.sends_done};
    ++e.sends_done;
    e.last_sent = now;
    if (e.sends_done >= e.budget()) {
      if (refill_) retired_.push_back(k.uid);
      else entries_.erase(k.uid);
    } else if (e.cfg.min_resend_interval <= Duration::zero()) {
      ready_.insert(key(k.uid, e));
    } else {
      waiting_.emplace(now + e.cfg.min_resend_interval, k.uid);
    }
    return rec;
  }

  /// Forgets every fragment of a file (superseded or deleted).
  void drop_file(std::uint64_t file_id, std::uint32_t generation) {
    for (auto it = entries_.begin(); it != entries_.end();) {
      if (it->second.file_id == file_id && it->second.generation == generation) {
        ready_.erase(key(it->first, it->second));
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    std::erase_if(waiting_, [&](const auto& w) { return !entries_.contains(w.second); });
    std::erase_if(retired_, [&](auto uid) { return !entries_.contains(uid); });
  }

  /// Entries that may still be sent (ready or waiting for their resend interval).
  std::size_t pending() const { return ready_.size() + waiting_.size(); }
  bool empty() const { return pending() == 0; }
  std::optional<TimePoint> next_eligible() const {
    if (!ready_.empty()) return TimePoint::min();
    if (waiting_.empty()) return std::nullopt;
    return waiting_.begin()->first;
  }

 private:
  struct Entry {
    Bytes wire;
    std::uint64_t file_id = 0;
    std::uint32_t generation = 0;
    std::uint32_t frag_index = 0;
    FragKind kind = FragKind::Data;
    TransferConfig cfg;
    int priority = 0;
    bool refilled = false;
    Recency recency;
    int sends_done = 0;
    TimePoint last_sent{};
    int budget() const { return refilled ? 1 : cfg.resend_count; }
  };

  struct Key {
    int priority;
    int sends_done;
    std::uint32_t generation;
    std::uint64_t order;
    std::uint32_t frag_index;
    std::uint64_t uid;
    bool operator<(const Key& o) const {
      if (priority != o.priority) return priority > o.priority;
      if (sends_done != o.sends_done) return sends_done < o.sends_done;
      if (generation != o.generation) return generation > o.generation;
      if (order != o.order) return order > o.order;
      if (frag_index != o.frag_index) return frag_index < o.frag_index;
      return uid < o.uid;
    }
  };

  static Key key(std::uint64_t uid, const Entry& e) {
    return {e.priority, e.sends_done, e.recency.generation, e.recency.order, e.frag_index, uid};
  }

  void promote(TimePoint now) {
    while (!waiting_.empty() && waiting_.begin()->first <= now) {
      auto uid = waiting_.begin()->second;
      waiting_.erase(waiting_.begin());
      ready_.insert(key(uid, entries_.at(uid)));
    }
  }

  // Bandwidth is idle and every budget is spent: send everything once more at the lowest priority.
  void refill() {
    for (auto uid : retired_) {
      auto& e = entries_.at(uid);
      e.priority = kRefillPriority;
      e.refilled = true;
      e.sends_done = 0;
      ready_.insert(key(uid, e));
    }
    retired_.clear();
  }

  bool refill_;
  std::uint64_t next_uid_ = 0;
  std::map<std::uint64_t, Entry> entries_;
  std::set<Key> ready_;
  std::multimap<TimePoint, std::uint64_t> waiting_;
  std::vector<std::uint64_t> retired_;
};

struct SenderConfig {
  double rate_bps = 1e6;
  std::size_t packet_budget = kDefaultPacketBudget;
  std::size_t fragment_size = kDefaultFragmentSize;
  bool refill_when_idle = false;
  bool keep_trace = false;
};

struct SenderStats {
  std::uint64_t packets = 0;
  std::uint64_t fragments = 0;
  std::uint64_t bytes = 0;
};

struct SentPacket {
  TimePoint time{};
  Bytes bytes;
};

/// Packs queued fragments into packets and paces them through a token bucket.
class Sender {
 public:
  explicit Sender(SenderConfig cfg = {})
      : cfg_(cfg),
        queue_(cfg.refill_when_idle),
        bucket_(cfg.rate_bps, std::max(2.0 * 8.0 * static_cast<double>(cfg.packet_budget), 0.02 * cfg.rate_bps)) {
    if (cfg_.packet_budget < kFragmentOverhead + kMinFragmentSize)
      throw SyncError(SyncErrc::BadConfig, "packet budget too small");
  }

  /// Queues a file; returns its file id.
  std::uint64_t enqueue_file(std::string_view relpath, ByteView content, const TransferConfig& tc,
                             std::uint32_t generation, std::uint64_t order) {
    auto frags = fragment_file(relpath, content, cfg_.fragment_size, tc, generation, order);
    for (const auto& f : frags) queue_.push(f, {generation, order});
    return frags.front().fragment.file_id;
  }

  void enqueue(const std::vector<OutgoingFragment>& frags, Recency rec) {
    for (const auto& f : frags) queue_.push(f, rec);
  }

  void drop_file(std::uint64_t file_id, std::uint32_t generation) { queue_.drop_file(file_id, generation); }

  /// Emits every packet the rate limit allows at `now`.
  std::vector<SentPacket> poll(TimePoint now) {
    std::vector<SentPacket> out;
    while (bucket_.can_send(now)) {
      Bytes packet;
      while (const Bytes* next = queue_.peek(now)) {
        if (!packet.empty() && packet.size() + next->size() > cfg_.packet_budget) break;
        packet.insert(packet.end(), next->begin(), next->end());
        auto rec = queue_.commit(now);
        ++stats_.fragments;
        if (cfg_.keep_trace) trace_.push_back(rec);
      }
      if (packet.empty()) break;
      bucket_.charge(8.0 * static_cast<double>(packet.size()));
      ++stats_.packets;
      stats_.bytes += packet.size();
      out.push_back({now, std::move(packet)});
    }
    return out;
  }

  /// When poll() could next produce a packet; nullopt if nothing is queued.
  std::optional<TimePoint> next_wakeup(TimePoint now) {
    auto eligible = queue_.next_eligible();
    if (!eligible && !(cfg_.refill_when_idle && queue_.peek(now))) return std::nullopt;
    auto t = bucket_.next_send_time(now);
    return eligible ? std::max(t, *eligible) : t;
  }

  bool idle() const { return queue_.empty(); }
  std::size_t pending() const { return queue_.pending(); }
  const SenderStats& stats() const { return stats_; }
  const std::vector<SendRecord>& trace() const { return trace_; }
  const SenderConfig& config() const { return cfg_; }

 private:
  SenderConfig cfg_;
  SendQueue queue_;
  TokenBucket bucket_;
  SenderStats stats_;
  std::vector<SendRecord> trace_;
};

}  // namespace spacedream::sync
