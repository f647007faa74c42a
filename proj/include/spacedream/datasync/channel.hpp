#pragma once

#include <map>
#include <optional>
#include <random>
#include <vector>

#include "spacedream/datasync/fragment.hpp"

namespace spacedream::sync {

struct ChannelModel {
  double loss = 0.0;           // per packet
  double corruption = 0.0;     // per packet, one random byte flipped
  std::size_t reorder_window = 0;  // a packet may be overtaken by up to this many successors
  double bandwidth_bps = 0.0;  // 0: unlimited

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(loss) || !prob(corruption)) throw SyncError(SyncErrc::BadConfig, "channel probabilities must be in [0, 1]");
    if (bandwidth_bps < 0.0) throw SyncError(SyncErrc::BadConfig, "bandwidth must be >= 0");
  }
};

struct ChannelStats {
  std::uint64_t in = 0, lost = 0, corrupted = 0, delivered = 0;
};

/// Seeded downlink model. Applied in order: loss, corruption, bounded
/// reordering, bandwidth delay.
class Channel {
 public:
  explicit Channel(ChannelModel m = {}, std::uint64_t seed = 1) : m_(m), rng_(seed) { m_.validate(); }

  void send(ByteView packet, TimePoint now) {
    ++stats_.in;
    if (std::bernoulli_distribution(m_.loss)(rng_)) {
      ++stats_.lost;
      return;
    }
    Bytes p(packet.begin(), packet.end());
    if (!p.empty() && std::bernoulli_distribution(m_.corruption)(rng_)) {
      auto pos = std::uniform_int_distribution<std::size_t>(0, p.size() - 1)(rng_);
      p[pos] ^= static_cast<std::uint8_t>(std::uniform_int_distribution<int>(1, 255)(rng_));
      ++stats_.corrupted;
    }
    // Packet i takes slot i + d, d uniform in [0, window]; slots leave in order.
    std::uint64_t slot = arrivals_;
    if (m_.reorder_window) slot += std::uniform_int_distribution<std::uint64_t>(0, m_.reorder_window)(rng_);
    held_.emplace(Key{slot, arrivals_}, Held{std::move(p), now});
    ++arrivals_;
    release([&](const Key& k, const Held&) { return k.slot <= arrivals_; });
  }

  /// Packets whose delivery time has passed. Packets held for reordering longer
  /// than kMaxHold are put on the link as well.
  std::vector<Bytes> receive(TimePoint now) {
    std::optional<Key> last_expired;
    for (const auto& [k, h] : held_)
      if (h.sent + kMaxHold <= now) last_expired = k;
    if (last_expired) release([&](const Key& k, const Held&) { return !(*last_expired < k); });
    std::vector<Bytes> out;
    while (!in_flight_.empty() && in_flight_.begin()->first <= now) {
      out.push_back(std::move(in_flight_.begin()->second));
      in_flight_.erase(in_flight_.begin());
    }
    stats_.delivered += out.size();
    return out;
  }

  /// Returns everything still held or in flight, in delivery order.
  std::vector<Bytes> drain() {
    release([](const Key&, const Held&) { return true; });
    std::vector<Bytes> out;
    for (auto& [_, p] : in_flight_) out.push_back(std::move(p));
    in_flight_.clear();
    stats_.delivered += out.size();
    return out;
  }

  bool empty() const { return held_.empty() && in_flight_.empty(); }
  const ChannelStats& stats() const { return stats_; }
  const ChannelModel& model() const { return m_; }

  static constexpr Duration kMaxHold = std::chrono::milliseconds(100);

 private:
  struct Key {
    std::uint64_t slot, index;
    bool operator<(const Key& o) const { return slot != o.slot ? slot < o.slot : index < o.index; }
  };
  struct Held {
    Bytes bytes;
    TimePoint sent;
  };

  template <class Pred>
  void release(Pred ready) {
    while (!held_.empty() && ready(held_.begin()->first, held_.begin()->second)) {
      auto node = held_.extract(held_.begin());
      auto& h = node.mapped();
      TimePoint arrive = std::max(h.sent, link_free_);
      if (m_.bandwidth_bps > 0.0) arrive += from_seconds(8.0 * static_cast<double>(h.bytes.size()) / m_.bandwidth_bps);
      link_free_ = arrive;
      in_flight_.emplace(arrive, std::move(h.bytes));
    }
  }

  ChannelModel m_;
  std::mt19937_64 rng_;
  std::uint64_t arrivals_ = 0;
  std::map<Key, Held> held_;
  std::multimap<TimePoint, Bytes> in_flight_;
  TimePoint link_free_{};
  ChannelStats stats_;
};

}  // namespace spacedream::sync
