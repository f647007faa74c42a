#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "spacedream/common/udp.hpp"

namespace spacedream::mission {

/// "SDRMGO!\n"
inline constexpr std::array<std::uint8_t, 8> kStartMagic{0x53, 0x44, 0x52, 0x4D, 0x47, 0x4F, 0x21, 0x0A};
inline constexpr std::uint16_t kDefaultStartPort = 47000;

inline bool is_start_command(ByteView datagram) {
  return datagram.size() == kStartMagic.size() && std::equal(kStartMagic.begin(), kStartMagic.end(), datagram.begin());
}

inline Bytes start_command() { return Bytes(kStartMagic.begin(), kStartMagic.end()); }

/// Where start datagrams come from.
class StartSource {
 public:
  virtual ~StartSource() = default;
  /// Datagrams that arrived up to `now`.
  virtual std::vector<Bytes> poll(TimePoint now) = 0;
};

/// Replays datagrams at fixed simulated times.
class ScriptedStartSource final : public StartSource {
 public:
  void add(TimePoint at, Bytes datagram) {
    auto it = std::upper_bound(script_.begin(), script_.end(), at, [](TimePoint t, const auto& e) { return t < e.first; });
    script_.insert(it, {at, std::move(datagram)});
  }

  std::vector<Bytes> poll(TimePoint now) override {
    std::vector<Bytes> out;
    while (!script_.empty() && script_.front().first <= now) {
      out.push_back(std::move(script_.front().second));
      script_.pop_front();
    }
    return out;
  }

 private:
  std::deque<std::pair<TimePoint, Bytes>> script_;
};

/// Real UDP listener; never blocks.
class UdpStartSource final : public StartSource {
 public:
  explicit UdpStartSource(std::uint16_t port = kDefaultStartPort, const std::string& host = "0.0.0.0") {
    socket_.bind(host + ":" + std::to_string(port));
  }
  std::uint16_t port() const { return socket_.local_port(); }

  std::vector<Bytes> poll(TimePoint) override {
    std::vector<Bytes> out;
    while (auto d = socket_.receive(Duration{0})) out.push_back(std::move(*d));
    return out;
  }

 private:
  UdpSocket socket_;
};

enum class MissionMode { Flight, GroundTest };

inline const char* to_string(MissionMode m) { return m == MissionMode::Flight ? "flight" : "ground_test"; }

/// Waits for the start datagram until a deadline; anything else is ignored.
class StartListener {
 public:
  StartListener(StartSource& source, TimePoint deadline) : source_(source), deadline_(deadline) {}

  /// nullopt while still waiting.
  std::optional<MissionMode> step(TimePoint now) {
    for (const auto& d : source_.poll(now)) {
      if (is_start_command(d)) return MissionMode::Flight;
      ++ignored_;
    }
    if (now >= deadline_) return MissionMode::GroundTest;
    return std::nullopt;
  }

  std::size_t ignored() const { return ignored_; }

 private:
  StartSource& source_;
  TimePoint deadline_;
  std::size_t ignored_ = 0;
};

}  // namespace spacedream::mission
