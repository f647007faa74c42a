#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/clock.hpp"
#include "spacedream/common/error.hpp"

namespace spacedream::mission {

inline constexpr const char* kEventsTopic = "mission/events";
inline constexpr const char* kStatusService = "mission/status";
inline constexpr const char* kPetService = "watchdog/pet";
inline constexpr const char* kArmService = "watchdog/arm";

enum class EventKind : std::uint8_t { Boot, StartCmd, HdrmRelease, HealthCheck, DemoStart, DemoEnd, Sleep, Fault, Reboot };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Boot: return "boot";
    case EventKind::StartCmd: return "start_cmd";
    case EventKind::HdrmRelease: return "hdrm_release";
    case EventKind::HealthCheck: return "health_check";
    case EventKind::DemoStart: return "demo_start";
    case EventKind::DemoEnd: return "demo_end";
    case EventKind::Sleep: return "sleep";
    case EventKind::Fault: return "fault";
    case EventKind::Reboot: return "reboot";
  }
  return "?";
}

struct MissionEvent {
  TimePoint stamp{};
  EventKind kind = EventKind::Boot;
  std::string detail;
  std::uint32_t generation = 0;

  bool operator==(const MissionEvent&) const = default;
};

// mission/events record: i64 stamp ns | u8 kind | u32 generation | str16 detail

inline Bytes encode_event(const MissionEvent& e) {
  return ByteWriter().i64(e.stamp.time_since_epoch().count()).u8(static_cast<std::uint8_t>(e.kind)).u32(e.generation).str16(e.detail).bytes();
}

inline MissionEvent decode_event(ByteView b) {
  ByteReader r(b);
  MissionEvent e;
  e.stamp = TimePoint{Duration{r.i64()}};
  auto k = r.u8();
  if (k > static_cast<std::uint8_t>(EventKind::Reboot)) throw DecodeError("unknown mission event kind");
  e.kind = static_cast<EventKind>(k);
  e.generation = r.u32();
  e.detail = r.str16();
  return e;
}

inline std::string to_line(const MissionEvent& e) {
  char t[32];
  std::snprintf(t, sizeof t, "%.3f", to_seconds(e.stamp));
  return std::string("t=") + t + " gen=" + std::to_string(e.generation) + " " + to_string(e.kind) +
         (e.detail.empty() ? "" : " " + e.detail);
}

/// Append-only event log that keeps stamps strictly increasing even when
/// several events happen in the same tick.
class EventLog {
 public:
  const MissionEvent& add(TimePoint now, EventKind kind, std::string detail, std::uint32_t generation) {
    if (!events_.empty() && now <= events_.back().stamp) now = events_.back().stamp + Duration{1};
    events_.push_back({now, kind, std::move(detail), generation});
    return events_.back();
  }
  const std::vector<MissionEvent>& events() const { return events_; }
  std::size_t count(EventKind k) const {
    std::size_t n = 0;
    for (const auto& e : events_) n += e.kind == k;
    return n;
  }

 private:
  std::vector<MissionEvent> events_;
};

}  // namespace spacedream::mission
