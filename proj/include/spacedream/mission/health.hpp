#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <string>

#include "spacedream/halsim/types.hpp"

namespace spacedream::mission {

inline constexpr double kTorqueLimit = 50.0;  // N·m, plausible measurement range
inline constexpr std::size_t kMinHealthCycles = 10;

enum class HealthReason { None, StaleTelemetry, PositionInvalid, NotReferenced, TorqueOutOfRange };

inline const char* to_string(HealthReason r) {
  switch (r) {
    case HealthReason::None: return "ok";
    case HealthReason::StaleTelemetry: return "stale_telemetry";
    case HealthReason::PositionInvalid: return "position_invalid";
    case HealthReason::NotReferenced: return "not_referenced";
    case HealthReason::TorqueOutOfRange: return "torque_out_of_range";
  }
  return "?";
}

struct HealthResult {
  HealthReason reason = HealthReason::None;
  std::string detail;
  bool pass() const { return reason == HealthReason::None; }
};

inline bool torque_valid(double tau) { return std::isfinite(tau) && std::abs(tau) <= kTorqueLimit; }

/// Torque measurements usable for torque-based control (the sentinel fails the range check).
inline HealthResult torque_gate(const hal::TelemetrySet& t) {
  for (const auto& j : t)
    if (!torque_valid(j.torque))
      return {HealthReason::TorqueOutOfRange, "joint " + std::to_string(j.joint_id) + " torque " + std::to_string(j.torque)};
  return {};
}

/// Checks a telemetry window, oldest first. Order of checks: freshness,
/// positions, referencing, torques.
inline HealthResult health_check(const std::deque<hal::TelemetrySet>& window, double hard_limit = 2.8) {
  if (window.size() < kMinHealthCycles)
    return {HealthReason::StaleTelemetry, "only " + std::to_string(window.size()) + " telemetry cycles"};
  for (std::size_t i = 1; i < window.size(); ++i)
    for (std::size_t j = 0; j < hal::kJoints; ++j)
      if (window[i][j].cycle_counter <= window[i - 1][j].cycle_counter)
        return {HealthReason::StaleTelemetry, "joint " + std::to_string(j) + " cycle counter not advancing"};
  for (const auto& t : window)
    for (const auto& j : t)
      if (!std::isfinite(j.position) || std::abs(j.position) > hard_limit)
        return {HealthReason::PositionInvalid, "joint " + std::to_string(j.joint_id) + " position " + std::to_string(j.position)};
  for (const auto& j : window.back())
    if (!j.referenced()) return {HealthReason::NotReferenced, "joint " + std::to_string(j.joint_id) + " not referenced"};
  for (const auto& t : window)
    if (auto r = torque_gate(t); !r.pass()) return r;
  return {};
}

}  // namespace spacedream::mission
