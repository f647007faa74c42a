#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "spacedream/controller/trajectory.hpp"

namespace spacedream::ctl {

enum class HlState : std::uint8_t { Init = 0, Idle = 1, Ready = 2 };

enum class ControlMode : std::uint8_t {
  ManualPosition = 0,
  ManualImpedance = 1,
  ManualTorque = 2,
  Interpolator = 3,
  VirtualFixtures = 4,
};

inline const char* to_string(HlState s) {
  switch (s) {
    case HlState::Init: return "INIT";
    case HlState::Idle: return "IDLE";
    case HlState::Ready: return "READY";
  }
  return "?";
}

inline const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::ManualPosition: return "position";
    case ControlMode::ManualImpedance: return "impedance";
    case ControlMode::ManualTorque: return "torque";
    case ControlMode::Interpolator: return "interpolator";
    case ControlMode::VirtualFixtures: return "virtual_fixtures";
  }
  return "?";
}

/// Parses the controller/mode parameter. "idle" (or "") requests no controller.
inline std::optional<ControlMode> parse_mode(std::string_view s) {
  if (s.empty() || s == "idle") return std::nullopt;
  for (auto m : {ControlMode::ManualPosition, ControlMode::ManualImpedance, ControlMode::ManualTorque,
                 ControlMode::Interpolator, ControlMode::VirtualFixtures})
    if (s == to_string(m)) return m;
  throw ControllerError(ControllerErrc::UnknownMode, "unknown controller mode '" + std::string(s) + "'");
}

/// Modes whose behaviour depends on the joints' torque sensors.
inline bool uses_torque_sensing(ControlMode m) {
  return m == ControlMode::ManualImpedance || m == ControlMode::ManualTorque || m == ControlMode::VirtualFixtures;
}

// --- high level ----------------------------------------------------------------

struct HighLevelState {
  HlState state = HlState::Init;
  ControlMode ready_mode = ControlMode::ManualPosition;  // meaningful only in READY

  bool ready() const { return state == HlState::Ready; }
  bool operator==(const HighLevelState&) const = default;
};

struct HlResult {
  HighLevelState next;
  bool reset_trigger = false;
};

/// Transition table:
///   any, error        → INIT (reset trigger unless already in INIT)
///   INIT              → IDLE once all joints are referenced
///   IDLE, request m   → READY/m
///   READY, request m  → READY/m (same cycle, no detour)
///   READY, no request → IDLE
///   IDLE/READY, referencing lost → INIT
inline HlResult hl_step(HighLevelState s, bool all_referenced, std::optional<ControlMode> request, bool error) {
  if (error) return {{HlState::Init, s.ready_mode}, s.state != HlState::Init};
  switch (s.state) {
    case HlState::Init:
      if (all_referenced) s.state = HlState::Idle;
      break;
    case HlState::Idle:
      if (!all_referenced) {
        s.state = HlState::Init;
      } else if (request) {
        s.state = HlState::Ready;
        s.ready_mode = *request;
      }
      break;
    case HlState::Ready:
      if (!all_referenced) {
        s.state = HlState::Init;
      } else if (!request) {
        s.state = HlState::Idle;
      } else {
        s.ready_mode = *request;
      }
      break;
  }
  return {s, false};
}

/// The controller currently in charge, or nullopt outside READY.
inline std::optional<ControlMode> active_controller(const HighLevelState& s) {
  if (!s.ready()) return std::nullopt;
  return s.ready_mode;
}

// --- interpolator --------------------------------------------------------------

enum class IpolPhase : std::uint8_t { Unplanned = 0, Planning = 1, Running = 2, Done = 3 };

inline const char* to_string(IpolPhase p) {
  switch (p) {
    case IpolPhase::Unplanned: return "UNPLANNED";
    case IpolPhase::Planning: return "PLANNING";
    case IpolPhase::Running: return "RUNNING";
    case IpolPhase::Done: return "DONE";
  }
  return "?";
}

struct Goal {
  JointVector q{};
  double vmax = 0.5;
  double amax = 0.5;
  std::uint64_t version = 0;
};

struct InterpolatorState {
  IpolPhase phase = IpolPhase::Unplanned;
  std::optional<Trajectory> trajectory;
  double t0 = 0.0;
  std::uint64_t planned_version = 0;
};

struct IpolInput {
  bool active = false;          // READY with the interpolator selected
  bool controller_changed = false;
  const Goal* goal = nullptr;   // latest goal, if any was ever set
  JointVector q{};              // measured positions
  double now = 0.0;             // s
};

struct IpolOutput {
  InterpolatorState next;
  std::optional<JointVector> target;  // nullopt: hold (idle output)
};

/// Planning takes exactly one cycle: UNPLANNED → PLANNING (hold) → RUNNING.
/// A controller change drops the trajectory; the goal is replanned from the
/// then-current position once the interpolator is selected again.
inline IpolOutput ipol_step(InterpolatorState s, const IpolInput& in) {
  if (in.controller_changed) return {InterpolatorState{IpolPhase::Unplanned, std::nullopt, 0.0, 0}, std::nullopt};
  if (!in.active) return {s, std::nullopt};

  const bool new_goal = in.goal && in.goal->version != s.planned_version;
  switch (s.phase) {
    case IpolPhase::Unplanned:
      if (in.goal) s.phase = IpolPhase::Planning;
      return {s, std::nullopt};
    case IpolPhase::Planning: {
      s.trajectory = plan_trapezoidal(in.q, in.goal->q, in.goal->vmax, in.goal->amax);
      s.planned_version = in.goal->version;
      s.t0 = in.now;
      s.phase = s.trajectory->T > 0.0 ? IpolPhase::Running : IpolPhase::Done;
      return {s, s.trajectory->position(0.0)};
    }
    case IpolPhase::Running: {
      if (new_goal) {
        s.phase = IpolPhase::Planning;
        return {s, s.trajectory->position(in.now - s.t0)};
      }
      const double t = in.now - s.t0;
      if (t >= s.trajectory->T) s.phase = IpolPhase::Done;
      return {s, s.trajectory->position(t)};
    }
    case IpolPhase::Done:
      if (new_goal) s.phase = IpolPhase::Planning;
      return {s, s.trajectory->goal()};
  }
  return {s, std::nullopt};
}

// --- joint level ---------------------------------------------------------------

enum class JointFsm : std::uint8_t {
  Resetting = 0,
  Referencing = 1,
  ReadyPosition = 2,
  ReadyImpedance = 3,
  ReadyTorque = 4,
};

inline const char* to_string(JointFsm s) {
  switch (s) {
    case JointFsm::Resetting: return "RESETTING";
    case JointFsm::Referencing: return "REFERENCING";
    case JointFsm::ReadyPosition: return "READY_POSITION";
    case JointFsm::ReadyImpedance: return "READY_IMPEDANCE";
    case JointFsm::ReadyTorque: return "READY_TORQUE";
  }
  return "?";
}

inline bool joint_ready(JointFsm s) { return s >= JointFsm::ReadyPosition; }

inline JointFsm ready_state_for(hal::JointMode m) {
  switch (m) {
    case hal::JointMode::Impedance: return JointFsm::ReadyImpedance;
    case hal::JointMode::Torque: return JointFsm::ReadyTorque;
    default: return JointFsm::ReadyPosition;
  }
}

/// RESETTING lasts one cycle; REFERENCING waits for the joint's referenced
/// flag; a ready joint follows the requested joint controller.
inline JointFsm joint_step(JointFsm s, bool reset, bool referenced, hal::JointMode wanted) {
  if (reset) return JointFsm::Resetting;
  switch (s) {
    case JointFsm::Resetting: return JointFsm::Referencing;
    case JointFsm::Referencing: return referenced ? JointFsm::ReadyPosition : JointFsm::Referencing;
    default: return referenced ? ready_state_for(wanted) : JointFsm::Referencing;
  }
}

}  // namespace spacedream::ctl
