#pragma once

#include <cmath>
#include <string>

#include "spacedream/halsim/plant.hpp"
#include "spacedream/halsim/types.hpp"

namespace spacedream::hal {

enum class FaultKind : std::uint8_t { TorqueSensorInvalid = 0, JointStuck = 1, LinkCorruptConfig = 2 };

inline const char* to_string(FaultKind k) {
  switch (k) {
    case FaultKind::TorqueSensorInvalid: return "torque_sensor_invalid";
    case FaultKind::JointStuck: return "joint_stuck";
    case FaultKind::LinkCorruptConfig: return "link_corrupt_config";
  }
  return "?";
}

struct FaultInjection {
  FaultKind kind = FaultKind::TorqueSensorInvalid;
  std::uint8_t joint_id = 0;
  bool active = true;
};

/// Joints reference themselves after this many powered cycles following a link configuration.
inline constexpr std::uint32_t kReferencingCycles = 10;
inline constexpr double kMaxCommandTorque = 200.0;

/// The physical arm: plant, joint electronics and injected faults. Survives
/// restarts of the HAL process and reboots of the computer.
class SimulatedArm {
 public:
  explicit SimulatedArm(PlantState initial = {}, PlantParams params = {}) : plant_(initial), params_(params) {}

  const PlantState& plant() const { return plant_; }
  void set_plant(const PlantState& s) { plant_ = s; }
  const PlantParams& params() const { return params_; }

  bool motor_power() const { return motor_on_; }
  void set_motor_power(bool on) {
    motor_on_ = on;
    if (!on) powered_cycles_.fill(0);
  }

  void inject_fault(const FaultInjection& f) {
    if (f.joint_id >= kJoints) throw HalError(HalErrc::UnknownJoint, "unknown joint " + std::to_string(f.joint_id));
    switch (f.kind) {
      case FaultKind::TorqueSensorInvalid: torque_invalid_[f.joint_id] = f.active; break;
      case FaultKind::JointStuck: stuck_[f.joint_id] = f.active; break;
      case FaultKind::LinkCorruptConfig: corrupt_config_ = f.active; break;
      default: throw HalError(HalErrc::BadRecord, "unknown fault kind");
    }
  }
  bool link_config_corrupt() const { return corrupt_config_; }

  /// Hard reset of the joint electronics: counters and referencing restart.
  void reset_electronics() {
    cycle_counter_.fill(0);
    powered_cycles_.fill(0);
  }

  /// Applies one validated command set (indexed by joint) for one link cycle.
  /// The joint law is re-evaluated on every substep, as the joint electronics
  /// run their own loop faster than the link.
  TelemetrySet step(const CommandSet& by_joint) {
    JointVector tau{};
    const auto before = plant_;
    const int n = std::max(1, params_.substeps);
    const double h = params_.dt / n;
    for (int k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < kJoints; ++j) tau[j] = applied_torque(by_joint[j], j);
      plant_ = step_plant(plant_, tau, h, params_.friction, params_.hard_limit);
    }
    for (std::size_t j = 0; j < kJoints; ++j) {
      if (stuck_[j]) {
        plant_.q[j] = before.q[j];
        plant_.qdot[j] = 0.0;
      }
    }

    TelemetrySet out{};
    for (std::size_t j = 0; j < kJoints; ++j) {
      ++cycle_counter_[j];
      if (motor_on_ && powered_cycles_[j] < kReferencingCycles) ++powered_cycles_[j];
      auto& t = out[j];
      t.joint_id = static_cast<std::uint8_t>(j);
      t.position = plant_.q[j];
      t.velocity = plant_.qdot[j];
      t.torque = torque_invalid_[j] ? kTorqueInvalidSentinel : tau[j];
      t.cycle_counter = cycle_counter_[j];
      t.status_flags = 0;
      if (powered_cycles_[j] >= kReferencingCycles) t.status_flags |= kReferenced;
      if (motor_on_) t.status_flags |= kMotorOn;
    }
    return out;
  }

 private:
  double applied_torque(const JointCommand& c, std::size_t j) const {
    if (!motor_on_) return 0.0;
    switch (c.mode) {
      case JointMode::Off: return 0.0;
      case JointMode::Torque: return c.tau_des;
      case JointMode::Position:
      case JointMode::Impedance:
        return joint_law_torque(c.stiffness, c.damping, c.q_des, plant_.q[j], plant_.qdot[j], c.tau_des);
    }
    return 0.0;
  }

  PlantState plant_;
  PlantParams params_;
  bool motor_on_ = false;
  bool corrupt_config_ = false;
  PerJoint<bool> torque_invalid_{};
  PerJoint<bool> stuck_{};
  PerJoint<std::uint32_t> cycle_counter_{};
  PerJoint<std::uint32_t> powered_cycles_{};
};

/// Framed cyclic link to the arm: a configuration phase must precede any cyclic exchange.
class HalLink {
 public:
  explicit HalLink(SimulatedArm& arm) : arm_(arm) {}

  void configure() {
    if (arm_.link_config_corrupt()) {
      configured_ = false;
      throw HalError(HalErrc::ConfigRejected, "joint rejected configuration frame");
    }
    arm_.reset_electronics();
    configured_ = true;
  }

  bool configured() const { return configured_; }

  TelemetrySet cycle(std::span<const JointCommand> commands) {
    if (!configured_) throw HalError(HalErrc::ProtocolViolation, "cyclic exchange before configuration");
    if (commands.size() != kJoints)
      throw HalError(HalErrc::ProtocolViolation, "expected one command per joint, got " + std::to_string(commands.size()));
    CommandSet by_joint{};
    PerJoint<bool> seen{};
    for (const auto& c : commands) {
      if (c.joint_id >= kJoints || seen[c.joint_id])
        throw HalError(HalErrc::ProtocolViolation, "command set must address each joint exactly once");
      seen[c.joint_id] = true;
      validate(c);
      by_joint[c.joint_id] = c;
    }
    return arm_.step(by_joint);
  }

  void inject_fault(const FaultInjection& f) { arm_.inject_fault(f); }
  SimulatedArm& arm() { return arm_; }

 private:
  static void validate(const JointCommand& c) {
    auto bad = [&](const char* what) {
      throw HalError(HalErrc::CommandOutOfRange, "joint " + std::to_string(c.joint_id) + ": " + what);
    };
    if (!std::isfinite(c.stiffness) || c.stiffness < 0.0) bad("stiffness must be finite and >= 0");
    if (!std::isfinite(c.damping) || c.damping < 0.0) bad("damping must be finite and >= 0");
    if (!std::isfinite(c.tau_des) || std::abs(c.tau_des) > kMaxCommandTorque) bad("torque out of range");
    if ((c.mode == JointMode::Position || c.mode == JointMode::Impedance) && !std::isfinite(c.q_des))
      bad("position target not finite");
  }

  SimulatedArm& arm_;
  bool configured_ = false;
};

}  // namespace spacedream::hal
