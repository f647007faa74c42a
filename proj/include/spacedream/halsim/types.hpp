#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/error.hpp"

namespace spacedream::hal {

inline constexpr std::size_t kJoints = 4;

template <typename T>
using PerJoint = std::array<T, kJoints>;
using JointVector = PerJoint<double>;

enum class HalErrc { ProtocolViolation, CommandOutOfRange, ConfigRejected, UnknownJoint, BadRecord };
using HalError = Error<HalErrc>;

enum StatusFlag : std::uint8_t {
  kReferenced = 1u << 0,
  kError = 1u << 1,
  kMotorOn = 1u << 2,
};

/// Reported instead of a torque value while the joint's torque sensor is invalid.
inline constexpr double kTorqueInvalidSentinel = 9999.0;

struct JointTelemetry {
  std::uint8_t joint_id = 0;
  double position = 0.0;  // rad
  double velocity = 0.0;  // rad/s
  double torque = 0.0;    // N·m
  std::uint8_t status_flags = 0;
  std::uint32_t cycle_counter = 0;

  bool referenced() const { return status_flags & kReferenced; }
  bool error() const { return status_flags & kError; }
  bool motor_on() const { return status_flags & kMotorOn; }
  bool operator==(const JointTelemetry&) const = default;
};

enum class JointMode : std::uint8_t { Off = 0, Position = 1, Impedance = 2, Torque = 3 };

inline const char* to_string(JointMode m) {
  switch (m) {
    case JointMode::Off: return "off";
    case JointMode::Position: return "position";
    case JointMode::Impedance: return "impedance";
    case JointMode::Torque: return "torque";
  }
  return "?";
}

struct JointCommand {
  std::uint8_t joint_id = 0;
  JointMode mode = JointMode::Off;
  double q_des = 0.0;      // rad
  double tau_des = 0.0;    // N·m, feed-forward in position/impedance mode
  double stiffness = 0.0;  // N·m/rad
  double damping = 0.0;    // N·m·s/rad

  bool operator==(const JointCommand&) const = default;
};

using TelemetrySet = PerJoint<JointTelemetry>;
using CommandSet = PerJoint<JointCommand>;

inline CommandSet all_off() {
  CommandSet out{};
  for (std::size_t j = 0; j < kJoints; ++j) out[j].joint_id = static_cast<std::uint8_t>(j);
  return out;
}

/// Torque a joint applies for a position/impedance command: K·(q_des − q) − D·qdot + tau_ff.
inline double joint_law_torque(double stiffness, double damping, double q_des, double q, double qdot,
                               double feed_forward = 0.0) {
  return stiffness * (q_des - q) - damping * qdot + feed_forward;
}

// Fixed-layout wire records. hal/telemetry carries 4 x 30 bytes, hal/command 4 x 34 bytes.

inline constexpr const char* kTelemetrySchema = "hal.JointTelemetry[4]/1";
inline constexpr const char* kCommandSchema = "hal.JointCommand[4]/1";
inline constexpr std::size_t kTelemetryRecordSize = 30;
inline constexpr std::size_t kCommandRecordSize = 34;

inline Bytes encode_telemetry(const TelemetrySet& set) {
  ByteWriter w;
  for (const auto& t : set)
    w.u8(t.joint_id).f64(t.position).f64(t.velocity).f64(t.torque).u8(t.status_flags).u32(t.cycle_counter);
  return std::move(w).take();
}

inline TelemetrySet decode_telemetry(ByteView bytes) {
  if (bytes.size() != kJoints * kTelemetryRecordSize) throw HalError(HalErrc::BadRecord, "telemetry record size");
  ByteReader r(bytes);
  TelemetrySet set{};
  for (auto& t : set) {
    t.joint_id = r.u8();
    t.position = r.f64();
    t.velocity = r.f64();
    t.torque = r.f64();
    t.status_flags = r.u8();
    t.cycle_counter = r.u32();
  }
  return set;
}

inline Bytes encode_commands(const CommandSet& set) {
  ByteWriter w;
  for (const auto& c : set)
    w.u8(c.joint_id).u8(static_cast<std::uint8_t>(c.mode)).f64(c.q_des).f64(c.tau_des).f64(c.stiffness).f64(c.damping);
  return std::move(w).take();
}

inline CommandSet decode_commands(ByteView bytes) {
  if (bytes.size() != kJoints * kCommandRecordSize) throw HalError(HalErrc::BadRecord, "command record size");
  ByteReader r(bytes);
  CommandSet set{};
  for (auto& c : set) {
    c.joint_id = r.u8();
    auto mode = r.u8();
    if (mode > 3) throw HalError(HalErrc::BadRecord, "command mode");
    c.mode = static_cast<JointMode>(mode);
    c.q_des = r.f64();
    c.tau_des = r.f64();
    c.stiffness = r.f64();
    c.damping = r.f64();
  }
  return set;
}

}  // namespace spacedream::hal
