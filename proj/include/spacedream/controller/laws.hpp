#pragma once

#include <algorithm>
#include <cmath>

#include "spacedream/controller/trajectory.hpp"
#include "spacedream/halsim/arm.hpp"

namespace spacedream::ctl {

inline constexpr JointVector kNominalInertia{1.0, 0.8, 0.5, 0.2};

/// Near-critical damping for a joint of the given stiffness and inertia.
inline double default_damping(double stiffness, double inertia) { return 2.0 * std::sqrt(stiffness * inertia) * 0.7; }

inline JointVector default_damping(const JointVector& stiffness, const JointVector& inertia = kNominalInertia) {
  JointVector d{};
  for (std::size_t j = 0; j < kJoints; ++j) d[j] = default_damping(stiffness[j], inertia[j]);
  return d;
}

struct GainConfig {
  JointVector stiffness{10.0, 10.0, 10.0, 10.0};  // N·m/rad
  JointVector damping = default_damping(JointVector{10.0, 10.0, 10.0, 10.0});
  double margin = 0.1;      // rad, soft limit = hard limit − margin
  double k_lim = 20.0;      // N·m/rad
  double hard_limit = 2.8;  // rad

  double soft_limit() const { return hard_limit - margin; }

  void validate() const {
    for (std::size_t j = 0; j < kJoints; ++j) {
      if (!(stiffness[j] >= 0.0) || !std::isfinite(stiffness[j]) || !(damping[j] >= 0.0) || !std::isfinite(damping[j]))
        throw ControllerError(ControllerErrc::InvalidGains, "stiffness and damping must be finite and >= 0");
    }
    if (!(margin > 0.0 && margin < hard_limit))
      throw ControllerError(ControllerErrc::InvalidGains, "soft-limit margin must lie in (0, hard limit)");
    if (!(k_lim >= 0.0)) throw ControllerError(ControllerErrc::InvalidGains, "k_lim must be >= 0");
  }
};

/// tau_i = K_i·(q_des,i − q_i) − D_i·qdot_i
inline JointVector impedance_torque(const JointVector& q, const JointVector& qdot, const JointVector& q_des,
                                    const GainConfig& g) {
  JointVector tau{};
  for (std::size_t j = 0; j < kJoints; ++j)
    tau[j] = hal::joint_law_torque(g.stiffness[j], g.damping[j], q_des[j], q[j], qdot[j]);
  return tau;
}

/// Position/impedance targets are clamped into the soft range; in torque mode a
/// spring pushes the joint back once it is beyond the soft limit.
inline hal::JointCommand limit_avoidance(hal::JointCommand cmd, double q, const GainConfig& g) {
  const double soft = g.soft_limit();
  switch (cmd.mode) {
    case hal::JointMode::Position:
    case hal::JointMode::Impedance:
      cmd.q_des = std::clamp(cmd.q_des, -soft, soft);
      break;
    case hal::JointMode::Torque:
      if (q > soft)
        cmd.tau_des += -g.k_lim * (q - soft);
      else if (q < -soft)
        cmd.tau_des += -g.k_lim * (q + soft);
      break;
    case hal::JointMode::Off:
      break;
  }
  return cmd;
}

inline hal::CommandSet limit_avoidance(hal::CommandSet cmds, const JointVector& q, const GainConfig& g) {
  for (std::size_t j = 0; j < kJoints; ++j) cmds[j] = limit_avoidance(cmds[j], q[j], g);
  return cmds;
}

}  // namespace spacedream::ctl
