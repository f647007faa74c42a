#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "spacedream/common/error.hpp"
#include "spacedream/halsim/types.hpp"

namespace spacedream::ctl {

using hal::JointVector;
using hal::kJoints;
using hal::PerJoint;

enum class ControllerErrc { PlanInfeasible, TelemetryStale, InvalidGains, UnknownMode, BadRecord };
using ControllerError = Error<ControllerErrc>;

/// Trapezoidal (or triangular) velocity profile of one joint.
struct JointProfile {
  double q0 = 0.0;
  double qf = 0.0;
  double v = 0.0;   // cruise speed actually used, ≤ vmax
  double a = 0.0;   // acceleration magnitude
  double ta = 0.0;  // acceleration phase length (= deceleration phase length)
  double T = 0.0;

  double direction() const { return qf >= q0 ? 1.0 : -1.0; }

  double position(double t) const {
    if (t <= 0.0 || T == 0.0) return q0;
    if (t >= T) return qf;
    const double s = direction();
    if (t < ta) return q0 + s * 0.5 * a * t * t;
    if (t <= T - ta) return q0 + s * (0.5 * a * ta * ta + v * (t - ta));
    const double r = T - t;
    return qf - s * 0.5 * a * r * r;
  }

  double velocity(double t) const {
    if (t <= 0.0 || t >= T) return 0.0;
    const double s = direction();
    if (t < ta) return s * a * t;
    if (t <= T - ta) return s * v;
    return s * a * (T - t);
  }

  double acceleration(double t) const {
    if (t <= 0.0 || t >= T) return 0.0;
    if (t < ta) return direction() * a;
    if (t <= T - ta) return 0.0;
    return -direction() * a;
  }
};

/// Minimum time to travel distance d from rest to rest.
inline double min_duration(double d, double vmax, double amax) {
  if (d <= 0.0) return 0.0;
  if (d <= vmax * vmax / amax) return 2.0 * std::sqrt(d / amax);
  return d / vmax + vmax / amax;
}

/// Profile of one joint stretched to duration T ≥ its minimum duration.
inline JointProfile stretch_profile(double q0, double qf, double amax, double T) {
  JointProfile p{q0, qf, 0.0, amax, 0.0, T};
  const double d = std::abs(qf - q0);
  if (d == 0.0 || T == 0.0) {
    p.T = T;
    return p;
  }
  // v·(T − v/a) = d  →  v = (aT − sqrt(a²T² − 4ad)) / 2
  const double disc = std::max(0.0, amax * amax * T * T - 4.0 * amax * d);
  p.v = 0.5 * (amax * T - std::sqrt(disc));
  p.ta = p.v / amax;
  return p;
}

struct Trajectory {
  PerJoint<JointProfile> joints{};
  double T = 0.0;

  JointVector start() const {
    JointVector q{};
    for (std::size_t j = 0; j < kJoints; ++j) q[j] = joints[j].q0;
    return q;
  }
  JointVector goal() const {
    JointVector q{};
    for (std::size_t j = 0; j < kJoints; ++j) q[j] = joints[j].qf;
    return q;
  }
  JointVector position(double t) const {
    JointVector q{};
    for (std::size_t j = 0; j < kJoints; ++j) q[j] = joints[j].position(t);
    return q;
  }
  JointVector velocity(double t) const {
    JointVector v{};
    for (std::size_t j = 0; j < kJoints; ++j) v[j] = joints[j].velocity(t);
    return v;
  }
};

inline void check_plan_limits(double vmax, double amax) {
  if (!(vmax > 0.0) || !(amax > 0.0) || !std::isfinite(vmax) || !std::isfinite(amax))
    throw ControllerError(ControllerErrc::PlanInfeasible,
                          "vmax and amax must be positive (vmax=" + std::to_string(vmax) +
                              ", amax=" + std::to_string(amax) + ")");
}

/// Single joint, no synchronization.
inline JointProfile plan_trapezoidal(double q0, double qf, double vmax, double amax) {
  check_plan_limits(vmax, amax);
  return stretch_profile(q0, qf, amax, min_duration(std::abs(qf - q0), vmax, amax));
}

/// All joints start and stop together: each joint is slowed down to the slowest joint's duration.
inline Trajectory plan_trapezoidal(const JointVector& q0, const JointVector& qf, const JointVector& vmax,
                                   const JointVector& amax) {
  Trajectory tr;
  for (std::size_t j = 0; j < kJoints; ++j) {
    check_plan_limits(vmax[j], amax[j]);
    if (!std::isfinite(q0[j]) || !std::isfinite(qf[j]))
      throw ControllerError(ControllerErrc::PlanInfeasible, "non-finite endpoint");
    tr.T = std::max(tr.T, min_duration(std::abs(qf[j] - q0[j]), vmax[j], amax[j]));
  }
  for (std::size_t j = 0; j < kJoints; ++j) tr.joints[j] = stretch_profile(q0[j], qf[j], amax[j], tr.T);
  return tr;
}

inline Trajectory plan_trapezoidal(const JointVector& q0, const JointVector& qf, double vmax, double amax) {
  JointVector v{}, a{};
  v.fill(vmax);
  a.fill(amax);
  return plan_trapezoidal(q0, qf, v, a);
}

}  // namespace spacedream::ctl
