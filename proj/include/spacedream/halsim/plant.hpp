#pragma once

#include <algorithm>
#include <bit>
#include <filesystem>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/files.hpp"
#include "spacedream/halsim/types.hpp"

namespace spacedream::hal {

/// Desk-scale plant parameters. Zero gravity, decoupled joints.
struct PlantParams {
  double friction = 0.05;   // viscous, N·m·s/rad
  double hard_limit = 2.8;  // rad, symmetric
  double dt = 0.01;         // s, one link cycle
  int substeps = 10;        // joint electronics close their loop at dt / substeps
};

struct PlantState {
  JointVector q{};
  JointVector qdot{};
  JointVector inertia{1.0, 0.8, 0.5, 0.2};  // kg·m²
  bool persisted = false;  // restored from disk

  bool operator==(const PlantState&) const = default;
};

/// One explicit (semi-implicit) Euler step of the double-integrator joints:
///   qdot += (tau - b·qdot)/I·dt,  q += qdot·dt
/// Positions are clamped at the hard limits and the velocity is zeroed on contact.
inline PlantState step_plant(PlantState s, const JointVector& torque, double dt, double friction,
                             double hard_limit) {
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.qdot[j] += (torque[j] - friction * s.qdot[j]) / s.inertia[j] * dt;
    s.q[j] += s.qdot[j] * dt;
    if (s.q[j] > hard_limit || s.q[j] < -hard_limit) {
      s.q[j] = std::clamp(s.q[j], -hard_limit, hard_limit);
      s.qdot[j] = 0.0;
    }
  }
  return s;
}

inline PlantState step_plant(const PlantState& s, const JointVector& torque, const PlantParams& p) {
  return step_plant(s, torque, p.dt, p.friction, p.hard_limit);
}

inline double kinetic_energy(const PlantState& s) {
  double e = 0.0;
  for (std::size_t j = 0; j < kJoints; ++j) e += 0.5 * s.inertia[j] * s.qdot[j] * s.qdot[j];
  return e;
}

// state/plant.bin: "SDPS" | u8 version | 4 x (f64 q, f64 qdot, f64 inertia)

inline Bytes encode_plant(const PlantState& s) {
  ByteWriter w;
  w.raw(std::string_view("SDPS")).u8(1);
  for (std::size_t j = 0; j < kJoints; ++j) w.f64(s.q[j]).f64(s.qdot[j]).f64(s.inertia[j]);
  return std::move(w).take();
}

inline PlantState decode_plant(ByteView b) {
  ByteReader r(b);
  if (as_string(r.raw(4)) != "SDPS" || r.u8() != 1) throw DecodeError("not a plant state file");
  PlantState s;
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.q[j] = r.f64();
    s.qdot[j] = r.f64();
    s.inertia[j] = r.f64();
  }
  s.persisted = true;
  return s;
}

inline void save_plant(const std::filesystem::path& path, const PlantState& s) { write_file_atomic(path, encode_plant(s)); }
inline PlantState load_plant(const std::filesystem::path& path) { return decode_plant(read_file(path)); }

}  // namespace spacedream::hal
