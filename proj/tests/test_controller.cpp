#include <gtest/gtest.h>

#include <random>

#include "spacedream/controller/node.hpp"

using namespace spacedream;
using namespace spacedream::ctl;
using namespace std::chrono_literals;

namespace {

// Time-optimal rest-to-rest motion simulated with a tiny step: accelerate while
// the braking distance is shorter than what is left, never exceed vmax.
double simulated_min_time(double d, double vmax, double amax, double dt = 1e-6) {
  double x = 0.0, v = 0.0, t = 0.0;
  while (x < d) {
    const double brake = v * v / (2.0 * amax);
    if (d - x <= brake)
      v -= amax * dt;
    else
      v = std::min(vmax, v + amax * dt);
    if (v <= 0.0) break;
    x += v * dt;
    t += dt;
  }
  return t;
}

HighLevelState ready(ControlMode m) { return {HlState::Ready, m}; }

struct Rig {
  bus::Bus bus;
  hal::SimulatedArm arm;
  hal::HalNode hal{bus, arm};
  ControllerNode ctl;
  bus::Subscription commands = bus.subscribe(hal::kCommandTopic, 4096);
  TimePoint now{};

  explicit Rig(ControllerConfig cfg = {}) : ctl(bus, cfg) { hal.configure(); }

  void step(int n = 1) {
    for (int i = 0; i < n; ++i) {
      now += kCyclePeriod;
      hal.tick(now);
      ctl.tick(now);
    }
  }
  void power() { bus.call_service(hal::kPowerService, Bytes{1}, 1s); }
};

}  // namespace

// --- trajectories ----------------------------------------------------------------

TEST(Trajectory, TriangleAtBoundary) {
  auto p = plan_trapezoidal(0.0, 1.0, 1.0, 1.0);
  EXPECT_NEAR(p.T, 2.0, 1e-12);
  EXPECT_NEAR(p.velocity(1.0), 1.0, 1e-12);
  EXPECT_EQ(p.position(p.T), 1.0);
  EXPECT_NEAR(p.T, simulated_min_time(1.0, 1.0, 1.0), 1e-4);
}

TEST(Trajectory, TrapezoidCruisePhase) {
  auto p = plan_trapezoidal(0.0, 4.0, 1.0, 1.0);
  EXPECT_NEAR(p.T, 5.0, 1e-12);
  EXPECT_NEAR(p.ta, 1.0, 1e-12);
  EXPECT_NEAR(p.T, simulated_min_time(4.0, 1.0, 1.0), 1e-4);
  // integrate the analytic velocity and compare with the analytic position
  double x = 0.0;
  const double h = 1e-4;
  for (int i = 0; i < 50000; ++i) {
    x += 0.5 * (p.velocity(i * h) + p.velocity((i + 1) * h)) * h;
    if (i % 5000 == 4999) {
      EXPECT_NEAR(x, p.position((i + 1) * h), 1e-6);
    }
  }
}

TEST(Trajectory, IdentityPlanIsConstant) {
  auto p = plan_trapezoidal(0.7, 0.7, 1.0, 1.0);
  EXPECT_EQ(p.T, 0.0);
  EXPECT_EQ(p.position(0.0), 0.7);
  EXPECT_EQ(p.position(3.0), 0.7);
  EXPECT_EQ(p.velocity(0.5), 0.0);
}

TEST(Trajectory, NonPositiveLimitsAreInfeasible) {
  for (auto [v, a] : {std::pair{0.0, 1.0}, {1.0, 0.0}, {-1.0, 1.0}, {1.0, -2.0}}) {
    try {
      plan_trapezoidal(0.0, 1.0, v, a);
      ADD_FAILURE() << "expected PlanInfeasible";
    } catch (const ControllerError& e) {
      EXPECT_EQ(e.code(), ControllerErrc::PlanInfeasible);
    }
  }
}

TEST(Trajectory, RandomPlansRespectLimitsAndShareDuration) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-2.7, 2.7), lim(0.05, 3.0);
  const double h = 1e-4;
  for (int trial = 0; trial < 200; ++trial) {
    JointVector q0{}, qf{}, vmax{}, amax{};
    for (std::size_t j = 0; j < kJoints; ++j) {
      q0[j] = pos(rng);
      qf[j] = pos(rng);
      vmax[j] = lim(rng);
      amax[j] = lim(rng);
    }
    auto tr = plan_trapezoidal(q0, qf, vmax, amax);
    for (std::size_t j = 0; j < kJoints; ++j) {
      const auto& p = tr.joints[j];
      ASSERT_EQ(p.T, tr.T);
      EXPECT_LE(min_duration(std::abs(qf[j] - q0[j]), vmax[j], amax[j]), tr.T + 1e-12);
      EXPECT_EQ(p.position(0.0), q0[j]);
      EXPECT_EQ(p.position(tr.T), qf[j]);
      EXPECT_LE(p.v, vmax[j] * (1 + 1e-9));
      for (double t = h; t < tr.T - h; t += tr.T / 97.0) {
        EXPECT_LE(std::abs(p.velocity(t)), vmax[j] * (1 + 1e-9));
        EXPECT_LE(std::abs(p.acceleration(t)), amax[j]);
        const bool straddles = (t - h < p.ta && t + h > p.ta) || (t - h < p.T - p.ta && t + h > p.T - p.ta);
        if (straddles) continue;
        const double fd = (p.position(t + h) - p.position(t - h)) / (2 * h);
        EXPECT_NEAR(fd, p.velocity(t), 1e-6 * vmax[j]);
      }
    }
  }
}

// --- control laws ------------------------------------------------------------------

TEST(Laws, ImpedanceTorque) {
  GainConfig g;
  JointVector q{}, qdot{}, qd{};
  EXPECT_EQ(impedance_torque(q, qdot, qd, g), JointVector{});
  g.stiffness = {10, 10, 10, 10};
  g.damping = {1, 1, 1, 1};
  qd[0] = 0.1;
  qdot[0] = 0.2;
  EXPECT_NEAR(impedance_torque(q, qdot, qd, g)[0], 0.8, 1e-12);
  g.stiffness = {};
  g.damping = {};
  EXPECT_EQ(impedance_torque({1, 2, 3, 4}, {1, 1, 1, 1}, {0, 0, 0, 0}, g), JointVector{});
}

TEST(Laws, LimitAvoidanceExamples) {
  GainConfig g;
  hal::JointCommand c;
  c.mode = hal::JointMode::Position;
  c.q_des = 3.0;
  EXPECT_NEAR(limit_avoidance(c, 0.0, g).q_des, 2.7, 1e-12);
  c.mode = hal::JointMode::Torque;
  c.tau_des = 0.0;
  EXPECT_NEAR(limit_avoidance(c, 2.75, g).tau_des, -1.0, 1e-9);
  c.tau_des = 0.3;
  EXPECT_EQ(limit_avoidance(c, 1.0, g), c);
  c.mode = hal::JointMode::Impedance;
  c.q_des = 0.5;
  EXPECT_EQ(limit_avoidance(c, 0.0, g), c);
}

TEST(Laws, LimitAvoidanceProperty) {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> u(-10, 10), qd(-2.8, 2.8);
  GainConfig g;
  for (int i = 0; i < 100000; ++i) {
    hal::JointCommand c;
    c.mode = static_cast<hal::JointMode>(rng() % 4);
    c.q_des = u(rng);
    c.tau_des = u(rng);
    const double q = qd(rng);
    auto out = limit_avoidance(c, q, g);
    if (c.mode == hal::JointMode::Position || c.mode == hal::JointMode::Impedance) {
      ASSERT_LE(std::abs(out.q_des), g.soft_limit());
    } else if (c.mode == hal::JointMode::Torque) {
      const double corr = out.tau_des - c.tau_des;
      if (std::abs(q) <= g.soft_limit())
        ASSERT_EQ(corr, 0.0);
      else
        ASSERT_LT(corr * q, 0.0);
    }
  }
}

TEST(Laws, InvalidGains) {
  GainConfig g;
  g.stiffness[2] = -1;
  EXPECT_THROW(g.validate(), ControllerError);
  g = {};
  g.margin = 3.0;
  EXPECT_THROW(g.validate(), ControllerError);
}

// --- state machines ------------------------------------------------------------------

TEST(HighLevel, InitWaitsForReferencing) {
  HighLevelState s;
  EXPECT_EQ(hl_step(s, false, ControlMode::ManualPosition, false).next.state, HlState::Init);
  EXPECT_EQ(hl_step(s, true, ControlMode::ManualPosition, false).next.state, HlState::Idle);
}

TEST(HighLevel, SwitchInsideReadyIsImmediate) {
  auto r = hl_step(ready(ControlMode::ManualPosition), true, ControlMode::ManualImpedance, false);
  EXPECT_EQ(r.next, ready(ControlMode::ManualImpedance));
  EXPECT_FALSE(r.reset_trigger);
}

TEST(HighLevel, ErrorResetsToInit) {
  for (auto m : {ControlMode::ManualPosition, ControlMode::ManualTorque, ControlMode::Interpolator}) {
    auto r = hl_step(ready(m), true, m, true);
    EXPECT_EQ(r.next.state, HlState::Init);
    EXPECT_TRUE(r.reset_trigger);
  }
  EXPECT_FALSE(hl_step(HighLevelState{}, true, std::nullopt, true).reset_trigger);
}

TEST(HighLevel, ReadyOnlyFromIdleRandomised) {
  std::mt19937 rng(7);
  HighLevelState s;
  for (int i = 0; i < 20000; ++i) {
    std::optional<ControlMode> req;
    if (rng() % 4) req = static_cast<ControlMode>(rng() % 5);
    auto r = hl_step(s, rng() % 8 != 0, req, rng() % 50 == 0);
    if (r.next.ready() && !s.ready()) {
      ASSERT_EQ(s.state, HlState::Idle);
    }
    if (s.ready() && r.next.state != HlState::Ready) {
      ASSERT_TRUE(!req || r.next.state == HlState::Init);
    }
    s = r.next;
  }
}

TEST(Interpolator, PlansInOneCycle) {
  Goal g{{0.5, 0, 0, 0}, 1.0, 1.0, 1};
  InterpolatorState s;
  auto o = ipol_step(s, {true, false, &g, {}, 0.0});
  EXPECT_EQ(o.next.phase, IpolPhase::Planning);
  EXPECT_FALSE(o.target);
  o = ipol_step(o.next, {true, false, &g, {}, 0.01});
  EXPECT_EQ(o.next.phase, IpolPhase::Running);
  ASSERT_TRUE(o.next.trajectory);
  o = ipol_step(o.next, {true, false, &g, {}, 10.0});
  EXPECT_EQ(o.next.phase, IpolPhase::Done);
  EXPECT_EQ((*o.target)[0], 0.5);
}

TEST(Interpolator, ControllerChangeReplansFromCurrentPosition) {
  Goal g{{1.0, 0, 0, 0}, 1.0, 1.0, 1};
  InterpolatorState s;
  s = ipol_step(s, {true, false, &g, {}, 0.0}).next;
  s = ipol_step(s, {true, false, &g, {}, 0.01}).next;
  s = ipol_step(s, {true, false, &g, {}, 0.5}).next;
  ASSERT_EQ(s.phase, IpolPhase::Running);
  s = ipol_step(s, {false, true, &g, {0.1, 0, 0, 0}, 0.6}).next;  // → manual position
  EXPECT_EQ(s.phase, IpolPhase::Unplanned);
  EXPECT_FALSE(s.trajectory);
  s = ipol_step(s, {true, true, &g, {0.3, 0, 0, 0}, 0.7}).next;  // back to the interpolator
  EXPECT_EQ(s.phase, IpolPhase::Unplanned);
  s = ipol_step(s, {true, false, &g, {0.3, 0, 0, 0}, 0.71}).next;
  EXPECT_EQ(s.phase, IpolPhase::Planning);
  s = ipol_step(s, {true, false, &g, {0.3, 0, 0, 0}, 0.72}).next;
  EXPECT_EQ(s.phase, IpolPhase::Running);
  EXPECT_EQ(s.trajectory->joints[0].q0, 0.3);
}

TEST(JointLevel, ReadyOnlyAfterReferenced) {
  auto s = JointFsm::Resetting;
  s = joint_step(s, false, true, hal::JointMode::Impedance);
  EXPECT_EQ(s, JointFsm::Referencing);
  s = joint_step(s, false, false, hal::JointMode::Impedance);
  EXPECT_EQ(s, JointFsm::Referencing);
  s = joint_step(s, false, true, hal::JointMode::Impedance);
  EXPECT_EQ(s, JointFsm::ReadyPosition);
  s = joint_step(s, false, true, hal::JointMode::Impedance);
  EXPECT_EQ(s, JointFsm::ReadyImpedance);
  EXPECT_EQ(joint_step(s, true, true, hal::JointMode::Impedance), JointFsm::Resetting);
}

TEST(ControllerRecords, StatusRoundTrip) {
  ControllerStatus s;
  s.cycle = 42;
  s.hl = ready(ControlMode::Interpolator);
  s.ipol = IpolPhase::Running;
  s.joints[2] = JointFsm::ReadyTorque;
  s.flags = kStale | kTorqueInvalid;
  s.q = {0.1, 0.2, 0.3, 0.4};
  s.tracking_error = {1e-3, 0, 0, -2e-3};
  s.ipol_time = 1.25;
  EXPECT_EQ(decode_status(encode_status(s)), s);
  EXPECT_THROW(decode_status(Bytes(5)), ControllerError);
  EXPECT_THROW(parse_mode("warp"), ControllerError);
  EXPECT_EQ(parse_mode("idle"), std::nullopt);
  EXPECT_EQ(parse_mode("impedance"), ControlMode::ManualImpedance);
}

// --- node against the simulated arm --------------------------------------------------------

TEST(ControllerNode, OneCommandSetPerTick) {
  Rig rig;
  rig.power();
  rig.step(1000);
  EXPECT_EQ(rig.bus.published_count(hal::kCommandTopic), 1000u);
  EXPECT_EQ(rig.ctl.cycles(), 1000u);
}

TEST(ControllerNode, ReachesIdleAfterReferencingAndReadyOnRequest) {
  Rig rig;
  rig.step(5);
  EXPECT_EQ(rig.ctl.status().hl.state, HlState::Init);
  rig.power();
  rig.step(hal::kReferencingCycles + 3);
  EXPECT_EQ(rig.ctl.status().hl.state, HlState::Idle);
  rig.bus.set_parameter(kModeParam, std::string("impedance"));
  rig.bus.set_parameter(kQDesParam, std::vector<double>{0.2, -0.1, 0.0, 0.3});
  rig.step(2);
  EXPECT_EQ(rig.ctl.status().hl, ready(ControlMode::ManualImpedance));
  auto c = rig.ctl.last_commands();
  for (std::size_t j = 0; j < kJoints; ++j) EXPECT_EQ(c[j].mode, hal::JointMode::Impedance);
  EXPECT_EQ(c[0].q_des, 0.2);
  EXPECT_EQ(c[3].q_des, 0.3);
}

TEST(ControllerNode, StaleTelemetryForcesInit) {
  Rig rig;
  rig.power();
  rig.bus.set_parameter(kModeParam, std::string("position"));
  rig.step(20);
  ASSERT_TRUE(rig.ctl.status().hl.ready());
  for (int i = 1; i <= 4; ++i) {
    rig.now += kCyclePeriod;
    rig.ctl.tick(rig.now);  // HAL silent
  }
  EXPECT_EQ(rig.ctl.status().hl.state, HlState::Init);
  EXPECT_EQ(rig.ctl.resets(), 1u);
}

TEST(ControllerNode, UnpoweredArmOnlyGetsOffCommands) {
  Rig rig;
  rig.bus.set_parameter(kModeParam, std::string("interpolator"));
  rig.bus.set_parameter(kGoalParam, std::vector<double>{1, 1, 1, 1});
  rig.step(500);
  for (const auto& m : rig.commands.drain())
    for (const auto& c : hal::decode_commands(m.payload)) ASSERT_EQ(c.mode, hal::JointMode::Off);
  EXPECT_EQ(rig.arm.plant().q, JointVector{});
}

TEST(ControllerNode, TorqueSentinelOnlyBlocksTorqueModes) {
  Rig rig;
  rig.power();
  rig.arm.inject_fault({hal::FaultKind::TorqueSensorInvalid, 1, true});
  rig.bus.set_parameter(kModeParam, std::string("position"));
  rig.step(20);
  EXPECT_EQ(rig.ctl.status().hl, ready(ControlMode::ManualPosition));
  rig.bus.set_parameter(kModeParam, std::string("impedance"));
  rig.step(1);
  EXPECT_EQ(rig.ctl.status().hl.state, HlState::Init);
  EXPECT_GE(rig.ctl.resets(), 1u);
}

TEST(ControllerNode, InterpolatorReachesGoalThroughPlanService) {
  Rig rig;
  rig.power();
  rig.bus.set_parameter(kModeParam, std::string("interpolator"));
  rig.step(15);
  rig.bus.call_service(kPlanService, encode_plan_request({0.4, -0.3, 0.2, 0.1}, 0.5, 1.0), 1s);
  rig.step(2);
  EXPECT_EQ(rig.ctl.status().ipol, IpolPhase::Running);
  rig.step(600);
  EXPECT_EQ(rig.ctl.status().ipol, IpolPhase::Done);
  EXPECT_NEAR(rig.arm.plant().q[0], 0.4, 2e-3);
  EXPECT_NEAR(rig.arm.plant().q[1], -0.3, 2e-3);
  EXPECT_THROW(rig.bus.call_service(kPlanService, encode_plan_request({}, 0.0, 1.0), 1s), bus::BusError);
}

TEST(ControllerNode, JitterMeasurementOnWallClock) {
  std::size_t ticks = 0;
  auto st = run_wallclock([&](TimePoint) { ++ticks; }, kCyclePeriod, 30);
  EXPECT_EQ(ticks, 30u);
  EXPECT_EQ(st.cycles, 29u);
  EXPECT_NEAR(st.mean_period, 0.01, 0.005);
}
