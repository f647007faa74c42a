#pragma once

#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/controller/fsm.hpp"
#include "spacedream/controller/laws.hpp"
#include "spacedream/halsim/node.hpp"

namespace spacedream::ctl {

inline constexpr const char* kStateTopic = "controller/state";
inline constexpr const char* kModeParam = "controller/mode";
inline constexpr const char* kQDesParam = "controller/q_des";
inline constexpr const char* kGainsParam = "controller/gains";
inline constexpr const char* kGoalParam = "controller/goal";
inline constexpr const char* kTauDesParam = "controller/tau_des";
inline constexpr const char* kPlanService = "controller/plan";

inline constexpr Duration kCyclePeriod = std::chrono::milliseconds(10);

// --- controller/state record -------------------------------------------------
//
//   u64 cycle | u8 hl | u8 mode (0xFF outside READY) | u8 ipol phase | 4 x u8 joint state |
//   u8 flags | 4 x (f64 q, f64 qdot, f64 q_cmd, f64 tau, f64 tracking error) | f64 ipol time

inline constexpr const char* kStateSchema = "controller.State/1";

enum StateFlag : std::uint8_t {
  kStale = 1u << 0,
  kResetEmitted = 1u << 1,
  kTorqueInvalid = 1u << 2,
  kJointError = 1u << 3,
};

struct ControllerStatus {
  std::uint64_t cycle = 0;
  HighLevelState hl;
  IpolPhase ipol = IpolPhase::Unplanned;
  PerJoint<JointFsm> joints{JointFsm::Resetting, JointFsm::Resetting, JointFsm::Resetting, JointFsm::Resetting};
  std::uint8_t flags = 0;
  JointVector q{}, qdot{}, q_cmd{}, tau{}, tracking_error{};
  double ipol_time = 0.0;

  std::optional<ControlMode> mode() const { return active_controller(hl); }
  bool operator==(const ControllerStatus&) const = default;
};

inline Bytes encode_status(const ControllerStatus& s) {
  ByteWriter w;
  w.u64(s.cycle).u8(static_cast<std::uint8_t>(s.hl.state));
  w.u8(s.hl.ready() ? static_cast<std::uint8_t>(s.hl.ready_mode) : 0xFF);
  w.u8(static_cast<std::uint8_t>(s.ipol));
  for (auto j : s.joints) w.u8(static_cast<std::uint8_t>(j));
  w.u8(s.flags);
  for (std::size_t j = 0; j < kJoints; ++j)
    w.f64(s.q[j]).f64(s.qdot[j]).f64(s.q_cmd[j]).f64(s.tau[j]).f64(s.tracking_error[j]);
  w.f64(s.ipol_time);
  return std::move(w).take();
}

inline ControllerStatus decode_status(ByteView b) {
  try {
    ByteReader r(b);
    ControllerStatus s;
    s.cycle = r.u64();
    s.hl.state = static_cast<HlState>(r.u8());
    auto mode = r.u8();
    if (mode != 0xFF) s.hl.ready_mode = static_cast<ControlMode>(mode);
    s.ipol = static_cast<IpolPhase>(r.u8());
    for (auto& j : s.joints) j = static_cast<JointFsm>(r.u8());
    s.flags = r.u8();
    for (std::size_t j = 0; j < kJoints; ++j) {
      s.q[j] = r.f64();
      s.qdot[j] = r.f64();
      s.q_cmd[j] = r.f64();
      s.tau[j] = r.f64();
      s.tracking_error[j] = r.f64();
    }
    s.ipol_time = r.f64();
    if (s.hl.state > HlState::Ready || (mode > 4 && mode != 0xFF) || s.ipol > IpolPhase::Done)
      throw ControllerError(ControllerErrc::BadRecord, "bad controller state record");
    return s;
  } catch (const DecodeError& e) {
    throw ControllerError(ControllerErrc::BadRecord, e.what());
  }
}

// controller/plan request: 4 x f64 goal | f64 vmax | f64 amax     reply: empty

inline Bytes encode_plan_request(const JointVector& q, double vmax, double amax) {
  ByteWriter w;
  for (double v : q) w.f64(v);
  w.f64(vmax).f64(amax);
  return std::move(w).take();
}

struct ControllerConfig {
  GainConfig gains;                                   // impedance gains and limit avoidance
  JointVector position_stiffness{100.0, 100.0, 100.0, 100.0};
  JointVector inertia = kNominalInertia;              // used for default damping
  int stale_cycles = 3;                               // telemetry older than this many cycles is stale
  double default_vmax = 0.5;
  double default_amax = 0.5;
};

/// 100 Hz control process. One command set is published on every tick,
/// whatever the state machines say.
class ControllerNode {
 public:
  using LogSink = std::function<void(const std::string&)>;

  explicit ControllerNode(bus::Bus& bus, ControllerConfig cfg = {}, LogSink log = {})
      : bus_(bus), cfg_(cfg), log_(std::move(log)) {
    cfg_.gains.validate();
    bus_.register_topic({hal::kTelemetryTopic, hal::kTelemetrySchema, 100.0});
    bus_.register_topic({hal::kCommandTopic, hal::kCommandSchema, 100.0});
    bus_.register_topic({kStateTopic, kStateSchema, 100.0});
    bus_.register_service({kPlanService, "controller.PlanRequest/1", "empty"});
    declare(kModeParam, std::string("idle"));
    declare(kQDesParam, std::vector<double>(kJoints, 0.0));
    std::vector<double> gains(cfg_.gains.stiffness.begin(), cfg_.gains.stiffness.end());
    gains.insert(gains.end(), cfg_.gains.damping.begin(), cfg_.gains.damping.end());
    declare(kGainsParam, gains);
    declare(kTauDesParam, std::vector<double>(kJoints, 0.0));
    declare(kGoalParam, std::vector<double>(kJoints, 0.0));
    goal_param_version_ = bus_.parameter_version(kGoalParam);
    telemetry_ = bus_.subscribe(hal::kTelemetryTopic);
    bus_.attach_handler(kPlanService, [this](ByteView req) {
      ByteReader r(req);
      Goal g;
      for (auto& v : g.q) v = r.f64();
      g.vmax = r.f64();
      g.amax = r.f64();
      plan_trapezoidal(g.q, g.q, g.vmax, g.amax);  // validates limits and endpoints
      std::lock_guard lock(goal_mutex_);
      pending_goal_ = g;
      return Bytes{};
    });
  }

  ~ControllerNode() { bus_.detach_handler(kPlanService); }

  ControllerNode(const ControllerNode&) = delete;
  ControllerNode& operator=(const ControllerNode&) = delete;

  void tick(TimePoint now) {
    const double t = to_seconds(now);
    if (auto m = telemetry_.latest()) {
      try {
        tel_ = hal::decode_telemetry(m->payload);
        missed_ = 0;
        have_tel_ = true;
      } catch (const hal::HalError& e) {
        ++missed_;
        log(std::string("controller: bad telemetry: ") + e.what());
      }
    } else {
      ++missed_;
    }
    read_parameters(t);

    ControllerStatus st;
    st.cycle = ++cycles_;
    const bool stale = !have_tel_ || missed_ > cfg_.stale_cycles;
    bool joint_error = false, torque_invalid = false, referenced = true;
    JointVector q{}, qdot{}, tau_meas{};
    for (std::size_t j = 0; j < kJoints; ++j) {
      q[j] = tel_[j].position;
      qdot[j] = tel_[j].velocity;
      tau_meas[j] = tel_[j].torque;
      joint_error |= tel_[j].error();
      torque_invalid |= tel_[j].torque == hal::kTorqueInvalidSentinel;
      referenced &= tel_[j].referenced() && joint_ready(status_.joints[j]);
    }
    referenced &= !stale;

    const auto prev = status_.hl;
    auto hl = hl_step(prev, referenced, request_, stale || joint_error);
    if (torque_invalid && !hl.reset_trigger) {
      if (auto m = active_controller(hl.next); m && uses_torque_sensing(*m)) hl = hl_step(prev, referenced, request_, true);
    }
    if (hl.reset_trigger) emit_reset(stale, joint_error, torque_invalid);

    const auto before = active_controller(prev);
    const auto after = active_controller(hl.next);
    const bool changed = before != after || prev.state != hl.next.state;
    if (changed) hold_q_ = q;

    const Goal* goal = goal_ ? &*goal_ : nullptr;
    auto ip = ipol_step(ipol_, {after == ControlMode::Interpolator, before != after, goal, q, t});
    ipol_ = std::move(ip.next);

    auto intended = build_commands(hl.next, ip.target);
    hal::CommandSet out = hal::all_off();
    for (std::size_t j = 0; j < kJoints; ++j) {
      st.joints[j] = joint_step(status_.joints[j], hl.reset_trigger, tel_[j].referenced() && !stale, intended[j].mode);
      if (joint_ready(st.joints[j])) out[j] = intended[j];
    }
    out = limit_avoidance(out, q, gains_);
    for (auto& c : out) c.tau_des = std::clamp(c.tau_des, -hal::kMaxCommandTorque, hal::kMaxCommandTorque);

    st.hl = hl.next;
    st.ipol = ipol_.phase;
    st.flags = (stale ? kStale : 0) | (hl.reset_trigger ? kResetEmitted : 0) | (torque_invalid ? kTorqueInvalid : 0) |
               (joint_error ? kJointError : 0);
    st.q = q;
    st.qdot = qdot;
    st.tau = tau_meas;
    for (std::size_t j = 0; j < kJoints; ++j) {
      st.q_cmd[j] = out[j].mode == hal::JointMode::Off || out[j].mode == hal::JointMode::Torque ? q[j] : out[j].q_des;
      st.tracking_error[j] = st.q_cmd[j] - q[j];
    }
    st.ipol_time = ipol_.trajectory && ipol_.phase != IpolPhase::Unplanned ? t - ipol_.t0 : 0.0;
    status_ = st;
    last_commands_ = out;

    bus_.publish(hal::kCommandTopic, hal::encode_commands(out), now);
    bus_.publish(kStateTopic, encode_status(st), now);
    if (hl.next.state != prev.state || active_controller(hl.next) != before) {
      log(std::string("controller: ") + to_string(prev.state) + " -> " + to_string(hl.next.state) +
          (hl.next.ready() ? std::string("/") + to_string(hl.next.ready_mode) : std::string()));
    }
  }

  const ControllerStatus& status() const { return status_; }
  const hal::CommandSet& last_commands() const { return last_commands_; }
  const InterpolatorState& interpolator() const { return ipol_; }
  const GainConfig& gains() const { return gains_; }
  std::uint64_t cycles() const { return cycles_; }
  std::uint64_t resets() const { return resets_; }

 private:
  template <typename T>
  void declare(const char* name, T value) {
    try {
      bus_.declare_parameter(name, std::move(value));
    } catch (const bus::BusError& e) {
      if (e.code() != bus::BusErrc::DuplicateName) throw;  // restarted process: keep the live value
    }
  }

  void read_parameters(double) {
    try {
      request_ = parse_mode(bus_.get<std::string>(kModeParam));
    } catch (const ControllerError& e) {
      warn_once("mode", e.what());
    }
    auto q_des = bus_.get<std::vector<double>>(kQDesParam);
    if (q_des.size() == kJoints) std::copy(q_des.begin(), q_des.end(), q_des_.begin());
    auto tau = bus_.get<std::vector<double>>(kTauDesParam);
    if (tau.size() == kJoints) std::copy(tau.begin(), tau.end(), tau_des_.begin());

    auto g = bus_.get<std::vector<double>>(kGainsParam);
    if (g.size() == kJoints || g.size() == 2 * kJoints) {
      GainConfig next = cfg_.gains;
      std::copy_n(g.begin(), kJoints, next.stiffness.begin());
      if (g.size() == 2 * kJoints)
        std::copy_n(g.begin() + kJoints, kJoints, next.damping.begin());
      else
        next.damping = default_damping(next.stiffness, cfg_.inertia);
      try {
        next.validate();
        gains_ = next;
      } catch (const ControllerError& e) {
        warn_once("gains", e.what());
      }
    }

    if (auto v = bus_.parameter_version(kGoalParam); v != goal_param_version_) {
      goal_param_version_ = v;
      auto gq = bus_.get<std::vector<double>>(kGoalParam);
      if (gq.size() == kJoints) {
        Goal goal;
        std::copy(gq.begin(), gq.end(), goal.q.begin());
        goal.vmax = cfg_.default_vmax;
        goal.amax = cfg_.default_amax;
        set_goal(goal);
      }
    }
    std::optional<Goal> pending;
    {
      std::lock_guard lock(goal_mutex_);
      pending.swap(pending_goal_);
    }
    if (pending) set_goal(*pending);
  }

  void set_goal(Goal g) {
    g.version = ++goal_versions_;
    goal_ = g;
  }

  hal::CommandSet build_commands(const HighLevelState& hl, const std::optional<JointVector>& ipol_target) const {
    auto cmds = hal::all_off();
    auto position = [&](const JointVector& target) {
      const auto d = default_damping(cfg_.position_stiffness, cfg_.inertia);
      for (std::size_t j = 0; j < kJoints; ++j) {
        cmds[j].mode = hal::JointMode::Position;
        cmds[j].q_des = target[j];
        cmds[j].stiffness = cfg_.position_stiffness[j];
        cmds[j].damping = d[j];
      }
    };
    auto impedance = [&](const JointVector& target) {
      for (std::size_t j = 0; j < kJoints; ++j) {
        cmds[j].mode = hal::JointMode::Impedance;
        cmds[j].q_des = target[j];
        cmds[j].stiffness = gains_.stiffness[j];
        cmds[j].damping = gains_.damping[j];
      }
    };
    switch (hl.state) {
      case HlState::Init: break;
      case HlState::Idle: position(hold_q_); break;
      case HlState::Ready:
        switch (hl.ready_mode) {
          case ControlMode::ManualPosition: position(q_des_); break;
          case ControlMode::ManualImpedance: impedance(q_des_); break;
          case ControlMode::ManualTorque:
            for (std::size_t j = 0; j < kJoints; ++j) {
              cmds[j].mode = hal::JointMode::Torque;
              cmds[j].tau_des = tau_des_[j];
            }
            break;
          case ControlMode::Interpolator: position(ipol_target ? *ipol_target : hold_q_); break;
          case ControlMode::VirtualFixtures: impedance(hold_q_); break;
        }
        break;
    }
    return cmds;
  }

  void emit_reset(bool stale, bool joint_error, bool torque_invalid) {
    ++resets_;
    std::string why = stale ? "stale telemetry" : joint_error ? "joint error" : torque_invalid ? "torque sensor invalid" : "error";
    log("controller: ERROR " + why + ", resetting joints");
    try {
      bus_.call_service(hal::kConfigureService, Bytes{}, std::chrono::seconds(1));
    } catch (const bus::BusError& e) {
      log(std::string("controller: reset trigger not delivered: ") + e.what());
    }
  }

  void warn_once(const std::string& key, const std::string& what) {
    if (warned_.insert(key + what).second) log("controller: ignoring " + key + ": " + what);
  }

  void log(const std::string& line) {
    if (log_) log_(line);
  }

  bus::Bus& bus_;
  ControllerConfig cfg_;
  LogSink log_;
  bus::Subscription telemetry_;

  hal::TelemetrySet tel_{};
  bool have_tel_ = false;
  int missed_ = 0;

  std::optional<ControlMode> request_;
  JointVector q_des_{}, tau_des_{}, hold_q_{};
  GainConfig gains_ = cfg_.gains;

  std::mutex goal_mutex_;
  std::optional<Goal> pending_goal_;
  std::optional<Goal> goal_;
  std::uint64_t goal_versions_ = 0;
  std::uint64_t goal_param_version_ = 0;

  InterpolatorState ipol_;
  ControllerStatus status_;
  hal::CommandSet last_commands_ = hal::all_off();
  std::uint64_t cycles_ = 0;
  std::uint64_t resets_ = 0;
  std::set<std::string> warned_;
};

struct JitterStats {
  std::size_t cycles = 0;
  double mean_period = 0.0;      // s
  double mean_abs_jitter = 0.0;  // s, mean |period − nominal|
  double max_abs_jitter = 0.0;   // s
};

/// Runs `tick` on the wall clock at a fixed period and measures the realised periods.
inline JitterStats run_wallclock(const std::function<void(TimePoint)>& tick, Duration period, std::size_t cycles) {
  SteadyClock clock;
  JitterStats st;
  auto next = std::chrono::steady_clock::now();
  std::optional<TimePoint> last;
  double sum_period = 0.0, sum_jitter = 0.0;
  for (std::size_t i = 0; i < cycles; ++i) {
    std::this_thread::sleep_until(next);
    const auto now = clock.now();
    if (last) {
      const double p = to_seconds(now - *last);
      sum_period += p;
      const double j = std::abs(p - to_seconds(period));
      sum_jitter += j;
      st.max_abs_jitter = std::max(st.max_abs_jitter, j);
      ++st.cycles;
    }
    last = now;
    tick(now);
    next += period;
  }
  if (st.cycles) {
    st.mean_period = sum_period / static_cast<double>(st.cycles);
    st.mean_abs_jitter = sum_jitter / static_cast<double>(st.cycles);
  }
  return st;
}

}  // namespace spacedream::ctl
