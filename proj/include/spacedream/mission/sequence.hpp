#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/camsim/camera.hpp"
#include "spacedream/controller/node.hpp"
#include "spacedream/mission/events.hpp"
#include "spacedream/mission/health.hpp"
#include "spacedream/mission/start_command.hpp"

namespace spacedream::mission {

// --- demo plan ------------------------------------------------------------------
//
// Representative sequence only: the flight waypoints were not final. Motions
// go from lower to higher risk; phases that rely on torque sensing sit behind
// the torque gate.

struct SetMode { std::string mode; };
struct MoveTo { hal::JointVector q; };          // interpolated motion
struct CheckReached {};                          // last MoveTo target reached, else position failure
struct HoldHere {};                              // impedance set point = current position
struct SetPoint { hal::JointVector q; };         // impedance set point
struct TakeImage {};
struct RecordVideo { double seconds; };          // unscaled video length

using Action = std::variant<SetMode, MoveTo, CheckReached, HoldHere, SetPoint, TakeImage, RecordVideo>;

struct Step {
  double at = 0.0;  // fraction of the phase duration
  Action action;
};

enum class PhaseKind { Motion, TorqueGate };

struct Phase {
  std::string name;
  PhaseKind kind = PhaseKind::Motion;
  double minutes = 0.0;  // unscaled duration
  bool needs_torque = false;
  std::vector<Step> steps;
};

inline constexpr hal::JointVector kUnfoldPose{0.6, -0.4, 0.8, 0.3};
inline constexpr hal::JointVector kViewPose{0.0, 0.5, -0.5, 0.0};

inline std::vector<Phase> demo_plan() {
  std::vector<Phase> plan;
  plan.push_back({"position", PhaseKind::Motion, 6.0, false,
                  {{0.0, SetMode{"interpolator"}},
                   {0.0, RecordVideo{30.0}},
                   {0.0, MoveTo{kUnfoldPose}},
                   {0.45, CheckReached{}},
                   {0.45, MoveTo{kViewPose}},
                   {0.9, CheckReached{}},
                   {0.9, TakeImage{}}}});
  Phase excite{"excitation", PhaseKind::Motion, 5.0, false, {{0.0, SetMode{"interpolator"}}}};
  for (std::size_t j = 0; j < hal::kJoints; ++j) {
    auto q = kViewPose;
    q[j] += (j % 2 ? -0.1 : 0.1);
    const double t0 = 0.24 * static_cast<double>(j);
    if (j) excite.steps.push_back({t0, CheckReached{}});
    if (j) excite.steps.push_back({t0, TakeImage{}});
    excite.steps.push_back({t0, MoveTo{q}});
  }
  excite.steps.push_back({0.96, CheckReached{}});
  excite.steps.push_back({0.96, MoveTo{kViewPose}});
  plan.push_back(std::move(excite));
  plan.push_back({"torque_gate", PhaseKind::TorqueGate, 0.0, false, {}});
  auto probe = kViewPose;
  probe[0] += 0.1;
  probe[1] += 0.1;
  plan.push_back({"impedance", PhaseKind::Motion, 6.0, true,
                  {{0.0, HoldHere{}},
                   {0.0, SetMode{"impedance"}},
                   {0.2, SetPoint{probe}},
                   {0.6, SetPoint{kViewPose}},
                   {0.7, TakeImage{}}}});
  plan.push_back({"virtual_fixtures", PhaseKind::Motion, 3.0, true, {{0.0, SetMode{"virtual_fixtures"}}}});
  return plan;
}

inline double plan_minutes(const std::vector<Phase>& plan) {
  double m = 0.0;
  for (const auto& p : plan) m += p.minutes;
  return m;
}

// --- mission script -------------------------------------------------------------

struct MissionConfig {
  double scale = 1.0 / 60.0;
  double start_timeout_s = 60.0;      // unscaled; no datagram by then means ground test
  double sleep_minutes = 5.0;         // unscaled, after every demo cycle
  double referencing_timeout_s = 5.0; // not scaled: a property of the joints
  double reach_tolerance = 0.05;      // rad
  double vmax = 1.0, amax = 1.0;      // rad/s, rad/s² for demo motions
  int max_cycles = 0;                 // 0: repeat forever
  cam::CaptureParams image{};
  std::vector<Phase> plan = demo_plan();

  Duration scaled(double seconds) const { return from_seconds(seconds * scale); }
};

enum class Stage { AwaitStart, Referencing, Demo, Sleep, GroundIdle, Finished, Stopped };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::AwaitStart: return "await_start";
    case Stage::Referencing: return "referencing";
    case Stage::Demo: return "demo";
    case Stage::Sleep: return "sleep";
    case Stage::GroundIdle: return "ground_idle";
    case Stage::Finished: return "finished";
    case Stage::Stopped: return "stopped";
  }
  return "?";
}

/// What the mission script needs from the rest of the system.
struct MissionEnv {
  bus::Bus& bus;
  StartSource& start_source;
  cam::CameraId camera = cam::CameraId::EndEffector;
  fs::path hdrm_flag;  // state/hdrm_released
  std::uint32_t generation = 0;
  std::function<void(EventKind, std::string)> emit;
  std::function<void(std::string)> request_reboot;
};

/// The mission sequencer, stepped once per control cycle. It pets the
/// watchdog on every step, so a stalled script ends in a watchdog reboot.
class MissionScript {
 public:
  MissionScript(MissionConfig cfg, MissionEnv env, TimePoint now)
      : cfg_(std::move(cfg)), env_(std::move(env)), camera_(env_.bus) {
    telemetry_ = env_.bus.subscribe(hal::kTelemetryTopic, 256);
    state_ = env_.bus.subscribe(ctl::kStateTopic, 4);
    start_deadline_ = now + cfg_.scaled(cfg_.start_timeout_s);
    listener_.emplace(env_.start_source, start_deadline_);
  }

  void step(TimePoint now) {
    if (stage_ == Stage::Stopped) return;
    pet();
    for (auto& m : telemetry_.drain()) {
      try {
        window_.push_back(hal::decode_telemetry(m.payload));
        if (window_.size() > 64) window_.pop_front();
      } catch (const hal::HalError&) {
      }
    }
    if (auto m = state_.latest()) {
      try {
        controller_ = ctl::decode_status(m->payload);
      } catch (const ctl::ControllerError&) {
      }
    }
    switch (stage_) {
      case Stage::AwaitStart: await_start(now); break;
      case Stage::Referencing: referencing(now); break;
      case Stage::Demo: demo(now); break;
      case Stage::Sleep:
        if (now >= stage_until_) start_cycle(now);
        break;
      default: break;
    }
  }

  Stage stage() const { return stage_; }
  std::optional<MissionMode> mode() const { return mode_; }
  int cycles_completed() const { return cycles_done_; }
  bool torque_ok() const { return torque_ok_; }
  std::string status_line() const {
    std::string s = std::string("stage=") + to_string(stage_) + " mode=" + (mode_ ? to_string(*mode_) : "none") +
                    " cycles=" + std::to_string(cycles_done_) + " generation=" + std::to_string(env_.generation);
    if (stage_ == Stage::Demo) s += " phase=" + cfg_.plan[phase_].name;
    return s;
  }

 private:
  void pet() {
    try {
      env_.bus.call_service(kPetService, Bytes{}, std::chrono::seconds(1));
    } catch (const bus::BusError&) {
      // nobody to pet: the watchdog will notice
    }
  }

  void await_start(TimePoint now) {
    if (fs::exists(env_.hdrm_flag)) {
      // The start command was already received in an earlier boot of this mission.
      env_.emit(EventKind::StartCmd, "resume: hold-down release already done");
      begin_flight(now);
      return;
    }
    auto m = listener_->step(now);
    if (!m) return;
    mode_ = *m;
    if (*m == MissionMode::GroundTest) {
      env_.emit(EventKind::StartCmd, "timeout, ground_test: robot stays unpowered");
      stage_ = Stage::GroundIdle;
      return;
    }
    env_.emit(EventKind::StartCmd, "flight");
    begin_flight(now);
  }

  void begin_flight(TimePoint now) {
    mode_ = MissionMode::Flight;
    env_.bus.call_service(hal::kPowerService, ByteWriter().u8(1).bytes(), std::chrono::seconds(1));
    if (!fs::exists(env_.hdrm_flag)) {
      write_text_atomic(env_.hdrm_flag, "released\n");
      env_.emit(EventKind::HdrmRelease, "hold-down mechanisms released");
    }
    try {
      camera_.select(env_.camera);
    } catch (const std::exception& e) {
      env_.emit(EventKind::Fault, std::string("camera select: ") + e.what());
    }
    window_.clear();
    stage_ = Stage::Referencing;
    stage_until_ = now + from_seconds(cfg_.referencing_timeout_s);
  }

  void referencing(TimePoint now) {
    const bool idle = controller_ && controller_->hl.state != ctl::HlState::Init;
    bool referenced = window_.size() >= kMinHealthCycles;
    if (referenced)
      for (const auto& j : window_.back()) referenced &= j.referenced();
    if (!(idle && referenced) && now < stage_until_) return;
    std::deque<hal::TelemetrySet> last(window_.end() - std::min<std::ptrdiff_t>(window_.size(), kMinHealthCycles), window_.end());
    auto r = health_check(last);
    env_.emit(EventKind::HealthCheck, r.pass() ? "pass" : std::string("fail ") + to_string(r.reason) + ": " + r.detail);
    if (!r.pass() && r.reason != HealthReason::TorqueOutOfRange) {
      fail_and_reboot(std::string("health check failed: ") + to_string(r.reason));
      return;
    }
    torque_ok_ = r.pass();
    start_cycle(now);
  }

  void start_cycle(TimePoint now) {
    if (cfg_.max_cycles > 0 && cycles_done_ >= cfg_.max_cycles) {
      stage_ = Stage::Finished;
      return;
    }
    env_.emit(EventKind::DemoStart, "cycle=" + std::to_string(cycles_done_ + 1));
    stage_ = Stage::Demo;
    phase_ = 0;
    enter_phase(now);
  }

  void enter_phase(TimePoint now) {
    for (; phase_ < cfg_.plan.size(); ++phase_) {
      const auto& p = cfg_.plan[phase_];
      if (p.kind == PhaseKind::TorqueGate) {
        auto r = window_.empty() ? HealthResult{HealthReason::StaleTelemetry, "no telemetry"} : torque_gate(window_.back());
        torque_ok_ = r.pass();
        env_.emit(EventKind::HealthCheck, std::string("torque_gate ") + (torque_ok_ ? "pass" : "fail"));
        if (!torque_ok_) env_.emit(EventKind::Fault, "torque measurements invalid: skipping torque-based phases");
        continue;
      }
      if (p.needs_torque && !torque_ok_) continue;
      phase_start_ = now;
      phase_end_ = now + cfg_.scaled(p.minutes * 60.0);
      next_step_ = 0;
      return;
    }
    finish_cycle(now);
  }

  void demo(TimePoint now) {
    const auto& p = cfg_.plan[phase_];
    const auto length = phase_end_ - phase_start_;
    while (next_step_ < p.steps.size()) {
      const auto& s = p.steps[next_step_];
      if (now < phase_start_ + Duration{static_cast<std::int64_t>(s.at * static_cast<double>(length.count()))}) break;
      if (std::holds_alternative<CheckReached>(s.action)) {
        const auto err = target_error();
        if (err.second > cfg_.reach_tolerance) {
          if (now < phase_end_) break;  // still moving: wait, up to the end of the phase
          fail_and_reboot("position phase failed: joint " + std::to_string(err.first) + " off target by " +
                          std::to_string(err.second) + " rad");
          return;
        }
      }
      ++next_step_;
      if (!run(s.action)) return;
    }
    if (now >= phase_end_ && next_step_ >= p.steps.size()) {
      ++phase_;
      enter_phase(now);
    }
  }

  bool run(const Action& a) {
    auto& bus = env_.bus;
    if (auto* m = std::get_if<SetMode>(&a)) {
      bus.set_parameter(ctl::kModeParam, m->mode);
    } else if (auto* g = std::get_if<MoveTo>(&a)) {
      target_ = g->q;
      try {
        bus.call_service(ctl::kPlanService, ctl::encode_plan_request(g->q, cfg_.vmax, cfg_.amax), std::chrono::seconds(1));
      } catch (const bus::BusError& e) {
        fail_and_reboot(std::string("position phase failed: ") + e.what());
        return false;
      }
    } else if (std::holds_alternative<HoldHere>(a)) {
      if (!window_.empty()) set_point(position());
    } else if (auto* sp = std::get_if<SetPoint>(&a)) {
      set_point(sp->q);
    } else if (std::holds_alternative<TakeImage>(a)) {
      capture(false, 0.0);
    } else if (auto* v = std::get_if<RecordVideo>(&a)) {
      capture(true, v->seconds);
    }
    return true;
  }

  /// Worst joint and its distance to the last motion target (0 without a target).
  std::pair<std::size_t, double> target_error() const {
    std::pair<std::size_t, double> worst{0, 0.0};
    if (!target_) return worst;
    if (window_.empty()) return {0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < hal::kJoints; ++j) {
      double e = std::abs(window_.back()[j].position - (*target_)[j]);
      if (!std::isfinite(e)) e = std::numeric_limits<double>::infinity();
      if (e > worst.second) worst = {j, e};
    }
    return worst;
  }

  hal::JointVector position() const {
    hal::JointVector q{};
    for (std::size_t j = 0; j < hal::kJoints; ++j) q[j] = window_.back()[j].position;
    return q;
  }

  void set_point(const hal::JointVector& q) {
    env_.bus.set_parameter(ctl::kQDesParam, std::vector<double>(q.begin(), q.end()));
  }

  void capture(bool video, double seconds) {
    auto p = cfg_.image;
    try {
      if (video) {
        p.duration = std::max(seconds * cfg_.scale, 1.0 / p.fps);
        camera_.record_video(env_.camera, p);
      } else {
        camera_.take_image(env_.camera, p);
      }
    } catch (const std::exception& e) {
      env_.emit(EventKind::Fault, std::string("camera: ") + e.what());
    }
  }

  void finish_cycle(TimePoint now) {
    env_.bus.set_parameter(ctl::kModeParam, std::string("idle"));
    ++cycles_done_;
    env_.emit(EventKind::DemoEnd, "cycle=" + std::to_string(cycles_done_) + (torque_ok_ ? "" : " torque_phases=skipped"));
    char buf[48];
    std::snprintf(buf, sizeof buf, "for %.1f s", to_seconds(cfg_.scaled(cfg_.sleep_minutes * 60.0)));
    env_.emit(EventKind::Sleep, buf);
    stage_ = Stage::Sleep;
    stage_until_ = now + cfg_.scaled(cfg_.sleep_minutes * 60.0);
  }

  void fail_and_reboot(const std::string& why) {
    env_.emit(EventKind::Fault, why);
    try {
      env_.bus.set_parameter(ctl::kModeParam, std::string("idle"));
    } catch (const bus::BusError&) {
    }
    stage_ = Stage::Stopped;
    env_.request_reboot(why);
  }

  MissionConfig cfg_;
  MissionEnv env_;
  cam::CameraClient camera_;
  bus::Subscription telemetry_, state_;
  std::optional<StartListener> listener_;
  TimePoint start_deadline_{};

  Stage stage_ = Stage::AwaitStart;
  std::optional<MissionMode> mode_;
  std::deque<hal::TelemetrySet> window_;
  std::optional<ctl::ControllerStatus> controller_;
  bool torque_ok_ = true;
  int cycles_done_ = 0;

  std::size_t phase_ = 0, next_step_ = 0;
  TimePoint phase_start_{}, phase_end_{}, stage_until_{};
  std::optional<hal::JointVector> target_;
};

}  // namespace spacedream::mission
