#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "spacedream/mission/system.hpp"

using namespace spacedream;
using namespace spacedream::mission;
using namespace std::chrono_literals;

namespace {

fs::path temp_root(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sd_mission_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Seed whose first draw picks the wanted device.
std::uint64_t seed_picking(EmmcId want) {
  for (std::uint64_t s = 1;; ++s) {
    std::mt19937_64 r(s);
    if ((std::bernoulli_distribution(0.5)(r) ? EmmcId::B : EmmcId::A) == want) return s;
  }
}

hal::TelemetrySet nominal_sample(std::uint32_t counter) {
  hal::TelemetrySet t{};
  for (std::size_t j = 0; j < hal::kJoints; ++j) {
    t[j].joint_id = static_cast<std::uint8_t>(j);
    t[j].position = 0.1 * static_cast<double>(j);
    t[j].torque = 1.5;
    t[j].status_flags = hal::kReferenced | hal::kMotorOn;
    t[j].cycle_counter = counter;
  }
  return t;
}

std::deque<hal::TelemetrySet> nominal_window(std::size_t n = 10) {
  std::deque<hal::TelemetrySet> w;
  for (std::size_t i = 0; i < n; ++i) w.push_back(nominal_sample(static_cast<std::uint32_t>(100 + i)));
  return w;
}

std::vector<EventKind> kinds(const std::vector<MissionEvent>& ev, std::uint32_t gen = 0) {
  std::vector<EventKind> out;
  for (const auto& e : ev)
    if (!gen || e.generation == gen) out.push_back(e.kind);
  return out;
}

const MissionEvent* find(const std::vector<MissionEvent>& ev, EventKind k, std::size_t nth = 0) {
  for (const auto& e : ev)
    if (e.kind == k && nth-- == 0) return &e;
  return nullptr;
}

// Drives a MissionSystem on a manual clock, forwarding nothing to a channel.
struct Rig {
  ManualClock clock;
  ScriptedStartSource start;
  std::unique_ptr<MissionSystem> sys;

  explicit Rig(SystemConfig cfg, std::optional<double> start_at = 0.05) {
    if (start_at) start.add(at_seconds(*start_at), start_command());
    sys = std::make_unique<MissionSystem>(std::move(cfg), clock, start);
  }

  void run_until(const std::function<bool()>& done, double max_s) {
    const auto end = clock.now() + from_seconds(max_s);
    while (clock.now() < end && !done()) {
      sys->step();
      clock.advance(ctl::kCyclePeriod);
    }
  }
  void run_for(double s) {
    run_until([] { return false; }, s);
  }
};

SystemConfig quick_config(const std::string& name, int cycles = 1) {
  SystemConfig c;
  c.root = temp_root(name);
  c.mission.max_cycles = cycles;
  c.mission.image.color = cam::ColorSpace::Gray8;
  c.mission.image.width = 320;
  c.mission.image.height = 240;
  c.seed = 7;
  return c;
}

}  // namespace

// --- startup ladder --------------------------------------------------------------

TEST(Startup, NoFaultsMountsExactlyOneDevice) {
  auto root = temp_root("nofault");
  auto dev = make_emmc_pair(root);
  std::mt19937_64 rng(3);
  WatchdogTimer wd(5s);
  auto r = run_startup(dev, rng, wd, {});
  EXPECT_EQ(r.outcome, StartupOutcome::Ready);
  ASSERT_TRUE(r.mounted);
  EXPECT_EQ(std::count_if(dev.begin(), dev.end(), [](const auto& d) { return d.mount_state == MountState::Mounted; }), 1);
  EXPECT_TRUE(wd.armed());
  EXPECT_EQ(r.steps.front(), "enable networks");
  EXPECT_EQ(r.steps[1], "arm watchdog");
  EXPECT_EQ(r.steps.back(), "ready");
}

TEST(Startup, FallsBackToSecondDevice) {
  auto root = temp_root("fallback");
  auto dev = make_emmc_pair(root);
  dev[0].fault = EmmcFault::MountFail;
  std::mt19937_64 rng(seed_picking(EmmcId::A));
  WatchdogTimer wd(5s);
  auto r = run_startup(dev, rng, wd, {});
  EXPECT_EQ(r.outcome, StartupOutcome::Ready);
  EXPECT_EQ(r.first_pick, EmmcId::A);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.mounted, EmmcId::B);
  EXPECT_EQ(r.steps, (std::vector<std::string>{"enable networks", "arm watchdog", "mount A", "mount B", "ready"}));
  EXPECT_EQ(r.faults.size(), 1u);
}

TEST(Startup, ExhaustiveFaultMatrix) {
  // Oracle: a healthy device is always found (the first pick if healthy);
  // with both failing, a working reformat recovers, otherwise reboot.
  for (int fa = 0; fa < 2; ++fa)
    for (int fb = 0; fb < 2; ++fb)
      for (int fix = 0; fix < 2; ++fix)
        for (auto pick : {EmmcId::A, EmmcId::B}) {
          SCOPED_TRACE(testing::Message() << "A=" << fa << " B=" << fb << " reformat=" << fix << " pick=" << to_string(pick));
          auto root = temp_root("matrix");
          auto dev = make_emmc_pair(root);
          dev[0].fault = fa ? EmmcFault::MountFail : EmmcFault::None;
          dev[1].fault = fb ? EmmcFault::MountFail : EmmcFault::None;
          for (auto& d : dev) d.reformat_fixes = fix;
          std::mt19937_64 rng(seed_picking(pick));
          WatchdogTimer wd(5s);
          auto r = run_startup(dev, rng, wd, {});

          const bool healthy[2] = {!fa, !fb};
          const int p = static_cast<int>(pick);
          if (healthy[p]) {
            EXPECT_EQ(r.outcome, StartupOutcome::Ready);
            EXPECT_EQ(r.mounted, pick);
            EXPECT_FALSE(r.fallback);
          } else if (healthy[1 - p]) {
            EXPECT_EQ(r.outcome, StartupOutcome::Ready);
            EXPECT_EQ(r.mounted, other(pick));
            EXPECT_TRUE(r.fallback);
          } else if (fix) {
            EXPECT_EQ(r.outcome, StartupOutcome::Ready);
            EXPECT_TRUE(r.reformatted);
            EXPECT_TRUE(r.mounted);
          } else {
            EXPECT_EQ(r.outcome, StartupOutcome::Reboot);
            EXPECT_FALSE(r.mounted);
            EXPECT_EQ(r.steps.back(), "reboot");
          }
          int mounted = 0;
          for (const auto& d : dev) mounted += d.mount_state == MountState::Mounted;
          EXPECT_EQ(mounted, r.mounted ? 1 : 0);
          fs::remove_all(root);
        }
}

TEST(Startup, HungControllerEndsInWatchdogReboot) {
  auto root = temp_root("hang");
  auto dev = make_emmc_pair(root);
  dev[0].fault = dev[1].fault = EmmcFault::ControllerHang;
  std::mt19937_64 rng(1);
  WatchdogTimer wd(5s);
  auto r = run_startup(dev, rng, wd, {});
  EXPECT_EQ(r.outcome, StartupOutcome::Hung);
  int fired = 0;
  for (auto t = TimePoint{}; t < TimePoint{} + 20s; t += 10ms) fired += wd.poll(t);
  EXPECT_EQ(fired, 1);
}

TEST(Startup, RandomPickIsBalanced) {
  auto root = temp_root("pick");
  std::mt19937_64 rng(2024);
  int a = 0, b = 0;
  for (int i = 0; i < 200; ++i) {
    auto dev = make_emmc_pair(root);
    WatchdogTimer wd(5s);
    auto r = run_startup(dev, rng, wd, {});
    ASSERT_EQ(r.outcome, StartupOutcome::Ready);
    (r.mounted == EmmcId::A ? a : b)++;
  }
  EXPECT_GE(a, 60);
  EXPECT_GE(b, 60);
}

TEST(Watchdog, FiresOnceAfterTimeout) {
  WatchdogTimer wd(100ms);
  EXPECT_FALSE(wd.poll(at_seconds(10)));  // not armed
  wd.arm(at_seconds(0));
  EXPECT_FALSE(wd.poll(at_seconds(0.1)));  // exactly the timeout is still fine
  wd.pet(at_seconds(0.09));
  EXPECT_FALSE(wd.poll(at_seconds(0.18)));
  EXPECT_TRUE(wd.poll(at_seconds(0.2)));
  EXPECT_FALSE(wd.poll(at_seconds(0.3)));
  EXPECT_TRUE(wd.fired());
}

// --- start command and health --------------------------------------------------------

TEST(StartCommand, MagicAndMalformedDatagrams) {
  EXPECT_EQ(as_string(start_command()), "SDRMGO!\n");
  EXPECT_TRUE(is_start_command(start_command()));
  auto longer = start_command();
  longer.push_back(0);
  EXPECT_FALSE(is_start_command(longer));
  EXPECT_FALSE(is_start_command(as_bytes(std::string_view("SDRMGO!\r"))));

  ScriptedStartSource src;
  src.add(at_seconds(0.5), ByteWriter().raw(std::string_view("hello")).bytes());
  src.add(at_seconds(0.7), start_command());
  StartListener l(src, at_seconds(5));
  EXPECT_FALSE(l.step(at_seconds(0.6)));
  EXPECT_EQ(l.ignored(), 1u);
  EXPECT_EQ(l.step(at_seconds(0.7)), MissionMode::Flight);
}

TEST(StartCommand, TimeoutMeansGroundTest) {
  ScriptedStartSource src;
  src.add(at_seconds(2), start_command());  // too late
  StartListener l(src, at_seconds(1));
  EXPECT_FALSE(l.step(at_seconds(0.99)));
  EXPECT_EQ(l.step(at_seconds(1)), MissionMode::GroundTest);
}

TEST(StartCommand, RealUdpDatagram) {
  UdpStartSource src(0, "127.0.0.1");
  StartListener l(src, at_seconds(100));
  UdpSocket tx;
  tx.send_to("127.0.0.1:" + std::to_string(src.port()), as_bytes(std::string_view("garbage!")));
  tx.send_to("127.0.0.1:" + std::to_string(src.port()), start_command());
  std::optional<MissionMode> m;
  for (int i = 0; i < 200 && !m; ++i) {
    m = l.step(at_seconds(1));
    if (!m) std::this_thread::sleep_for(5ms);
  }
  EXPECT_EQ(m, MissionMode::Flight);
  EXPECT_EQ(l.ignored(), 1u);
}

TEST(Health, Checks) {
  EXPECT_TRUE(health_check(nominal_window()).pass());
  EXPECT_EQ(health_check(nominal_window(9)).reason, HealthReason::StaleTelemetry);

  auto w = nominal_window();
  w[5][2].torque = hal::kTorqueInvalidSentinel;
  EXPECT_EQ(health_check(w).reason, HealthReason::TorqueOutOfRange);
  w = nominal_window();
  w[3][0].torque = -50.0;  // boundary is inside
  EXPECT_TRUE(health_check(w).pass());
  w[3][0].torque = -50.01;
  EXPECT_EQ(health_check(w).reason, HealthReason::TorqueOutOfRange);

  w = nominal_window();
  for (auto& s : w) s[1].cycle_counter = 7;  // frozen
  EXPECT_EQ(health_check(w).reason, HealthReason::StaleTelemetry);

  w = nominal_window();
  w[4][3].position = std::nan("");
  EXPECT_EQ(health_check(w).reason, HealthReason::PositionInvalid);
  w = nominal_window();
  w[4][3].position = 2.81;
  EXPECT_EQ(health_check(w).reason, HealthReason::PositionInvalid);

  w = nominal_window();
  w.back()[0].status_flags = hal::kMotorOn;
  EXPECT_EQ(health_check(w).reason, HealthReason::NotReferenced);
}

TEST(Events, StrictlyIncreasingAndRoundTrip) {
  EventLog log;
  log.add(at_seconds(1), EventKind::Boot, "generation=1", 1);
  log.add(at_seconds(1), EventKind::Fault, "x", 1);
  log.add(at_seconds(0.5), EventKind::Reboot, "y", 1);
  for (std::size_t i = 1; i < log.events().size(); ++i) EXPECT_GT(log.events()[i].stamp, log.events()[i - 1].stamp);
  for (const auto& e : log.events()) EXPECT_EQ(decode_event(encode_event(e)), e);
  EXPECT_EQ(to_line(log.events()[0]), "t=1.000 gen=1 boot generation=1");
}

TEST(DemoPlan, ScaledDurations) {
  MissionConfig c;
  EXPECT_DOUBLE_EQ(plan_minutes(c.plan), 20.0);
  EXPECT_NEAR(to_seconds(c.scaled(plan_minutes(c.plan) * 60.0)), 20.0, 1e-9);
  EXPECT_NEAR(to_seconds(c.scaled(c.sleep_minutes * 60.0)), 5.0, 1e-9);
  std::vector<std::string> names;
  for (const auto& p : c.plan) names.push_back(p.name);
  EXPECT_EQ(names, (std::vector<std::string>{"position", "excitation", "torque_gate", "impedance", "virtual_fixtures"}));
}

// --- whole system ----------------------------------------------------------------------

TEST(MissionSystem, NominalCycle) {
  Rig rig(quick_config("nominal"));
  rig.run_until([&] { return rig.sys->cycles_completed() >= 1 && rig.sys->mission()->stage() == Stage::Finished; }, 40);
  const auto& ev = rig.sys->events().events();
  EXPECT_EQ(rig.sys->stats().reboots, 0u);
  EXPECT_EQ(kinds(ev), (std::vector<EventKind>{EventKind::Boot, EventKind::StartCmd, EventKind::HdrmRelease,
                                               EventKind::HealthCheck, EventKind::DemoStart, EventKind::HealthCheck,
                                               EventKind::DemoEnd, EventKind::Sleep}));
  EXPECT_EQ(find(ev, EventKind::HealthCheck)->detail, "pass");
  const double motion = to_seconds(find(ev, EventKind::DemoEnd)->stamp - find(ev, EventKind::DemoStart)->stamp);
  EXPECT_NEAR(motion, 20.0, 1.0);
  const double sleep = to_seconds(rig.clock.now() - find(ev, EventKind::Sleep)->stamp);
  EXPECT_NEAR(sleep, 5.0, 0.1);
  EXPECT_GT(rig.sys->stats().motion_commands, 0u);
  EXPECT_TRUE(fs::exists(rig.sys->state_dir() / "hdrm_released"));
  // watchdog petted throughout
  EXPECT_LE(rig.clock.now() - rig.sys->watchdog()->last_pet(), 20ms);
  auto media = rig.sys->devices()[static_cast<int>(*rig.sys->mounted())].data_root(1) / "media";
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(media)) files += e.is_regular_file();
  EXPECT_GE(files, 5u);
}

TEST(MissionSystem, ProcessTopologyOrder) {
  Rig rig(quick_config("topology"));
  rig.run_for(0.5);
  const auto& log = rig.sys->supervisor()->events();
  std::vector<std::string> launched;
  for (const auto& e : log)
    if (e.what == "launched") launched.push_back(e.name);
  ASSERT_FALSE(launched.empty());
  EXPECT_EQ(launched.front(), "digital_power");
  auto pos = [&](const std::string& n) { return std::find(launched.begin(), launched.end(), n) - launched.begin(); };
  EXPECT_LT(pos("hal"), pos("controller"));
  EXPECT_EQ(launched.back(), "mission");
  EXPECT_TRUE(rig.sys->supervisor()->all_ready());
}

TEST(MissionSystem, GroundTestNeverMoves) {
  auto cfg = quick_config("ground");
  Rig rig(cfg, std::nullopt);
  rig.run_for(30);
  const auto& ev = rig.sys->events().events();
  ASSERT_NE(find(ev, EventKind::StartCmd), nullptr);
  EXPECT_NE(find(ev, EventKind::StartCmd)->detail.find("ground_test"), std::string::npos);
  EXPECT_EQ(rig.sys->stats().motion_commands, 0u);
  EXPECT_GT(rig.sys->stats().command_sets, 2000u);
  EXPECT_EQ(find(ev, EventKind::HdrmRelease), nullptr);
  EXPECT_EQ(rig.sys->stats().reboots, 0u);
  EXPECT_FALSE(rig.sys->arm().motor_power());
}

TEST(MissionSystem, InvalidTorqueSkipsTorquePhases) {
  Rig rig(quick_config("torque"));
  rig.sys->inject({hal::FaultKind::TorqueSensorInvalid, 2, true});
  rig.run_until([&] { return rig.sys->cycles_completed() >= 1; }, 40);
  const auto& ev = rig.sys->events().events();
  ASSERT_NE(find(ev, EventKind::HealthCheck), nullptr);
  EXPECT_NE(find(ev, EventKind::HealthCheck)->detail.find("torque_out_of_range"), std::string::npos);
  EXPECT_EQ(rig.sys->stats().reboots, 0u);
  ASSERT_NE(find(ev, EventKind::DemoEnd), nullptr);
  EXPECT_NE(find(ev, EventKind::DemoEnd)->detail.find("torque_phases=skipped"), std::string::npos);
  // position phases only: about 11 of the 20 scaled seconds
  const double motion = to_seconds(find(ev, EventKind::DemoEnd)->stamp - find(ev, EventKind::DemoStart)->stamp);
  EXPECT_NEAR(motion, 11.0, 1.0);
}

TEST(MissionSystem, StuckJointFailsPositionPhaseAndReboots) {
  Rig rig(quick_config("stuck"));
  rig.sys->inject({hal::FaultKind::JointStuck, 1, true});
  rig.run_until([&] { return rig.sys->stats().reboots >= 1; }, 20);
  const auto& ev = rig.sys->events().events();
  ASSERT_NE(find(ev, EventKind::Fault), nullptr);
  EXPECT_NE(find(ev, EventKind::Fault)->detail.find("position phase failed"), std::string::npos);
  EXPECT_EQ(rig.sys->stats().watchdog_reboots, 0u);
}

TEST(MissionSystem, SuspendedMissionTriggersOneWatchdogReboot) {
  auto cfg = quick_config("suspend", 0);
  cfg.initial_q = {0.3, -0.2, 0.1, 0.0};
  Rig rig(cfg);
  rig.run_until([&] { return rig.sys->mission() && rig.sys->mission()->stage() == Stage::Demo; }, 10);
  rig.run_for(1.5);  // mid-motion
  const auto suspended_at = rig.clock.now();
  rig.sys->suspend_mission(true);
  rig.run_until([&] { return rig.sys->stats().reboots >= 1; }, 5);
  ASSERT_EQ(rig.sys->stats().watchdog_reboots, 1u);
  const auto* reboot = find(rig.sys->events().events(), EventKind::Reboot);
  ASSERT_NE(reboot, nullptr);
  const auto timeout = cfg.scaled(cfg.watchdog_timeout_s);
  EXPECT_LE(reboot->stamp - suspended_at, timeout + ctl::kCyclePeriod);
  EXPECT_GE(reboot->stamp - suspended_at, timeout - ctl::kCyclePeriod);
  const auto q_at_reboot = hal::load_plant(rig.sys->state_dir() / "plant.bin").q;

  // next boot: resumes in flight from wherever the arm stopped
  rig.run_until([&] { return rig.sys->cycles_completed() >= 1; }, 40);
  const auto& ev = rig.sys->events().events();
  EXPECT_EQ(rig.sys->stats().watchdog_reboots, 1u);
  EXPECT_EQ(rig.sys->generation(), 2u);
  EXPECT_EQ(rig.sys->events().count(EventKind::HdrmRelease), 1u);
  auto gen2 = kinds(ev, 2);
  ASSERT_FALSE(gen2.empty());
  EXPECT_EQ(gen2.front(), EventKind::Boot);
  const MissionEvent* health2 = nullptr;
  for (const auto& e : ev)
    if (e.generation == 2 && e.kind == EventKind::HealthCheck) {
      health2 = &e;
      break;
    }
  ASSERT_NE(health2, nullptr);
  EXPECT_EQ(health2->detail, "pass");
  EXPECT_NE(q_at_reboot, hal::JointVector{});
  EXPECT_EQ(read_text(rig.sys->state_dir() / "boot_generation"), "2\n");
}

TEST(MissionSystem, RebootsAdvanceGenerationAndKeepOldData) {
  auto cfg = quick_config("gens", 0);
  cfg.emmc_faults = {EmmcFault::None, EmmcFault::MountFail};  // always device A
  Rig rig(cfg);
  for (int i = 0; i < 2; ++i) {
    rig.run_until([&] { return rig.sys->mission() && rig.sys->mission()->stage() == Stage::Demo; }, 10);
    rig.run_for(0.5);
    rig.sys->suspend_mission(true);
    rig.run_until([&] { return !rig.sys->booted(); }, 5);
  }
  rig.run_until([&] { return rig.sys->running(); }, 5);
  EXPECT_EQ(rig.sys->generation(), 3u);
  EXPECT_EQ(rig.sys->stats().generations, (std::vector<std::uint32_t>{1, 2, 3}));
  const auto& a = rig.sys->devices()[0];
  EXPECT_NE(a.data_root(3), a.data_root(1));
  EXPECT_TRUE(fs::exists(a.data_root(1) / "logs"));
  EXPECT_TRUE(fs::exists(a.data_root(2) / "logs"));
  EXPECT_FALSE(fs::is_empty(a.data_root(1) / "logs"));
}

TEST(MissionSystem, DeadEmmcFallbackStillFlies) {
  auto cfg = quick_config("emmc_dead");
  cfg.emmc_faults = {EmmcFault::MountFail, EmmcFault::None};
  cfg.seed = seed_picking(EmmcId::A);
  Rig rig(cfg);
  rig.run_until([&] { return rig.sys->cycles_completed() >= 1; }, 40);
  EXPECT_EQ(rig.sys->mounted(), EmmcId::B);
  EXPECT_NE(rig.sys->stats().startup.front().find("fallback_from=A"), std::string::npos);
  EXPECT_EQ(rig.sys->cycles_completed(), 1);
}

TEST(MissionSystem, BothDevicesDeadRebootsRepeatedly) {
  auto cfg = quick_config("emmc_both", 0);
  cfg.emmc_faults = {EmmcFault::MountFail, EmmcFault::MountFail};
  cfg.reformat_fixes = {false, false};
  Rig rig(cfg);
  rig.run_for(3);
  EXPECT_GE(rig.sys->stats().reboots, 2u);
  EXPECT_EQ(rig.sys->stats().watchdog_reboots, 0u);
  EXPECT_FALSE(rig.sys->running());
}

TEST(MissionSystem, StatusServices) {
  Rig rig(quick_config("status"));
  rig.run_for(0.5);
  auto* bus = rig.sys->bus();
  ASSERT_NE(bus, nullptr);
  auto reply = as_string(bus->call_service(kStatusService, Bytes{}, 1s));
  EXPECT_NE(reply.find("mode=flight"), std::string::npos) << reply;
  EXPECT_NE(reply.find("watchdog_armed=1"), std::string::npos);
  const auto before = rig.sys->watchdog()->pets();
  bus->call_service(kPetService, Bytes{}, 1s);
  EXPECT_EQ(rig.sys->watchdog()->pets(), before + 1);
}

namespace {

// Recorder output rate in bit/s over the motion part of one demo cycle.
double demo_cycle_record_rate(const std::string& name, std::vector<rec::TopicRate> profile) {
  auto cfg = quick_config(name);
  cfg.record_topics = std::move(profile);
  Rig rig(cfg);
  auto has = [&](EventKind k) { return rig.sys->events().count(k) > 0; };
  rig.run_until([&] { return has(EventKind::DemoStart); }, 20);
  const auto b0 = rig.sys->recorded_bytes();
  const auto t0 = rig.clock.now();
  rig.run_until([&] { return has(EventKind::DemoEnd); }, 40);
  const double secs = to_seconds(rig.clock.now() - t0);
  return 8.0 * static_cast<double>(rig.sys->recorded_bytes() - b0) / secs;
}

}  // namespace

TEST(MissionSystem, FullProfileRecordsAboutOnePointThreeMbit) {
  const double rate = demo_cycle_record_rate("rate_full", rec::full_profile());
  EXPECT_NEAR(rate, 1.3e6, 0.15 * 1.3e6) << rate;
}

TEST(MissionSystem, FlightProfileStaysBelowOneMbit) {
  const double rate = demo_cycle_record_rate("rate_flight", rec::flight_profile());
  EXPECT_LT(rate, 1e6) << rate;
  EXPECT_GT(rate, 0.0);
}
