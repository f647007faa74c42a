#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/camsim/camera.hpp"
#include "spacedream/controller/node.hpp"
#include "spacedream/datasync/watcher.hpp"
#include "spacedream/halsim/node.hpp"
#include "spacedream/mission/sequence.hpp"
#include "spacedream/mission/startup.hpp"
#include "spacedream/procman/supervisor.hpp"
#include "spacedream/recorder/recorder.hpp"

namespace spacedream::mission {

/// Processes of one boot and their start order. Digital power comes first and
/// the HAL before the controller; the mission script starts last.
inline constexpr const char* kProcessGraph = R"(
[process digital_power]
command = digital_power
ready = ^power rails on$

[process hal]
command = hal
depends_on = digital_power
ready = ^HAL ready$
error = ERROR

[process controller]
command = controller
depends_on = hal
ready = ^controller up$

[process camera]
command = camera_server
depends_on = digital_power
ready = ^camera server up$

[process recorder]
command = recorder
depends_on = hal, controller
ready = ^recording$

[process datasync]
command = datasync
ready = ^sync running$

[process mission]
command = mission
depends_on = controller, camera, recorder, datasync
ready = ^mission script started$
)";

inline constexpr const char* kDefaultTransferRules = R"(
[folder media]
priority = 5
resend = 2
min_interval_ms = 100

[folder logs]
priority = 2
resend = 2
min_interval_ms = 100

[folder *]
priority = 1
resend = 1
)";

struct SystemConfig {
  fs::path root;  // state/, emmc_a/, emmc_b/
  MissionConfig mission;
  std::uint64_t seed = 1;
  double watchdog_timeout_s = 5.0;  // unscaled
  double reboot_delay_s = 30.0;     // unscaled time from reset to the next boot
  hal::JointVector initial_q{};
  std::array<EmmcFault, 2> emmc_faults{EmmcFault::None, EmmcFault::None};
  std::array<bool, 2> reformat_fixes{true, true};
  double end_effector_weight = 0.7;
  std::vector<rec::TopicRate> record_topics = rec::flight_profile();
  std::size_t rotation_bytes = 512u << 10;
  sync::SenderConfig sender{};
  std::string transfer_rules = kDefaultTransferRules;
  double rescan_period_s = 0.2;  // not scaled
  int jpeg_quality = 75;

  Duration scaled(double s) const { return mission.scaled(s); }
};

struct SystemStats {
  std::uint32_t boots = 0;
  std::uint32_t reboots = 0;
  std::uint32_t watchdog_reboots = 0;
  std::uint64_t motion_commands = 0;  // command sets with any joint not off
  std::uint64_t command_sets = 0;
  std::uint64_t recorded_bytes = 0;
  std::uint64_t sent_packets = 0;
  std::uint64_t sent_bytes = 0;
  std::uint64_t files_queued = 0;
  int cycles_completed = 0;
  std::vector<std::uint32_t> generations;
  std::vector<std::string> startup;  // one line per boot
};

inline std::uint32_t read_counter(const fs::path& p, std::uint32_t fallback) {
  try {
    return static_cast<std::uint32_t>(std::stoul(read_text(p)));
  } catch (const std::exception&) {
    return fallback;
  }
}

/// The whole on-board computer: storage, watchdog, processes and the mission
/// script. step() runs one 10 ms cycle at clock.now(); the caller advances the
/// clock. The arm is physical and survives reboots.
class MissionSystem {
 public:
  MissionSystem(SystemConfig cfg, const Clock& clock, StartSource& start)
      : cfg_(std::move(cfg)),
        clock_(clock),
        start_(start),
        rng_(cfg_.seed),
        arm_(hal::PlantState{}),
        rules_(sync::parse_rules(cfg_.transfer_rules)) {
    devices_ = make_emmc_pair(cfg_.root);
    for (int i = 0; i < 2; ++i) {
      devices_[i].fault = cfg_.emmc_faults[i];
      devices_[i].reformat_fixes = cfg_.reformat_fixes[i];
    }
    fs::create_directories(state_dir());
    auto plant = arm_.plant();
    plant.q = cfg_.initial_q;
    arm_.set_plant(plant);
    next_boot_ = clock_.now();
  }

  ~MissionSystem() { shutdown(); }
  MissionSystem(const MissionSystem&) = delete;
  MissionSystem& operator=(const MissionSystem&) = delete;

  /// One control cycle. Returns the downlink packets sent in it.
  std::vector<sync::SentPacket> step() {
    const auto now = clock_.now();
    std::vector<sync::SentPacket> out;
    if (!boot_) {
      if (next_boot_ && now >= *next_boot_) start_boot(now);
      return out;
    }
    auto& b = *boot_;
    if (b.sup) b.sup->step(now);
    if (b.hal) b.hal->tick(now);
    if (b.controller) b.controller->tick(now);
    if (b.camera) b.camera->tick(now);
    if (b.mission && !suspended_) {
      b.mission->step(now);
      std::lock_guard lock(status_mutex_);
      status_ = b.mission->status_line();
    }
    if (b.recorder) b.recorder->tick(now);
    if (b.commands) {
      for (const auto& m : b.commands.drain()) {
        ++stats_.command_sets;
        try {
          for (const auto& c : hal::decode_commands(m.payload))
            if (c.mode != hal::JointMode::Off) {
              ++stats_.motion_commands;
              break;
            }
        } catch (const hal::HalError&) {
        }
      }
    }
    if (b.sync) {
      out = b.sync->poll(now);
      for (const auto& p : out) {
        ++stats_.sent_packets;
        stats_.sent_bytes += p.bytes.size();
      }
    }
    if (b.watchdog->poll(now)) {
      ++stats_.watchdog_reboots;
      reboot(now, "watchdog timeout");
    } else if (reboot_request_) {
      auto why = *reboot_request_;
      reboot(now, why);
    }
    return out;
  }

  /// Closes the active log files so they become visible to the downlink.
  /// Recording stays off for the rest of this boot.
  void finish_recording() {
    if (!boot_ || !boot_->recorder) return;
    boot_->recorder->close();
    stats_.recorded_bytes += boot_->recorder->stats().bytes_written;
    boot_->recorder.reset();
  }

  /// Stops stepping the mission script (the process hangs, nothing else does).
  void suspend_mission(bool on) { suspended_ = on; }
  bool mission_suspended() const { return suspended_; }

  /// Forwards a fault to the simulated joints.
  void inject(const hal::FaultInjection& f) { arm_.inject_fault(f); }
  void set_emmc_fault(EmmcId id, EmmcFault f) { devices_[static_cast<int>(id)].fault = f; }

  /// Orderly end of the run: processes stopped, files closed.
  void shutdown() {
    if (boot_) teardown(clock_.now());
    next_boot_.reset();
  }

  bool running() const { return boot_ && boot_->mission; }
  bool booted() const { return static_cast<bool>(boot_); }
  std::uint32_t generation() const { return generation_; }
  const EventLog& events() const { return log_; }
  const SystemStats& stats() const { return stats_; }
  /// Bytes recorded so far, including the live recorder of the current boot.
  std::uint64_t recorded_bytes() const {
    auto n = stats_.recorded_bytes;
    if (boot_ && boot_->recorder) n += boot_->recorder->stats().bytes_written;
    return n;
  }
  const SystemConfig& config() const { return cfg_; }
  hal::SimulatedArm& arm() { return arm_; }
  const EmmcPair& devices() const { return devices_; }
  std::optional<EmmcId> mounted() const { return boot_ ? boot_->device : std::nullopt; }
  fs::path state_dir() const { return cfg_.root / "state"; }
  const MissionScript* mission() const { return boot_ ? boot_->mission.get() : nullptr; }
  const ctl::ControllerNode* controller() const { return boot_ ? boot_->controller.get() : nullptr; }
  const WatchdogTimer* watchdog() const { return boot_ ? boot_->watchdog.get() : nullptr; }
  bus::Bus* bus() { return boot_ ? boot_->bus.get() : nullptr; }
  const pm::Supervisor* supervisor() const { return boot_ ? boot_->sup.get() : nullptr; }
  int cycles_completed() const { return stats_.cycles_completed + (running() ? boot_->mission->cycles_completed() : 0); }
  std::string status() const {
    std::lock_guard lock(status_mutex_);
    return status_;
  }

  /// Idle sender and nothing new on disk: the backlog is empty.
  bool downlink_idle() const { return !boot_ || !boot_->sync || boot_->sync->sender().idle(); }

 private:
  struct Boot {
    std::unique_ptr<bus::Bus> bus;
    std::unique_ptr<WatchdogTimer> watchdog;
    std::optional<EmmcId> device;
    fs::path data_root;
    cam::CameraId camera_id = cam::CameraId::EndEffector;
    pm::SimBackend backend;
    std::unique_ptr<cam::CameraServer> camera_server;
    std::unique_ptr<hal::HalNode> hal;
    std::unique_ptr<ctl::ControllerNode> controller;
    std::unique_ptr<cam::CameraNode> camera;
    std::unique_ptr<rec::Recorder> recorder;
    std::unique_ptr<sync::SyncService> sync;
    std::unique_ptr<MissionScript> mission;
    std::unique_ptr<pm::Supervisor> sup;
    bus::Subscription commands;
  };

  void emit(TimePoint now, EventKind kind, std::string detail) {
    const auto& e = log_.add(now, kind, std::move(detail), generation_);
    if (boot_ && boot_->bus && boot_->bus->has_topic(kEventsTopic)) boot_->bus->publish(kEventsTopic, encode_event(e), e.stamp);
  }

  void start_boot(TimePoint now) {
    next_boot_.reset();
    reboot_request_.reset();
    generation_ = read_counter(state_dir() / "boot_generation", 0);
    if (generation_ == 0) {
      generation_ = 1;
      write_text_atomic(state_dir() / "boot_generation", "1\n");
    }
    ++stats_.boots;
    stats_.generations.push_back(generation_);
    if (fs::exists(state_dir() / "plant.bin")) {
      try {
        arm_.set_plant(hal::load_plant(state_dir() / "plant.bin"));
      } catch (const std::exception&) {
        // unreadable: keep the arm's own state
      }
    }

    boot_ = std::make_unique<Boot>();
    auto& b = *boot_;
    b.bus = std::make_unique<bus::Bus>();
    b.bus->register_topic({kEventsTopic, "mission.Event/1", 0.0});
    b.watchdog = std::make_unique<WatchdogTimer>(cfg_.scaled(cfg_.watchdog_timeout_s));
    register_services(b);

    auto report = run_startup(devices_, rng_, *b.watchdog, now);
    std::string line = "generation=" + std::to_string(generation_) + " startup=" + to_string(report.outcome);
    if (report.mounted) line += std::string(" emmc=") + to_string(*report.mounted);
    if (report.fallback) line += std::string(" fallback_from=") + to_string(report.first_pick);
    if (report.reformatted) line += " reformatted";
    stats_.startup.push_back(line);
    emit(now, EventKind::Boot, line);
    for (const auto& f : report.faults) emit(now, EventKind::Fault, f);

    if (report.outcome == StartupOutcome::Reboot) {
      reboot_request_ = "no usable eMMC";
      return;
    }
    if (report.outcome == StartupOutcome::Hung) return;  // only the watchdog gets us out

    b.device = report.mounted;
    const auto& dev = devices_[static_cast<int>(*b.device)];
    b.data_root = dev.data_root(generation_);
    fs::create_directories(b.data_root / "logs");
    fs::create_directories(b.data_root / "media");
    b.camera_id = cam::choose_camera(rng_, cfg_.end_effector_weight);
    define_programs(b, dev);
    b.bus->register_topic({hal::kCommandTopic, hal::kCommandSchema, 100.0});
    b.commands = b.bus->subscribe(hal::kCommandTopic, 16);
    b.sup = std::make_unique<pm::Supervisor>(pm::load_config(kProcessGraph), b.backend);
    b.sup->start_all(now);
  }

  void register_services(Boot& b) {
    auto& bus = *b.bus;
    bus.register_service({kPetService, "empty", "empty"});
    bus.register_service({kArmService, "empty", "empty"});
    bus.register_service({kStatusService, "empty", "text"});
    auto* wd = b.watchdog.get();
    bus.attach_handler(kPetService, [this, wd](ByteView) {
      wd->pet(clock_.now());
      return Bytes{};
    });
    bus.attach_handler(kArmService, [this, wd](ByteView) {
      wd->arm(clock_.now());
      return Bytes{};
    });
    bus.attach_handler(kStatusService, [this, wd](ByteView) {
      std::string s = status();
      s += std::string(" watchdog_armed=") + (wd->armed() ? "1" : "0");
      return ByteWriter().raw(std::string_view(s)).bytes();
    });
  }

  void define_programs(Boot& b, const EmmcDevice& dev) {
    auto& bus = *b.bus;
    const auto gen = generation_;
    b.backend.define("digital_power", {[](auto out, auto) { out("power rails on"); }, {}});
    b.backend.define("hal", {[this, &b, &bus](auto out, auto) {
                               b.hal = std::make_unique<hal::HalNode>(bus, arm_, out);
                               if (b.hal->configure()) out("HAL ready");
                               else b.hal.reset();
                             },
                             [&b] { b.hal.reset(); }});
    b.backend.define("controller", {[&b, &bus](auto out, auto) {
                                      b.controller = std::make_unique<ctl::ControllerNode>(bus, ctl::ControllerConfig{}, out);
                                      out("controller up");
                                    },
                                    [&b] { b.controller.reset(); }});
    b.backend.define("camera", {[this, &b, &bus, gen](auto out, auto) {
                                         cam::CameraConfig cc;
                                         cc.media_root = b.data_root / "media";
                                         cc.latency_scale = cfg_.mission.scale;
                                         cc.switch_time = cfg_.scaled(1.0);
                                         cc.seed = cfg_.seed * 1000003u + gen;
                                         cc.jpeg_quality = cfg_.jpeg_quality;
                                         b.camera_server = std::make_unique<cam::CameraServer>(cc, [this] { return arm_.plant().q; });
                                         b.camera = std::make_unique<cam::CameraNode>(bus, *b.camera_server, clock_);
                                         out("camera server up");
                                       },
                                       [&b] {
                                         b.camera.reset();
                                         b.camera_server.reset();
                                       }});
    b.backend.define("recorder", {[this, &b, &bus, gen](auto out, auto) {
                                    rec::RecordingConfig rc;
                                    rc.topics = cfg_.record_topics;
                                    rc.rotation_bytes = cfg_.rotation_bytes;
                                    rc.out_dir = b.data_root / "logs";
                                    rc.boot_generation = gen;
                                    b.recorder = std::make_unique<rec::Recorder>(bus, rc, out);
                                    out("recording");
                                  },
                                  [this, &b] {
                                    if (b.recorder) {
                                      b.recorder->close();
                                      stats_.recorded_bytes += b.recorder->stats().bytes_written;
                                    }
                                    b.recorder.reset();
                                  }});
    b.backend.define("datasync", {[this, &b, tx = dev.tx_root(), gen](auto out, auto) {
                                    b.sync = std::make_unique<sync::SyncService>(tx, rules_, cfg_.sender,
                                                                                 from_seconds(cfg_.rescan_period_s), gen, false);
                                    out("sync running");
                                  },
                                  [this, &b] {
                                    if (b.sync) stats_.files_queued += b.sync->stats().files_queued;
                                    b.sync.reset();
                                  }});
    b.backend.define("mission", {[this, &b, &bus, gen](auto out, auto) {
                                   MissionEnv env{bus, start_, b.camera_id, state_dir() / "hdrm_released", gen,
                                                  [this](EventKind k, std::string d) { emit(clock_.now(), k, std::move(d)); },
                                                  [this](std::string why) { reboot_request_ = std::move(why); }};
                                   b.mission = std::make_unique<MissionScript>(cfg_.mission, std::move(env), clock_.now());
                                   out("mission script started");
                                 },
                                 [this, &b] {
                                   if (b.mission) stats_.cycles_completed += b.mission->cycles_completed();
                                   b.mission.reset();
                                 }});
  }

  /// Stops every process (dependents first) and releases the boot.
  void teardown(TimePoint now) {
    auto& b = *boot_;
    if (b.sup) b.sup->stop_all(now);
    // processes that failed to start own nothing, but be thorough
    if (b.mission) stats_.cycles_completed += b.mission->cycles_completed();
    b.mission.reset();
    if (b.recorder) {
      b.recorder->close();
      stats_.recorded_bytes += b.recorder->stats().bytes_written;
    }
    b.recorder.reset();
    if (b.sync) stats_.files_queued += b.sync->stats().files_queued;
    b.sync.reset();
    b.camera.reset();
    b.camera_server.reset();
    b.controller.reset();
    b.hal.reset();
    b.sup.reset();
    boot_.reset();
  }

  /// Hard reset of the computer: everything stops, the arm loses motor power,
  /// the generation counter moves on and the next boot is scheduled.
  void reboot(TimePoint now, const std::string& why) {
    emit(now, EventKind::Reboot, why);
    ++stats_.reboots;
    teardown(now);
    arm_.set_motor_power(false);
    hal::save_plant(state_dir() / "plant.bin", arm_.plant());
    write_text_atomic(state_dir() / "boot_generation", std::to_string(generation_ + 1) + "\n");
    reboot_request_.reset();
    suspended_ = false;  // the hung process does not survive the reset
    next_boot_ = now + cfg_.scaled(cfg_.reboot_delay_s);
    std::lock_guard lock(status_mutex_);
    status_ = "rebooting";
  }

  SystemConfig cfg_;
  const Clock& clock_;
  StartSource& start_;
  std::mt19937_64 rng_;
  hal::SimulatedArm arm_;
  sync::TransferRules rules_;
  EmmcPair devices_;
  std::unique_ptr<Boot> boot_;
  std::optional<TimePoint> next_boot_;
  std::optional<std::string> reboot_request_;
  std::uint32_t generation_ = 0;
  bool suspended_ = false;
  EventLog log_;
  SystemStats stats_;
  mutable std::mutex status_mutex_;
  std::string status_;
};

}  // namespace spacedream::mission
