#pragma once

#include <functional>
#include <mutex>
#include <string>

#include "spacedream/bus/bus.hpp"
#include "spacedream/halsim/arm.hpp"

namespace spacedream::hal {

inline constexpr const char* kTelemetryTopic = "hal/telemetry";
inline constexpr const char* kCommandTopic = "hal/command";
inline constexpr const char* kRawTopic = "hal/raw";
inline constexpr const char* kConfigureService = "hal/configure";
inline constexpr const char* kFaultService = "hal/fault";
inline constexpr const char* kPowerService = "hal/power";

/// Bytes of the per-joint link frame dump published on hal/raw each cycle.
inline constexpr std::size_t kRawFrameBytes = 256;

// hal/fault request:  u8 kind | u8 joint | u8 active      reply: empty
// hal/power request:  u8 on                                reply: empty
// hal/configure request: empty                             reply: empty

inline Bytes encode_fault(const FaultInjection& f) {
  return ByteWriter().u8(static_cast<std::uint8_t>(f.kind)).u8(f.joint_id).u8(f.active ? 1 : 0).bytes();
}

inline FaultInjection decode_fault(ByteView b) {
  ByteReader r(b);
  FaultInjection f;
  auto kind = r.u8();
  if (kind > 2) throw HalError(HalErrc::BadRecord, "unknown fault kind " + std::to_string(kind));
  f.kind = static_cast<FaultKind>(kind);
  f.joint_id = r.u8();
  f.active = r.u8() != 0;
  return f;
}

/// Simulated link frame dump: header, the exchanged records, then the joint's register page.
inline Bytes raw_link_frames(const CommandSet& cmds, const TelemetrySet& tel) {
  ByteWriter w;
  auto c = encode_commands(cmds);
  auto t = encode_telemetry(tel);
  for (std::size_t j = 0; j < kJoints; ++j) {
    const auto start = w.size();
    w.u8(0xA5).u8(static_cast<std::uint8_t>(j)).u32(tel[j].cycle_counter);
    w.raw(ByteView(c).subspan(j * kCommandRecordSize, kCommandRecordSize));
    w.raw(ByteView(t).subspan(j * kTelemetryRecordSize, kTelemetryRecordSize));
    std::uint8_t reg = static_cast<std::uint8_t>(tel[j].cycle_counter);
    while (w.size() - start < kRawFrameBytes) w.u8(reg++);
  }
  return std::move(w).take();
}

/// HAL process: owns the link, runs one cyclic exchange per tick and exposes
/// the link on the bus.
class HalNode {
 public:
  using LogSink = std::function<void(const std::string&)>;

  HalNode(bus::Bus& bus, SimulatedArm& arm, LogSink log = {}) : bus_(bus), link_(arm), log_(std::move(log)) {
    bus_.register_topic({kTelemetryTopic, kTelemetrySchema, 100.0});
    bus_.register_topic({kCommandTopic, kCommandSchema, 100.0});
    bus_.register_topic({kRawTopic, "hal.RawFrames/1", 100.0});
    bus_.register_service({kConfigureService, "empty", "empty"});
    bus_.register_service({kFaultService, "hal.FaultInjection/1", "empty"});
    bus_.register_service({kPowerService, "hal.Power/1", "empty"});
    commands_ = bus_.subscribe(kCommandTopic);
    bus_.attach_handler(kConfigureService, [this](ByteView) {
      configure();
      return Bytes{};
    });
    bus_.attach_handler(kFaultService, [this](ByteView req) {
      std::lock_guard lock(mutex_);
      link_.inject_fault(decode_fault(req));
      return Bytes{};
    });
    bus_.attach_handler(kPowerService, [this](ByteView req) {
      ByteReader r(req);
      std::lock_guard lock(mutex_);
      link_.arm().set_motor_power(r.u8() != 0);
      return Bytes{};
    });
  }

  ~HalNode() {
    bus_.detach_handler(kConfigureService);
    bus_.detach_handler(kFaultService);
    bus_.detach_handler(kPowerService);
  }

  HalNode(const HalNode&) = delete;
  HalNode& operator=(const HalNode&) = delete;

  /// Returns false (and logs an error line) if the joints reject the configuration.
  bool configure() {
    std::lock_guard lock(mutex_);
    try {
      link_.configure();
      log("hal: link configured, cyclic exchange running");
      return true;
    } catch (const HalError& e) {
      log(std::string("hal: ERROR ") + e.what());
      return false;
    }
  }

  /// One cyclic exchange. Holds the last command set if none arrived since the previous tick.
  void tick(TimePoint now) {
    std::lock_guard lock(mutex_);
    if (!link_.configured()) return;
    if (auto m = commands_.latest()) {
      try {
        last_ = decode_commands(m->payload);
      } catch (const HalError& e) {
        log(std::string("hal: dropped command: ") + e.what());
      }
    }
    TelemetrySet tel;
    try {
      tel = link_.cycle(last_);
    } catch (const HalError& e) {
      log(std::string("hal: rejected command set: ") + e.what());
      last_ = all_off();
      tel = link_.cycle(last_);
    }
    bus_.publish(kTelemetryTopic, encode_telemetry(tel), now);
    bus_.publish(kRawTopic, raw_link_frames(last_, tel), now);
    ++cycles_;
  }

  HalLink& link() { return link_; }
  std::uint64_t cycles() const { return cycles_; }

 private:
  void log(const std::string& line) {
    if (log_) log_(line);
  }

  bus::Bus& bus_;
  std::mutex mutex_;  // handlers run on the bus executor
  HalLink link_;
  LogSink log_;
  bus::Subscription commands_;
  CommandSet last_ = all_off();
  std::uint64_t cycles_ = 0;
};

}  // namespace spacedream::hal
