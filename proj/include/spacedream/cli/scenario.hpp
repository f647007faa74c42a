#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spacedream/common/error.hpp"
#include "spacedream/common/files.hpp"
#include "spacedream/common/text_config.hpp"
#include "spacedream/datasync/channel.hpp"
#include "spacedream/mission/system.hpp"

namespace spacedream::cli {

enum class ScenarioErrc { Parse, Invalid, Io };
using ScenarioError = Error<ScenarioErrc>;

// Scenario files use the shared plain-text format:
//
//   name = lossy_5pct
//   description = one line shown by `scenarios list`
//   scale = 1/60               time scale of the mission timeline
//   seed = 42
//   cycles = 3                 demo cycles to complete before the downlink drain
//   duration = 300s            simulated time limit for the mission part
//   drain = 900s               simulated time limit for the downlink drain
//   start = 0.05s              start datagram arrival; "none" for ground test
//   record = flight            recorder profile: flight | full
//   image = 640x480 rgb        mission image format (gray | rgb)
//   emmc_a = mount_fail        boot-time eMMC state: ok | mount_fail | controller_hang
//   emmc_b = ok
//   reformat_fixes = true
//   initial_q = 0.1 0.2 0 0    joint configuration at power-on, rad
//
//   [channel]
//   loss = 0.05                packet loss probability
//   corrupt = 0                packet corruption probability
//   reorder = 0                reorder window, packets
//   bandwidth = 0              bit/s, 0: only the sender's rate limit applies
//
//   [fault 30s]                one block per scheduled fault
//   module = hal               hal | mission | emmc
//   kind = torque_invalid      hal: torque_invalid | joint_stuck | link_corrupt
//   joint = 2                  mission: suspend | resume
//   active = true              emmc: <device> = a | b, kind = ok | mount_fail | controller_hang
//
//   [expect]                   assertions checked into the report
//   reboots = 0
//   watchdog_reboots = 1
//   min_cycles = 3
//   motion_commands = 0
//   event = hdrm_release       repeatable: an event kind that must appear
//   no_event = reboot          repeatable: an event kind that must not appear
//   event_text = fallback_from repeatable: text some event line must contain
//   transfer = complete        complete | complete_or_holes
//   residual_loss = true       missing data fragments match the binomial oracle
//   generations = 2            distinct boot generations seen at the receiver

struct FaultAction {
  double at_s = 0.0;  // simulated seconds from the scenario start
  std::string module;
  std::string kind;
  int joint = 0;
  bool active = true;
  std::string device;  // emmc only
};

struct Expectations {
  std::optional<std::uint32_t> reboots, watchdog_reboots, generations;
  std::optional<int> min_cycles;
  std::optional<std::uint64_t> motion_commands;
  std::vector<std::string> events, absent_events, event_texts;
  std::optional<std::string> transfer;
  bool residual_loss = false;
};

struct Scenario {
  std::string name;
  std::string description;
  double scale = 1.0 / 60.0;
  std::uint64_t seed = 1;
  int cycles = 1;
  double duration_s = 300.0;
  double drain_s = 900.0;
  std::optional<double> start_s = 0.05;
  std::string record = "flight";
  cam::CaptureParams image{};
  std::array<mission::EmmcFault, 2> emmc{mission::EmmcFault::None, mission::EmmcFault::None};
  bool reformat_fixes = true;
  hal::JointVector initial_q{};
  sync::ChannelModel channel{};
  std::vector<FaultAction> faults;  // sorted by time
  Expectations expect;
};

inline mission::EmmcFault parse_emmc_fault(const std::string& s, std::size_t line) {
  if (s == "ok" || s == "none") return mission::EmmcFault::None;
  if (s == "mount_fail") return mission::EmmcFault::MountFail;
  if (s == "controller_hang") return mission::EmmcFault::ControllerHang;
  throw ConfigParseError(line, "unknown eMMC state '" + s + "'");
}

inline double parse_ratio(std::string_view s, std::size_t line) {
  auto slash = s.find('/');
  if (slash == std::string_view::npos) return parse_double(s, line);
  const double den = parse_double(trim(s.substr(slash + 1)), line);
  if (den == 0.0) throw ConfigParseError(line, "division by zero");
  return parse_double(trim(s.substr(0, slash)), line) / den;
}

inline Scenario parse_scenario(std::string_view text) {
  Scenario s;
  try {
    auto doc = parse_config(text);
    for (const auto& e : doc.top.entries) {
      const auto& v = e.value;
      if (e.key == "name") s.name = v;
      else if (e.key == "description") s.description = v;
      else if (e.key == "scale") s.scale = parse_ratio(v, e.line);
      else if (e.key == "seed") s.seed = static_cast<std::uint64_t>(parse_int(v, e.line));
      else if (e.key == "cycles") s.cycles = static_cast<int>(parse_int(v, e.line));
      else if (e.key == "duration") s.duration_s = parse_seconds(v, e.line);
      else if (e.key == "drain") s.drain_s = parse_seconds(v, e.line);
      else if (e.key == "start") s.start_s = v == "none" ? std::nullopt : std::optional(parse_seconds(v, e.line));
      else if (e.key == "record") {
        if (v != "flight" && v != "full") throw ConfigParseError(e.line, "record must be flight or full");
        s.record = v;
      } else if (e.key == "image") {
        auto parts = split_list(v);
        auto x = parts.empty() ? std::string::npos : parts[0].find('x');
        if (x == std::string::npos || parts.size() > 2) throw ConfigParseError(e.line, "image must be WxH [gray|rgb]");
        s.image.width = static_cast<int>(parse_int(parts[0].substr(0, x), e.line));
        s.image.height = static_cast<int>(parse_int(parts[0].substr(x + 1), e.line));
        if (parts.size() == 2) {
          if (parts[1] == "gray") s.image.color = cam::ColorSpace::Gray8;
          else if (parts[1] == "rgb") s.image.color = cam::ColorSpace::Rgb8;
          else throw ConfigParseError(e.line, "image color must be gray or rgb");
        }
      } else if (e.key == "emmc_a") s.emmc[0] = parse_emmc_fault(v, e.line);
      else if (e.key == "emmc_b") s.emmc[1] = parse_emmc_fault(v, e.line);
      else if (e.key == "reformat_fixes") s.reformat_fixes = parse_bool(v, e.line);
      else if (e.key == "initial_q") {
        auto parts = split_list(v);
        if (parts.size() != hal::kJoints) throw ConfigParseError(e.line, "initial_q needs 4 values");
        for (std::size_t j = 0; j < hal::kJoints; ++j) s.initial_q[j] = parse_double(parts[j], e.line);
      } else throw ConfigParseError(e.line, "unknown key '" + e.key + "'");
    }
    for (const auto& b : doc.blocks) {
      if (b.kind == "channel") {
        for (const auto& e : b.entries) {
          if (e.key == "loss") s.channel.loss = parse_double(e.value, e.line);
          else if (e.key == "corrupt") s.channel.corruption = parse_double(e.value, e.line);
          else if (e.key == "reorder") s.channel.reorder_window = static_cast<std::size_t>(parse_int(e.value, e.line));
          else if (e.key == "bandwidth") s.channel.bandwidth_bps = parse_double(e.value, e.line);
          else throw ConfigParseError(e.line, "unknown channel key '" + e.key + "'");
        }
      } else if (b.kind == "fault") {
        FaultAction f;
        f.at_s = parse_seconds(b.name, b.line);
        for (const auto& e : b.entries) {
          if (e.key == "module") f.module = e.value;
          else if (e.key == "kind") f.kind = e.value;
          else if (e.key == "joint") f.joint = static_cast<int>(parse_int(e.value, e.line));
          else if (e.key == "active") f.active = parse_bool(e.value, e.line);
          else if (e.key == "device") f.device = e.value;
          else throw ConfigParseError(e.line, "unknown fault key '" + e.key + "'");
        }
        s.faults.push_back(f);
      } else if (b.kind == "expect") {
        auto& x = s.expect;
        for (const auto& e : b.entries) {
          if (e.key == "reboots") x.reboots = static_cast<std::uint32_t>(parse_int(e.value, e.line));
          else if (e.key == "watchdog_reboots") x.watchdog_reboots = static_cast<std::uint32_t>(parse_int(e.value, e.line));
          else if (e.key == "generations") x.generations = static_cast<std::uint32_t>(parse_int(e.value, e.line));
          else if (e.key == "min_cycles") x.min_cycles = static_cast<int>(parse_int(e.value, e.line));
          else if (e.key == "motion_commands") x.motion_commands = static_cast<std::uint64_t>(parse_int(e.value, e.line));
          else if (e.key == "event") x.events.push_back(e.value);
          else if (e.key == "no_event") x.absent_events.push_back(e.value);
          else if (e.key == "event_text") x.event_texts.push_back(e.value);
          else if (e.key == "transfer") {
            if (e.value != "complete" && e.value != "complete_or_holes")
              throw ConfigParseError(e.line, "transfer must be complete or complete_or_holes");
            x.transfer = e.value;
          } else if (e.key == "residual_loss") x.residual_loss = parse_bool(e.value, e.line);
          else throw ConfigParseError(e.line, "unknown expect key '" + e.key + "'");
        }
      } else {
        throw ConfigParseError(b.line, "unknown block '" + b.kind + "'");
      }
    }
  } catch (const ConfigParseError& e) {
    throw ScenarioError(ScenarioErrc::Parse, e.what());
  }
  std::stable_sort(s.faults.begin(), s.faults.end(), [](const auto& a, const auto& b) { return a.at_s < b.at_s; });
  // validation
  auto bad = [](const std::string& why) { throw ScenarioError(ScenarioErrc::Invalid, why); };
  if (s.name.empty()) bad("scenario needs a name");
  if (!(s.scale > 0.0)) bad("scale must be > 0");
  if (s.cycles < 0) bad("cycles must be >= 0");
  if (!(s.duration_s > 0.0) || s.drain_s < 0.0) bad("duration must be > 0 and drain >= 0");
  try {
    s.channel.validate();
  } catch (const sync::SyncError& e) {
    bad(e.what());
  }
  for (const auto& f : s.faults) {
    if (f.at_s < 0.0 || f.at_s > s.duration_s) bad("fault at " + std::to_string(f.at_s) + " s lies outside the duration");
    if (f.module == "hal") {
      if (f.kind != "torque_invalid" && f.kind != "joint_stuck" && f.kind != "link_corrupt") bad("unknown hal fault '" + f.kind + "'");
      if (f.joint < 0 || f.joint >= static_cast<int>(hal::kJoints)) bad("fault joint out of range");
    } else if (f.module == "mission") {
      if (f.kind != "suspend" && f.kind != "resume") bad("unknown mission fault '" + f.kind + "'");
    } else if (f.module == "emmc") {
      if (f.device != "a" && f.device != "b") bad("emmc fault needs device = a | b");
      parse_emmc_fault(f.kind, 0);
    } else {
      bad("unknown fault module '" + f.module + "'");
    }
  }
  return s;
}

inline Scenario load_scenario(const fs::path& p) {
  try {
    return parse_scenario(read_text(p));
  } catch (const ScenarioError& e) {
    throw ScenarioError(e.code(), p.filename().string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ScenarioError(ScenarioErrc::Io, e.what());
  }
}

}  // namespace spacedream::cli
