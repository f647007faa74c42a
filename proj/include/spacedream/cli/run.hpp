#pragma once

#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>

#include "spacedream/cli/scenario.hpp"
#include "spacedream/datasync/receiver.hpp"

namespace spacedream::cli {

struct FileOutcome {
  std::uint32_t generation = 0;
  std::string name;
  std::uint64_t size = 0;
  std::uint32_t data_frags = 0;
  std::size_t holes = 0;
  bool complete = false;
  bool meta_known = false;
  bool holes_reported = false;  // <name>.holes written next to the file
  bool jpeg_frag0_lost = false;
  bool header_copy = false;     // header copy fragment received
  bool jpeg_header_ok = false;  // reassembled file begins FF D8
};

struct Assertion {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Everything a scenario run measured. Serialised as key=value lines; the
/// machine-readable part is a pure function of the scenario.
struct RunReport {
  std::string scenario;
  std::uint64_t seed = 0;
  double scale = 0.0;
  double mission_time_s = 0.0;  // simulated, until the drain started
  double total_time_s = 0.0;    // simulated, including the drain
  std::uint64_t ticks = 0;

  std::vector<mission::MissionEvent> events;
  std::uint32_t boots = 0, reboots = 0, watchdog_reboots = 0;
  std::vector<std::uint32_t> generations;
  int cycles_completed = 0;
  std::uint64_t motion_commands = 0, command_sets = 0;

  std::string clock = "simulated";
  double period_mean_ms = 0.0, jitter_mean_ms = 0.0, jitter_max_ms = 0.0;
  std::map<std::string, double> mode_residence_s;
  double tracking_error_max = 0.0;  // rad, while a motion mode was active

  std::uint64_t recorded_bytes = 0;
  double recorder_rate_bps = 0.0;

  std::uint64_t sent_packets = 0, sent_bytes = 0;
  sync::ChannelStats channel;
  sync::RxStats rx;
  std::vector<FileOutcome> files;
  std::uint64_t tx_files = 0;         // files in the transmission folders at the end
  std::uint64_t tx_files_missing = 0;  // ... of which the receiver knows nothing
  std::uint64_t data_frags = 0, missing_frags = 0;
  double expected_missing = 0.0, missing_sigma = 0.0;

  std::vector<Assertion> assertions;
  bool passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const auto& a) { return a.pass; });
  }
};

struct RunOptions {
  fs::path work_dir;               // emmc_a/, emmc_b/, state/ and rx/ go here
  std::size_t wallclock_cycles = 0;  // > 0: also measure real 100 Hz loop jitter
};

namespace detail {

inline std::string fmt(double v, int prec = 3) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, v);
  return b;
}

inline double residual_miss_probability(double p, int resend) { return std::pow(p, resend); }

}  // namespace detail

/// Wall-clock measurement of the HAL + controller loop at 100 Hz.
inline ctl::JitterStats measure_wallclock_jitter(std::size_t cycles) {
  bus::Bus bus;
  hal::SimulatedArm arm;
  hal::HalNode hal_node(bus, arm, [](const std::string&) {});
  hal_node.configure();
  ctl::ControllerNode controller(bus, ctl::ControllerConfig{}, [](const std::string&) {});
  return ctl::run_wallclock(
      [&](TimePoint now) {
        hal_node.tick(now);
        controller.tick(now);
      },
      ctl::kCyclePeriod, cycles);
}

inline RunReport run_scenario(const Scenario& sc, const RunOptions& opt) {
  if (opt.work_dir.empty()) throw ScenarioError(ScenarioErrc::Invalid, "run needs a work directory");
  std::error_code ec;
  fs::remove_all(opt.work_dir, ec);
  fs::create_directories(opt.work_dir);

  mission::SystemConfig cfg;
  cfg.root = opt.work_dir;
  cfg.seed = sc.seed;
  cfg.mission.scale = sc.scale;
  cfg.mission.max_cycles = sc.cycles;
  cfg.mission.image = sc.image;
  cfg.initial_q = sc.initial_q;
  cfg.emmc_faults = sc.emmc;
  cfg.reformat_fixes = {sc.reformat_fixes, sc.reformat_fixes};
  cfg.record_topics = sc.record == "full" ? rec::full_profile() : rec::flight_profile();
  const auto rules = sync::parse_rules(cfg.transfer_rules);

  ManualClock clock;
  mission::ScriptedStartSource start;
  if (sc.start_s) start.add(at_seconds(*sc.start_s), mission::start_command());
  sync::Channel channel(sc.channel, sc.seed * 0x9E3779B97F4A7C15ull + 17);
  const auto rx_dir = opt.work_dir / "rx";
  sync::Receiver receiver(rx_dir);

  RunReport rep;
  rep.scenario = sc.name;
  rep.seed = sc.seed;
  rep.scale = sc.scale;

  auto sys = std::make_unique<mission::MissionSystem>(cfg, clock, start);
  std::size_t next_fault = 0;
  double tracking_max = 0.0;
  std::map<std::string, std::uint64_t> mode_ticks;

  auto apply = [&](const FaultAction& f) {
    if (f.module == "hal") {
      hal::FaultInjection fi;
      fi.kind = f.kind == "torque_invalid" ? hal::FaultKind::TorqueSensorInvalid
                : f.kind == "joint_stuck"  ? hal::FaultKind::JointStuck
                                           : hal::FaultKind::LinkCorruptConfig;
      fi.joint_id = static_cast<std::uint8_t>(f.joint);
      fi.active = f.active;
      sys->inject(fi);
    } else if (f.module == "mission") {
      sys->suspend_mission(f.kind == "suspend");
    } else if (f.module == "emmc") {
      sys->set_emmc_fault(f.device == "a" ? mission::EmmcId::A : mission::EmmcId::B, parse_emmc_fault(f.kind, 0));
    }
  };

  auto tick = [&] {
    const auto now = clock.now();
    while (next_fault < sc.faults.size() && at_seconds(sc.faults[next_fault].at_s) <= now) apply(sc.faults[next_fault++]);
    for (const auto& p : sys->step()) channel.send(p.bytes, now);
    for (const auto& p : channel.receive(now)) receiver.ingest_packet(p);
    if (const auto* c = sys->controller()) {
      const auto& st = c->status();
      auto m = st.mode();
      ++mode_ticks[m ? ctl::to_string(*m) : "none"];
      if (m)
        for (double e : st.tracking_error) tracking_max = std::max(tracking_max, std::abs(e));
    }
    ++rep.ticks;
    clock.advance(ctl::kCyclePeriod);
  };

  // mission part
  const auto mission_end = at_seconds(sc.duration_s);
  auto mission_done = [&] {
    if (sc.cycles <= 0 || sys->cycles_completed() < sc.cycles) return false;
    const auto* m = sys->mission();
    return m && m->stage() != mission::Stage::Demo;
  };
  while (clock.now() < mission_end && !mission_done()) tick();
  rep.mission_time_s = to_seconds(clock.now());
  sys->finish_recording();
  rep.recorded_bytes = sys->recorded_bytes();
  rep.recorder_rate_bps = rep.mission_time_s > 0 ? 8.0 * static_cast<double>(rep.recorded_bytes) / rep.mission_time_s : 0.0;

  // downlink drain: let the watcher see the closed logs, then empty the queue
  const auto drain_end = clock.now() + from_seconds(sc.drain_s);
  const auto settle = clock.now() + from_seconds(2.0 * cfg.rescan_period_s + 0.05);
  while (clock.now() < drain_end && (clock.now() < settle || !sys->downlink_idle() || !channel.empty())) tick();
  for (const auto& p : channel.drain()) receiver.ingest_packet(p);
  receiver.finalize();
  rep.total_time_s = to_seconds(clock.now());

  // system side
  const auto& st = sys->stats();
  rep.events = sys->events().events();
  rep.boots = st.boots;
  rep.reboots = st.reboots;
  rep.watchdog_reboots = st.watchdog_reboots;
  rep.generations = st.generations;
  rep.cycles_completed = sys->cycles_completed();
  rep.motion_commands = st.motion_commands;
  rep.command_sets = st.command_sets;
  rep.sent_packets = st.sent_packets;
  rep.sent_bytes = st.sent_bytes;
  for (const auto& [mode, n] : mode_ticks) rep.mode_residence_s[mode] = static_cast<double>(n) * to_seconds(ctl::kCyclePeriod);
  rep.tracking_error_max = tracking_max;
  // the harness steps the loop at exactly the nominal period
  rep.period_mean_ms = 1e3 * to_seconds(ctl::kCyclePeriod);

  // transmission folders as the ground should end up seeing them
  std::set<std::pair<std::uint32_t, std::string>> tx_files;
  for (const auto& dev : sys->devices()) {
    const auto tx = dev.tx_root();
    if (!fs::exists(tx)) continue;
    for (const auto& e : fs::recursive_directory_iterator(tx)) {
      if (!e.is_regular_file() || sync::is_transient_name(e.path().filename().string())) continue;
      auto t = sync::split_tx_path(fs::relative(e.path(), tx).generic_string(), 0);
      tx_files.insert({t.generation, t.name});
    }
  }
  sys->shutdown();
  sys.reset();

  // ground side
  rep.channel = channel.stats();
  rep.rx = receiver.stats();
  std::set<std::pair<std::uint32_t, std::string>> seen;
  for (const auto& m : receiver.manifests()) {
    FileOutcome f;
    f.generation = m.generation;
    f.meta_known = m.meta_known;
    f.name = m.meta_known ? m.name : "<unknown>";
    f.size = m.size;
    f.data_frags = m.total_frags;
    f.holes = m.holes;
    f.complete = m.complete;
    if (m.meta_known) {
      seen.insert({m.generation, m.name});
      const auto path = sync::receive_path(rx_dir, m.generation, m.name, m.file_id);
      f.holes_reported = fs::exists(path.string() + ".holes");
      if (sync::is_jpeg_name(m.name) && !m.received.empty() && !m.received[0]) {
        f.jpeg_frag0_lost = true;
        f.header_copy = m.header_copy;
        auto r = receiver.reassemble(m.generation, m.file_id);
        f.jpeg_header_ok = r.bytes.size() >= 2 && r.bytes[0] == 0xFF && r.bytes[1] == 0xD8;
      }
      rep.data_frags += m.total_frags;
      rep.missing_frags += m.holes;
      const auto& tc = rules.for_folder(sync::split_tx_path(m.name, 0).folder);
      const double q = detail::residual_miss_probability(sc.channel.loss, tc.resend_count);
      rep.expected_missing += q * m.total_frags;
      rep.missing_sigma += q * (1.0 - q) * m.total_frags;
    }
    rep.files.push_back(std::move(f));
  }
  rep.missing_sigma = std::sqrt(rep.missing_sigma);
  std::sort(rep.files.begin(), rep.files.end(), [](const auto& a, const auto& b) {
    return std::tie(a.generation, a.name) < std::tie(b.generation, b.name);
  });
  rep.tx_files = tx_files.size();
  for (const auto& f : tx_files) rep.tx_files_missing += !seen.contains(f);

  if (opt.wallclock_cycles > 0) {
    auto j = measure_wallclock_jitter(opt.wallclock_cycles);
    rep.clock = "wall";
    rep.period_mean_ms = 1e3 * j.mean_period;
    rep.jitter_mean_ms = 1e3 * j.mean_abs_jitter;
    rep.jitter_max_ms = 1e3 * j.max_abs_jitter;
  }

  // assertions
  const auto& x = sc.expect;
  auto check = [&](std::string name, bool ok, std::string detail) { rep.assertions.push_back({std::move(name), ok, std::move(detail)}); };
  if (x.reboots) check("reboots", rep.reboots == *x.reboots, std::to_string(rep.reboots) + " vs " + std::to_string(*x.reboots));
  if (x.watchdog_reboots)
    check("watchdog_reboots", rep.watchdog_reboots == *x.watchdog_reboots,
          std::to_string(rep.watchdog_reboots) + " vs " + std::to_string(*x.watchdog_reboots));
  if (x.min_cycles)
    check("min_cycles", rep.cycles_completed >= *x.min_cycles, std::to_string(rep.cycles_completed) + " >= " + std::to_string(*x.min_cycles));
  if (x.motion_commands)
    check("motion_commands", rep.motion_commands == *x.motion_commands,
          std::to_string(rep.motion_commands) + " vs " + std::to_string(*x.motion_commands));
  for (const auto& ev : x.events) {
    bool found = std::any_of(rep.events.begin(), rep.events.end(), [&](const auto& e) { return ev == mission::to_string(e.kind); });
    check("event." + ev, found, found ? "present" : "missing");
  }
  for (const auto& ev : x.absent_events) {
    auto n = std::count_if(rep.events.begin(), rep.events.end(), [&](const auto& e) { return ev == mission::to_string(e.kind); });
    check("no_event." + ev, n == 0, std::to_string(n) + " seen");
  }
  for (const auto& t : x.event_texts) {
    bool found = std::any_of(rep.events.begin(), rep.events.end(),
                             [&](const auto& e) { return mission::to_line(e).find(t) != std::string::npos; });
    check("event_text." + t, found, found ? "present" : "missing");
  }
  if (x.generations) {
    std::set<std::uint32_t> gens;
    for (const auto& f : rep.files)
      if (f.meta_known) gens.insert(f.generation);
    check("generations", gens.size() == *x.generations, std::to_string(gens.size()) + " vs " + std::to_string(*x.generations));
  }
  if (x.transfer) {
    std::size_t bad = rep.tx_files_missing;
    for (const auto& f : rep.files) {
      if (!f.meta_known) continue;
      if (*x.transfer == "complete") bad += !f.complete;
      else bad += !(f.complete || f.holes_reported);
    }
    check("transfer." + *x.transfer, bad == 0 && rep.tx_files > 0,
          std::to_string(bad) + " of " + std::to_string(rep.tx_files) + " files failing");
    // Only files whose header copy made it can be expected to start with SOI.
    std::size_t lost0 = 0, restorable = 0, header_bad = 0;
    for (const auto& f : rep.files) {
      if (!f.jpeg_frag0_lost) continue;
      ++lost0;
      if (f.header_copy) {
        ++restorable;
        header_bad += !f.jpeg_header_ok;
      }
    }
    check("jpeg_headers", header_bad == 0,
          std::to_string(lost0) + " lost fragment 0, " + std::to_string(restorable) + " with header copy, " +
              std::to_string(header_bad) + " without SOI");
  }
  if (x.residual_loss) {
    const double dev = std::abs(static_cast<double>(rep.missing_frags) - rep.expected_missing);
    const double bound = 3.0 * rep.missing_sigma + 1.0;  // +1: integer counts near zero
    check("residual_loss", dev <= bound,
          std::to_string(rep.missing_frags) + " missing, expected " + detail::fmt(rep.expected_missing, 2) + " +- " +
              detail::fmt(3.0 * rep.missing_sigma, 2));
  }
  return rep;
}

/// Line-oriented key=value report. Deterministic for a fixed scenario unless
/// wall-clock jitter was measured.
inline std::string to_kv(const RunReport& r) {
  std::ostringstream o;
  using detail::fmt;
  o << "scenario=" << r.scenario << "\n";
  o << "seed=" << r.seed << "\n";
  o << "scale=" << fmt(r.scale, 6) << "\n";
  o << "sim.mission_s=" << fmt(r.mission_time_s) << "\n";
  o << "sim.total_s=" << fmt(r.total_time_s) << "\n";
  o << "sim.ticks=" << r.ticks << "\n";
  o << "boots=" << r.boots << "\n";
  o << "reboots=" << r.reboots << "\n";
  o << "watchdog_reboots=" << r.watchdog_reboots << "\n";
  o << "generations=";
  for (std::size_t i = 0; i < r.generations.size(); ++i) o << (i ? "," : "") << r.generations[i];
  o << "\n";
  o << "cycles_completed=" << r.cycles_completed << "\n";
  o << "motion_commands=" << r.motion_commands << "\n";
  o << "command_sets=" << r.command_sets << "\n";
  o << "events.count=" << r.events.size() << "\n";
  for (std::size_t i = 0; i < r.events.size(); ++i) o << "event." << i << "=" << mission::to_line(r.events[i]) << "\n";
  o << "controller.clock=" << r.clock << "\n";
  o << "controller.period_mean_ms=" << fmt(r.period_mean_ms) << "\n";
  o << "controller.jitter_mean_ms=" << fmt(r.jitter_mean_ms) << "\n";
  o << "controller.jitter_max_ms=" << fmt(r.jitter_max_ms) << "\n";
  for (const auto& [m, s] : r.mode_residence_s) o << "controller.mode." << m << "_s=" << fmt(s, 2) << "\n";
  o << "controller.tracking_error_max_rad=" << fmt(r.tracking_error_max, 6) << "\n";
  o << "recorder.bytes=" << r.recorded_bytes << "\n";
  o << "recorder.rate_bps=" << fmt(r.recorder_rate_bps, 0) << "\n";
  o << "downlink.packets=" << r.sent_packets << "\n";
  o << "downlink.bytes=" << r.sent_bytes << "\n";
  o << "channel.lost=" << r.channel.lost << "\n";
  o << "channel.corrupted=" << r.channel.corrupted << "\n";
  o << "rx.packets=" << r.rx.packets << "\n";
  o << "rx.fragments=" << r.rx.fragments << "\n";
  o << "rx.duplicates=" << r.rx.duplicates << "\n";
  o << "rx.corrupt=" << r.rx.corrupt << "\n";
  o << "rx.malformed=" << r.rx.malformed << "\n";
  o << "transfer.tx_files=" << r.tx_files << "\n";
  o << "transfer.tx_files_unseen=" << r.tx_files_missing << "\n";
  o << "transfer.data_fragments=" << r.data_frags << "\n";
  o << "transfer.missing_fragments=" << r.missing_frags << "\n";
  o << "transfer.expected_missing=" << fmt(r.expected_missing, 3) << "\n";
  for (const auto& f : r.files) {
    o << "file." << f.generation << "/" << f.name << "=";
    if (!f.meta_known) o << "no_metadata";
    else if (f.complete) o << "complete";
    else o << "holes:" << f.holes << (f.holes_reported ? ",reported" : ",unreported");
    if (f.jpeg_frag0_lost) o << (f.jpeg_header_ok ? ",soi_restored" : ",soi_lost");
    o << "\n";
  }
  for (const auto& a : r.assertions) o << "assert." << a.name << "=" << (a.pass ? "PASS" : "FAIL") << " " << a.detail << "\n";
  o << "result=" << (r.passed() ? "PASS" : "FAIL") << "\n";
  return o.str();
}

/// Human-readable summary table.
inline std::string summary_table(const RunReport& r) {
  std::size_t complete = 0, holed = 0;
  for (const auto& f : r.files) (f.complete ? complete : holed) += 1;
  std::vector<std::pair<std::string, std::string>> rows = {
      {"scenario", r.scenario},
      {"simulated time", detail::fmt(r.mission_time_s, 1) + " s mission + " + detail::fmt(r.total_time_s - r.mission_time_s, 1) + " s drain"},
      {"boots / reboots", std::to_string(r.boots) + " / " + std::to_string(r.reboots) + " (watchdog " + std::to_string(r.watchdog_reboots) + ")"},
      {"demo cycles", std::to_string(r.cycles_completed)},
      {"motion command sets", std::to_string(r.motion_commands)},
      {"loop period / jitter", detail::fmt(r.period_mean_ms) + " ms / " + detail::fmt(r.jitter_mean_ms) + " ms (" + r.clock + ")"},
      {"max tracking error", detail::fmt(r.tracking_error_max, 4) + " rad"},
      {"recorder rate", detail::fmt(r.recorder_rate_bps / 1e3, 1) + " kbit/s"},
      {"downlink", std::to_string(r.sent_packets) + " packets, " + detail::fmt(static_cast<double>(r.sent_bytes) / 1e6, 2) + " MB"},
      {"channel lost / corrupted", std::to_string(r.channel.lost) + " / " + std::to_string(r.channel.corrupted)},
      {"files complete / with holes", std::to_string(complete) + " / " + std::to_string(holed)},
      {"missing fragments", std::to_string(r.missing_frags) + " of " + std::to_string(r.data_frags) + " (expected " +
                                detail::fmt(r.expected_missing, 1) + ")"},
  };
  std::ostringstream o;
  for (const auto& [k, v] : rows) o << "  " << std::left << std::setw(34) << k << v << "\n";
  for (const auto& a : r.assertions)
    o << "  " << std::left << std::setw(34) << ("check " + a.name) << (a.pass ? "PASS  " : "FAIL  ") << a.detail << "\n";
  o << "  " << std::left << std::setw(34) << "result" << (r.passed() ? "PASS" : "FAIL") << "\n";
  return o.str();
}

}  // namespace spacedream::cli
