#pragma once

#include <array>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spacedream/common/clock.hpp"
#include "spacedream/common/files.hpp"

namespace spacedream::mission {

enum class EmmcId : std::uint8_t { A = 0, B = 1 };
enum class MountState : std::uint8_t { Unmounted, Mounted, Failed };
enum class EmmcFault : std::uint8_t { None, MountFail, ControllerHang };

inline const char* to_string(EmmcId id) { return id == EmmcId::A ? "A" : "B"; }
inline EmmcId other(EmmcId id) { return id == EmmcId::A ? EmmcId::B : EmmcId::A; }

inline const char* to_string(EmmcFault f) {
  switch (f) {
    case EmmcFault::None: return "none";
    case EmmcFault::MountFail: return "mount_fail";
    case EmmcFault::ControllerHang: return "controller_hang";
  }
  return "?";
}

/// One simulated flash device. `reformat_fixes` decides whether a reformat
/// clears a mount_fail fault (a hung controller is not cured by reformatting).
struct EmmcDevice {
  EmmcId id = EmmcId::A;
  fs::path mount_point;  // stands in for the block device's filesystem
  MountState mount_state = MountState::Unmounted;
  EmmcFault fault = EmmcFault::None;
  bool reformat_fixes = true;

  /// tx/<generation> on this device: where the boot's data goes.
  fs::path data_root(std::uint32_t generation) const { return mount_point / "tx" / std::to_string(generation); }
  fs::path tx_root() const { return mount_point / "tx"; }
};

using EmmcPair = std::array<EmmcDevice, 2>;

inline EmmcPair make_emmc_pair(const fs::path& base) {
  EmmcPair p;
  p[0].id = EmmcId::A;
  p[0].mount_point = base / "emmc_a";
  p[1].id = EmmcId::B;
  p[1].mount_point = base / "emmc_b";
  return p;
}

/// Simulated hardware watchdog. Once armed, failing to pet it for longer than
/// the timeout fires exactly one reboot; it stays fired until re-created.
class WatchdogTimer {
 public:
  explicit WatchdogTimer(Duration timeout) : timeout_(timeout) {}

  void arm(TimePoint now) {
    std::lock_guard lock(mutex_);
    armed_ = true;
    last_pet_ = now;
  }
  void pet(TimePoint now) {
    std::lock_guard lock(mutex_);
    if (now > last_pet_) last_pet_ = now;
    ++pets_;
  }
  /// True exactly once: on the first poll after the deadline passed.
  bool poll(TimePoint now) {
    std::lock_guard lock(mutex_);
    if (!armed_ || fired_ || now - last_pet_ <= timeout_) return false;
    fired_ = true;
    return true;
  }
  /// When the watchdog fires at the earliest if nobody pets it.
  TimePoint deadline() const {
    std::lock_guard lock(mutex_);
    return last_pet_ + timeout_;
  }

  bool armed() const {
    std::lock_guard lock(mutex_);
    return armed_;
  }
  bool fired() const {
    std::lock_guard lock(mutex_);
    return fired_;
  }
  TimePoint last_pet() const {
    std::lock_guard lock(mutex_);
    return last_pet_;
  }
  std::uint64_t pets() const {
    std::lock_guard lock(mutex_);
    return pets_;
  }
  Duration timeout() const { return timeout_; }

 private:
  Duration timeout_;
  mutable std::mutex mutex_;
  bool armed_ = false;
  bool fired_ = false;
  TimePoint last_pet_{};
  std::uint64_t pets_ = 0;
};

enum class StartupOutcome { Ready, Reboot, Hung };

inline const char* to_string(StartupOutcome o) {
  switch (o) {
    case StartupOutcome::Ready: return "ready";
    case StartupOutcome::Reboot: return "reboot";
    case StartupOutcome::Hung: return "hung";
  }
  return "?";
}

struct StartupReport {
  StartupOutcome outcome = StartupOutcome::Ready;
  std::optional<EmmcId> mounted;
  EmmcId first_pick = EmmcId::A;
  bool fallback = false;
  bool reformatted = false;
  std::vector<std::string> steps;  // in execution order
  std::vector<std::string> faults;
};

namespace detail {
inline bool try_mount(EmmcDevice& d, StartupReport& r) {
  r.steps.push_back(std::string("mount ") + to_string(d.id));
  switch (d.fault) {
    case EmmcFault::None:
      fs::create_directories(d.mount_point);
      d.mount_state = MountState::Mounted;
      return true;
    case EmmcFault::MountFail:
      d.mount_state = MountState::Failed;
      r.faults.push_back(std::string("emmc ") + to_string(d.id) + " mount failed");
      return false;
    case EmmcFault::ControllerHang:
      r.faults.push_back(std::string("emmc ") + to_string(d.id) + " controller hung during mount");
      return false;
  }
  return false;
}
}  // namespace detail

/// Boot sequence up to the point where network and storage are usable:
/// networks, watchdog, then one randomly picked eMMC with the other as
/// fallback, a reformat of both as the next step and a reboot as the last.
/// A hung controller blocks the sequence; the armed watchdog ends it.
inline StartupReport run_startup(EmmcPair& devices, std::mt19937_64& rng, WatchdogTimer& watchdog, TimePoint now) {
  StartupReport r;
  for (auto& d : devices) d.mount_state = MountState::Unmounted;
  r.steps.push_back("enable networks");
  watchdog.arm(now);
  r.steps.push_back("arm watchdog");

  const auto first = std::bernoulli_distribution(0.5)(rng) ? EmmcId::B : EmmcId::A;
  r.first_pick = first;
  auto& a = devices[static_cast<int>(first)];
  auto& b = devices[static_cast<int>(other(first))];
  auto hung = [&](const EmmcDevice& d) {
    if (d.fault != EmmcFault::ControllerHang) return false;
    r.outcome = StartupOutcome::Hung;
    return true;
  };

  if (detail::try_mount(a, r)) {
    r.mounted = a.id;
  } else if (hung(a)) {
    return r;
  } else {
    r.fallback = true;
    if (detail::try_mount(b, r)) {
      r.mounted = b.id;
    } else if (hung(b)) {
      return r;
    } else {
      r.steps.push_back("reformat both");
      r.reformatted = true;
      for (auto* d : {&a, &b}) {
        if (d->fault == EmmcFault::MountFail && d->reformat_fixes) d->fault = EmmcFault::None;
        std::error_code ec;
        fs::remove_all(d->mount_point, ec);
      }
      for (auto* d : {&a, &b}) {
        if (detail::try_mount(*d, r)) {
          r.mounted = d->id;
          break;
        }
        if (hung(*d)) return r;
      }
      if (!r.mounted) {
        r.steps.push_back("reboot");
        r.outcome = StartupOutcome::Reboot;
        return r;
      }
    }
  }
  r.steps.push_back("ready");
  r.outcome = StartupOutcome::Ready;
  return r;
}

}  // namespace spacedream::mission
