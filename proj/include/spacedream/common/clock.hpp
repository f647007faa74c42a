#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <mutex>

namespace spacedream {

using Duration = std::chrono::nanoseconds;

/// Monotonic time since the start of a run. Simulated runs start at zero.
struct MonoClock {
  using rep = std::int64_t;
  using period = std::nano;
  using duration = Duration;
  using time_point = std::chrono::time_point<MonoClock, Duration>;
  static constexpr bool is_steady = true;
};

using TimePoint = MonoClock::time_point;

constexpr Duration from_seconds(double s) {
  return Duration{static_cast<std::int64_t>(std::llround(s * 1e9))};
}
constexpr double to_seconds(Duration d) { return static_cast<double>(d.count()) * 1e-9; }
constexpr double to_seconds(TimePoint t) { return to_seconds(t.time_since_epoch()); }
constexpr TimePoint at_seconds(double s) { return TimePoint{from_seconds(s)}; }

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimePoint now() const = 0;
};

/// Clock advanced explicitly by the owner of a simulation.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(TimePoint start = TimePoint{}) : now_(start) {}

  TimePoint now() const override {
    std::lock_guard lock(mutex_);
    return now_;
  }
  void advance(Duration d) {
    std::lock_guard lock(mutex_);
    now_ += d;
  }
  void set(TimePoint t) {
    std::lock_guard lock(mutex_);
    now_ = t;
  }

 private:
  mutable std::mutex mutex_;
  TimePoint now_;
};

/// Wall clock measured from construction.
class SteadyClock final : public Clock {
 public:
  SteadyClock() : origin_(std::chrono::steady_clock::now()) {}
  TimePoint now() const override {
    return TimePoint{std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - origin_)};
  }

 private:
  std::chrono::steady_clock::time_point origin_;
};

}  // namespace spacedream
