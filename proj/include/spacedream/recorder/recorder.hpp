#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/recorder/log_file.hpp"

namespace spacedream::rec {

struct TopicRate {
  std::string topic;
  double rate_hz = 0.0;  // 0: keep every message
};

struct RecordingConfig {
  std::vector<TopicRate> topics;
  std::size_t rotation_bytes = 4u << 20;
  fs::path out_dir;                      // tx/<generation>/logs
  std::uint32_t boot_generation = 0;
  std::uint64_t storage_limit_bytes = 0;  // 0: unlimited
  std::size_t queue_depth = 64;
};

/// Rates used on the parabolic flights: everything the bus carries at full rate.
inline std::vector<TopicRate> full_profile() {
  return {{"hal/telemetry", 100.0}, {"hal/command", 100.0}, {"hal/raw", 100.0},
          {"controller/state", 100.0}, {"mission/events", 0.0}, {"camera/events", 0.0}};
}

/// Reduced rates for the space flight.
inline std::vector<TopicRate> flight_profile() {
  return {{"hal/telemetry", 50.0}, {"hal/command", 10.0}, {"hal/raw", 10.0},
          {"controller/state", 20.0}, {"mission/events", 0.0}, {"camera/events", 0.0}};
}

inline std::vector<TopicRate> scaled_rates(std::vector<TopicRate> rates, double factor) {
  for (auto& r : rates)
    if (r.rate_hz > 0.0) r.rate_hz *= factor;
  return rates;
}

inline std::string sanitize_topic(std::string_view topic) {
  std::string out;
  for (char c : topic) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return out;
}

inline fs::path log_path(const fs::path& dir, std::string_view topic, std::uint32_t index) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "_%04u", index);
  return dir / (sanitize_topic(topic) + idx + kLogExtension);
}

struct RecorderStats {
  std::uint64_t bytes_written = 0;
  std::uint64_t records = 0;
  std::uint64_t dropped = 0;  // subscriber queue overflows
  std::map<std::string, std::uint64_t> records_per_topic;
  std::vector<fs::path> closed_files;
};

/// Records bus topics into rotating log files. Downsampling keeps the most
/// recent message per record tick.
class Recorder {
 public:
  using FaultSink = std::function<void(const std::string&)>;

  Recorder(bus::Bus& bus, RecordingConfig cfg, FaultSink on_fault = {})
      : bus_(bus), cfg_(std::move(cfg)), on_fault_(std::move(on_fault)) {
    if (cfg_.rotation_bytes == 0) throw std::invalid_argument("rotation size must be > 0");
    for (const auto& t : cfg_.topics) {
      if (t.rate_hz < 0.0) throw std::invalid_argument("record rate must be >= 0 for " + t.topic);
      auto st = std::make_unique<TopicState>();
      st->rate = t;
      attach(*st);
      topics_.push_back(std::move(st));
    }
  }

  ~Recorder() {
    try {
      close();
    } catch (...) {
    }
  }

  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;

  void tick(TimePoint now) {
    if (stopped_) return;
    for (auto& t : topics_) {
      if (!t->sub) attach(*t);
      if (!t->sub) continue;
      if (t->every_message) {
        for (auto& m : t->sub->drain()) write(*t, m);
      } else if (now >= t->next_due) {
        auto msgs = t->sub->drain();
        if (!msgs.empty() && (!t->last_seq || msgs.back().seq != *t->last_seq)) write(*t, msgs.back());
        while (t->next_due <= now) t->next_due += t->period;
      }
      if (stopped_) return;
    }
  }

  /// Closes all active files (footer + rename).
  void close() {
    for (auto& t : topics_) {
      if (t->sub) stats_.dropped += t->sub->overflow_count() - t->overflow_seen;
      if (t->sub) t->overflow_seen = t->sub->overflow_count();
      if (t->writer) {
        stats_.closed_files.push_back(t->writer->close());
        t->writer.reset();
      }
    }
  }

  bool stopped() const { return stopped_; }
  const RecorderStats& stats() const { return stats_; }
  const RecordingConfig& config() const { return cfg_; }

 private:
  struct TopicState {
    TopicRate rate;
    std::optional<bus::Subscription> sub;
    bool every_message = false;
    Duration period{};
    TimePoint next_due{};
    std::optional<std::uint64_t> last_seq;
    std::unique_ptr<LogWriter> writer;
    std::uint32_t next_index = 0;
    std::uint64_t overflow_seen = 0;
  };

  void attach(TopicState& t) {
    if (!bus_.has_topic(t.rate.topic)) return;
    double nominal = 0.0;
    for (const auto& spec : bus_.topics())
      if (spec.name == t.rate.topic) nominal = spec.nominal_rate;
    t.sub = bus_.subscribe(t.rate.topic, cfg_.queue_depth);
    t.every_message = t.rate.rate_hz <= 0.0 || nominal <= 0.0 || t.rate.rate_hz >= nominal;
    if (!t.every_message) t.period = Duration{static_cast<std::int64_t>(std::llround(1e9 / t.rate.rate_hz))};
    while (fs::exists(log_path(cfg_.out_dir, t.rate.topic, t.next_index)) ||
           fs::exists(fs::path(log_path(cfg_.out_dir, t.rate.topic, t.next_index).string() + kPartialSuffix)))
      ++t.next_index;
  }

  void write(TopicState& t, const bus::Message& m) {
    LogRecord r{m.seq, m.stamp, t.rate.topic, m.payload};
    const auto size = encode_record(r).size();
    if (cfg_.storage_limit_bytes && stats_.bytes_written + size > cfg_.storage_limit_bytes) {
      storage_full("storage limit reached");
      return;
    }
    try {
      if (!t.writer) {
        t.writer = std::make_unique<LogWriter>(log_path(cfg_.out_dir, t.rate.topic, t.next_index++),
                                               LogHeader{cfg_.boot_generation, t.rate.topic, m.stamp});
        stats_.bytes_written += t.writer->size();
      }
      const auto before = t.writer->size();
      t.writer->append(r);
      stats_.bytes_written += t.writer->size() - before;
      ++stats_.records;
      ++stats_.records_per_topic[t.rate.topic];
      t.last_seq = m.seq;
      if (t.writer->size() >= cfg_.rotation_bytes) {
        stats_.closed_files.push_back(t.writer->close());
        t.writer.reset();
      }
    } catch (const RecorderError& e) {
      storage_full(e.what());
    }
  }

  void storage_full(const std::string& why) {
    stopped_ = true;
    try {
      close();
    } catch (const RecorderError&) {
    }
    if (on_fault_) on_fault_("recorder: StorageFull: " + why);
  }

  bus::Bus& bus_;
  RecordingConfig cfg_;
  FaultSink on_fault_;
  std::vector<std::unique_ptr<TopicState>> topics_;
  RecorderStats stats_;
  bool stopped_ = false;
};

}  // namespace spacedream::rec
