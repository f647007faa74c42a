#pragma once

#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "spacedream/procman/graph.hpp"

namespace spacedream::pm {

enum class ProcState { Stopped, Starting, Ready, Failed };

inline const char* to_string(ProcState s) {
  switch (s) {
    case ProcState::Stopped: return "stopped";
    case ProcState::Starting: return "starting";
    case ProcState::Ready: return "ready";
    case ProcState::Failed: return "failed";
  }
  return "?";
}

struct ProcessStatus {
  std::string name;
  ProcState state = ProcState::Stopped;
  std::string last_output_line;
  int restarts = 0;
  std::string reason;  // why the process failed or stopped
  std::optional<TimePoint> launched, ready;
  bool error_after_ready = false;
};

/// Something a running process did: printed a line or exited.
struct ProcessEvent {
  std::string name;
  std::uint64_t incarnation = 0;
  std::optional<std::string> line;  // nullopt: process exited
  int exit_code = 0;
};

using EventSink = std::function<void(ProcessEvent)>;

/// Starts and stops processes; reports output through the sink given to attach().
class ProcessBackend {
 public:
  virtual ~ProcessBackend() = default;
  virtual void attach(EventSink sink) = 0;
  /// Throws ProcError(SpawnError) if the process cannot be started.
  virtual void launch(const ProcessSpec& spec, std::uint64_t incarnation) = 0;
  virtual void stop(const std::string& name) = 0;
};

struct SupervisorEvent {
  TimePoint time{};
  std::string name;
  std::string what;  // launched, ready, failed, stopped, error_output
  std::string detail;
};

/// Dependency-ordered supervisor driven by step(now). A process is launched
/// only once all of its dependencies are ready.
class Supervisor {
 public:
  Supervisor(ProcessGraph graph, ProcessBackend& backend) : graph_(std::move(graph)), backend_(backend) {
    for (const auto& s : graph_.specs) {
      auto& p = procs_[s.name];
      p.status.name = s.name;
      p.ready_re = std::regex(s.ready_pattern);
      if (!s.error_pattern.empty()) p.error_re = std::regex(s.error_pattern);
    }
    backend_.attach([this](ProcessEvent e) {
      std::lock_guard lock(queue_mutex_);
      queue_.push_back(std::move(e));
    });
  }

  ~Supervisor() { backend_.attach({}); }
  Supervisor(const Supervisor&) = delete;
  Supervisor& operator=(const Supervisor&) = delete;

  /// Requests every process that is not running to be started.
  void start_all(TimePoint now) {
    for (const auto& s : graph_.specs) {
      auto& p = procs_.at(s.name);
      if (p.status.state == ProcState::Stopped || p.status.state == ProcState::Failed) {
        p.wanted = true;
        if (p.status.state == ProcState::Failed) p.status.state = ProcState::Stopped;
      }
    }
    step(now);
  }

  /// Stops `name` and everything depending on it, then starts them again in order.
  void restart(const std::string& name, TimePoint now) {
    require(name);
    auto deps = graph_.dependents(name);
    for (auto it = deps.rbegin(); it != deps.rend(); ++it) stop_one(*it, now, "restart of " + name);
    stop_one(name, now, "restart");
    ++procs_.at(name).status.restarts;
    for (const auto& d : deps) ++procs_.at(d).status.restarts;
    procs_.at(name).wanted = true;
    for (const auto& d : deps) procs_.at(d).wanted = true;
    step(now);
  }

  /// Stops `name` and its dependents (dependents first).
  void stop(const std::string& name, TimePoint now) {
    require(name);
    auto deps = graph_.dependents(name);
    for (auto it = deps.rbegin(); it != deps.rend(); ++it) stop_one(*it, now, "dependency stopped");
    stop_one(name, now, "stopped");
  }

  void stop_all(TimePoint now) {
    for (auto it = graph_.specs.rbegin(); it != graph_.specs.rend(); ++it) stop_one(it->name, now, "stopped");
  }

  /// Processes output, launches what has become startable, enforces start timeouts.
  void step(TimePoint now) {
    std::deque<ProcessEvent> events;
    {
      std::lock_guard lock(queue_mutex_);
      events.swap(queue_);
    }
    for (auto& e : events) handle(e, now);
    for (const auto& s : graph_.specs) {
      auto& p = procs_.at(s.name);
      if (p.status.state == ProcState::Starting && now - *p.status.launched >= s.start_timeout) {
        backend_.stop(s.name);
        ++p.incarnation;
        fail(p, now, "ReadyTimeout");
      }
      if (!p.wanted || p.status.state != ProcState::Stopped) continue;
      bool deps_ready = true;
      for (const auto& d : s.depends_on) {
        const auto& dp = procs_.at(d);
        if (dp.status.state == ProcState::Failed && !dp.wanted) {
          p.wanted = false;
          p.status.state = ProcState::Failed;
          p.status.reason = "dependency failed: " + d;
          log(now, s.name, "failed", p.status.reason);
          deps_ready = false;
          break;
        }
        if (dp.status.state != ProcState::Ready) deps_ready = false;
      }
      if (!deps_ready || p.status.state != ProcState::Stopped) continue;
      p.wanted = false;
      p.status.state = ProcState::Starting;
      p.status.launched = now;
      p.status.ready.reset();
      p.status.reason.clear();
      p.status.error_after_ready = false;
      ++p.incarnation;
      log(now, s.name, "launched", "");
      try {
        backend_.launch(s, p.incarnation);
      } catch (const ProcError& e) {
        fail(p, now, std::string("SpawnError: ") + e.what());
      }
    }
  }

  /// No process is waiting to start or starting.
  bool settled() const {
    std::lock_guard lock(queue_mutex_);
    if (!queue_.empty()) return false;
    for (const auto& [_, p] : procs_)
      if (p.wanted || p.status.state == ProcState::Starting) return false;
    return true;
  }

  bool all_ready() const {
    for (const auto& [_, p] : procs_)
      if (p.status.state != ProcState::Ready) return false;
    return true;
  }

  ProcessStatus status(const std::string& name) const {
    require(name);
    return procs_.at(name).status;
  }

  std::vector<ProcessStatus> statuses() const {
    std::vector<ProcessStatus> out;
    for (const auto& s : graph_.specs) out.push_back(procs_.at(s.name).status);
    return out;
  }

  const std::vector<SupervisorEvent>& events() const { return log_; }
  const ProcessGraph& graph() const { return graph_; }

 private:
  struct Proc {
    ProcessStatus status;
    std::regex ready_re;
    std::optional<std::regex> error_re;
    bool wanted = false;
    std::uint64_t incarnation = 0;
  };

  void require(const std::string& name) const {
    if (!procs_.contains(name)) throw ProcError(ProcErrc::UnknownProcess, "unknown process '" + name + "'");
  }

  void handle(const ProcessEvent& e, TimePoint now) {
    auto it = procs_.find(e.name);
    if (it == procs_.end()) return;
    auto& p = it->second;
    if (e.incarnation != p.incarnation) return;  // from an instance already stopped
    if (!e.line) {
      if (p.status.state == ProcState::Starting) {
        fail(p, now, "exited before ready (code " + std::to_string(e.exit_code) + ")");
      } else if (p.status.state == ProcState::Ready) {
        p.status.state = ProcState::Stopped;
        p.status.reason = "exited (code " + std::to_string(e.exit_code) + ")";
        log(now, e.name, "stopped", p.status.reason);
      }
      return;
    }
    p.status.last_output_line = *e.line;
    const bool is_error = p.error_re && std::regex_search(*e.line, *p.error_re);
    if (p.status.state == ProcState::Starting) {
      if (is_error) {
        backend_.stop(e.name);
        ++p.incarnation;
        fail(p, now, "error output: " + *e.line);
      } else if (std::regex_search(*e.line, p.ready_re)) {
        p.status.state = ProcState::Ready;
        p.status.ready = now;
        log(now, e.name, "ready", *e.line);
      }
    } else if (p.status.state == ProcState::Ready && is_error) {
      // reported only; restarting is the caller's decision
      p.status.error_after_ready = true;
      log(now, e.name, "error_output", *e.line);
    }
  }

  void fail(Proc& p, TimePoint now, const std::string& why) {
    p.status.state = ProcState::Failed;
    p.status.reason = why;
    log(now, p.status.name, "failed", why);
  }

  void stop_one(const std::string& name, TimePoint now, const std::string& why) {
    auto& p = procs_.at(name);
    p.wanted = false;
    if (p.status.state == ProcState::Starting || p.status.state == ProcState::Ready) {
      backend_.stop(name);
      ++p.incarnation;
      log(now, name, "stopped", why);
    }
    p.status.state = ProcState::Stopped;
    p.status.reason = why;
  }

  void log(TimePoint now, const std::string& name, const std::string& what, const std::string& detail) {
    log_.push_back({now, name, what, detail});
  }

  ProcessGraph graph_;
  ProcessBackend& backend_;
  std::map<std::string, Proc> procs_;
  mutable std::mutex queue_mutex_;
  std::deque<ProcessEvent> queue_;
  std::vector<SupervisorEvent> log_;
};

/// In-process backend: each process name maps to callbacks run on launch and
/// stop. Simulated processes print through the line function they are given.
class SimBackend final : public ProcessBackend {
 public:
  using LineFn = std::function<void(const std::string&)>;
  using ExitFn = std::function<void(int)>;
  struct Program {
    std::function<void(LineFn, ExitFn)> start;
    std::function<void()> stop;
  };

  void define(const std::string& name, Program p) { programs_[name] = std::move(p); }

  void attach(EventSink sink) override { sink_ = std::move(sink); }

  void launch(const ProcessSpec& spec, std::uint64_t incarnation) override {
    auto it = programs_.find(spec.name);
    if (it == programs_.end() || !it->second.start)
      throw ProcError(ProcErrc::SpawnError, "no program for '" + spec.name + "'");
    launches_.push_back(spec.name);
    auto sink = sink_;
    const auto name = spec.name;
    it->second.start([sink, name, incarnation](const std::string& line) { sink({name, incarnation, line, 0}); },
                     [sink, name, incarnation](int code) { sink({name, incarnation, std::nullopt, code}); });
  }

  void stop(const std::string& name) override {
    auto it = programs_.find(name);
    if (it != programs_.end() && it->second.stop) it->second.stop();
  }

  const std::vector<std::string>& launches() const { return launches_; }

 private:
  EventSink sink_;
  std::map<std::string, Program> programs_;
  std::vector<std::string> launches_;
};

}  // namespace spacedream::pm
