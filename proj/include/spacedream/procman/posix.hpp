#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>
#include <mutex>
#include <thread>

#include "spacedream/procman/supervisor.hpp"

namespace spacedream::pm {

/// Resolves argv[0] against PATH from the process environment (not ours).
inline std::string resolve_program(const std::string& prog, const std::map<std::string, std::string>& env) {
  if (prog.find('/') != std::string::npos) return prog;
  auto it = env.find("PATH");
  std::string path = it != env.end() ? it->second : "/usr/local/bin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= path.size()) {
    auto colon = path.find(':', start);
    auto dir = path.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
    if (!dir.empty()) {
      auto candidate = dir + "/" + prog;
      if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    }
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  return prog;
}

/// fork/exec backend. stdout and stderr are merged and read line by line on a
/// thread per process. Each process gets exactly the environment of its spec.
class PosixBackend final : public ProcessBackend {
 public:
  ~PosixBackend() override {
    std::vector<std::string> names;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [n, _] : children_) names.push_back(n);
    }
    for (const auto& n : names) stop(n);
  }

  void attach(EventSink sink) override {
    std::lock_guard lock(sink_mutex_);
    sink_ = std::move(sink);
  }

  void launch(const ProcessSpec& spec, std::uint64_t incarnation) override {
    stop(spec.name);
    int out[2], status_pipe[2];
    if (::pipe2(out, O_CLOEXEC) != 0 || ::pipe2(status_pipe, O_CLOEXEC) != 0)
      throw ProcError(ProcErrc::SpawnError, spec.name + ": pipe: " + std::strerror(errno));

    std::vector<std::string> env_strings;
    for (const auto& [k, v] : spec.env) env_strings.push_back(k + "=" + v);
    std::vector<char*> envp, argv;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);
    auto args = spec.command;
    const auto program = resolve_program(args.at(0), spec.env);
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    pid_t pid = ::fork();
    if (pid < 0) throw ProcError(ProcErrc::SpawnError, spec.name + ": fork: " + std::strerror(errno));
    if (pid == 0) {
      ::setpgid(0, 0);
      ::dup2(out[1], STDOUT_FILENO);
      ::dup2(out[1], STDERR_FILENO);
      ::execve(program.c_str(), argv.data(), envp.data());
      int err = errno;
      [[maybe_unused]] auto n = ::write(status_pipe[1], &err, sizeof err);
      ::_exit(127);
    }
    ::close(out[1]);
    ::close(status_pipe[1]);
    int err = 0;
    auto n = ::read(status_pipe[0], &err, sizeof err);
    ::close(status_pipe[0]);
    if (n == static_cast<ssize_t>(sizeof err)) {
      ::close(out[0]);
      ::waitpid(pid, nullptr, 0);
      throw ProcError(ProcErrc::SpawnError, spec.name + ": exec " + program + ": " + std::strerror(err));
    }

    auto child = std::make_shared<Child>();
    child->pid = pid;
    child->reader = std::thread([this, c = child.get(), fd = out[0], pid, name = spec.name, incarnation] {
      std::string buf;
      char chunk[4096];
      for (;;) {
        auto got = ::read(fd, chunk, sizeof chunk);
        if (got < 0 && errno == EINTR) continue;
        if (got <= 0) break;
        buf.append(chunk, static_cast<std::size_t>(got));
        std::size_t nl;
        while ((nl = buf.find('\n')) != std::string::npos) {
          emit({name, incarnation, buf.substr(0, nl), 0});
          buf.erase(0, nl + 1);
        }
      }
      if (!buf.empty()) emit({name, incarnation, buf, 0});
      ::close(fd);
      int status = 0;
      ::waitpid(pid, &status, 0);
      c->done = true;
      emit({name, incarnation, std::nullopt, WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status)});
    });
    std::lock_guard lock(mutex_);
    children_[spec.name] = std::move(child);
  }

  void stop(const std::string& name) override {
    std::shared_ptr<Child> child;
    {
      std::lock_guard lock(mutex_);
      auto it = children_.find(name);
      if (it == children_.end()) return;
      child = std::move(it->second);
      children_.erase(it);
    }
    ::kill(-child->pid, SIGTERM);
    for (int i = 0; i < 200 && !child->done; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    if (!child->done) ::kill(-child->pid, SIGKILL);
    if (child->reader.joinable()) child->reader.join();
  }

  /// Sends a signal to a running process (for fault injection).
  bool signal(const std::string& name, int sig) {
    std::lock_guard lock(mutex_);
    auto it = children_.find(name);
    return it != children_.end() && ::kill(it->second->pid, sig) == 0;
  }

 private:
  struct Child {
    pid_t pid = -1;
    std::atomic<bool> done{false};
    std::thread reader;
  };

  void emit(ProcessEvent e) {
    std::lock_guard lock(sink_mutex_);
    if (sink_) sink_(std::move(e));
  }

  EventSink sink_;
  std::mutex mutex_, sink_mutex_;
  std::map<std::string, std::shared_ptr<Child>> children_;
};

/// Steps the supervisor on the steady clock until nothing is starting.
inline void run_until_settled(Supervisor& sup, const Clock& clock, Duration poll = std::chrono::milliseconds(5)) {
  sup.step(clock.now());
  while (!sup.settled()) {
    std::this_thread::sleep_for(poll);
    sup.step(clock.now());
  }
}

}  // namespace spacedream::pm
