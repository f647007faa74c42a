// procman: start a process graph and control it through a unix socket.
//
//   procman start <config> [--socket P]   supervise until SIGINT/SIGTERM or `procman shutdown`
//   procman status [--socket P]           exit 0 iff every process is ready
//   procman restart <name> [--socket P]   restart with dependents, then report like status
//   procman shutdown [--socket P]
//
// Control protocol: one request line ("status", "restart <name>", "shutdown"),
// the reply is the status table and a final "all_ready=0|1" line.

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <csignal>
#include <cstring>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "spacedream/common/files.hpp"
#include "spacedream/procman/posix.hpp"

using namespace spacedream;

namespace {

std::atomic<bool> g_stop{false};

std::string default_socket() {
  const char* dir = std::getenv("XDG_RUNTIME_DIR");
  return std::string(dir && *dir ? dir : "/tmp") + "/procman-" + std::to_string(::getuid()) + ".sock";
}

sockaddr_un socket_address(const std::string& path) {
  sockaddr_un a{};
  a.sun_family = AF_UNIX;
  if (path.size() >= sizeof a.sun_path) throw std::runtime_error("socket path too long: " + path);
  std::memcpy(a.sun_path, path.c_str(), path.size() + 1);
  return a;
}

std::string read_all(int fd) {
  std::string out;
  char buf[4096];
  ssize_t n;
  while ((n = ::read(fd, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  return out;
}

std::string read_line(int fd) {
  std::string out;
  char c;
  while (::read(fd, &c, 1) == 1 && c != '\n') out.push_back(c);
  return out;
}

void write_all(int fd, std::string_view s) {
  while (!s.empty()) {
    auto n = ::write(fd, s.data(), s.size());
    if (n <= 0) return;
    s.remove_prefix(static_cast<std::size_t>(n));
  }
}

std::string status_table(const pm::Supervisor& sup) {
  std::ostringstream o;
  for (const auto& s : sup.statuses()) {
    o << s.name << " " << pm::to_string(s.state) << " restarts=" << s.restarts;
    if (!s.reason.empty()) o << " reason=\"" << s.reason << "\"";
    if (!s.last_output_line.empty()) o << " last=\"" << s.last_output_line << "\"";
    o << "\n";
  }
  o << "all_ready=" << (sup.all_ready() ? 1 : 0) << "\n";
  return o.str();
}

int serve(const std::string& config, const std::string& sock_path) {
  auto graph = pm::load_config(read_text(config));
  pm::PosixBackend backend;
  pm::Supervisor sup(std::move(graph), backend);
  SteadyClock clock;

  int listener = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
  auto addr = socket_address(sock_path);
  ::unlink(sock_path.c_str());
  if (listener < 0 || ::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 8) != 0)
    throw std::runtime_error("cannot listen on " + sock_path + ": " + std::strerror(errno));

  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });

  sup.start_all(clock.now());
  pm::run_until_settled(sup, clock);
  std::cout << status_table(sup) << std::flush;
  if (!sup.all_ready()) {
    sup.stop_all(clock.now());
    ::close(listener);
    ::unlink(sock_path.c_str());
    return 1;
  }
  std::cout << "control socket " << sock_path << std::endl;

  while (!g_stop) {
    sup.step(clock.now());
    int c = ::accept4(listener, nullptr, nullptr, SOCK_CLOEXEC);
    if (c < 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      continue;
    }
    auto req = read_line(c);
    std::string reply;
    if (req == "status") {
      reply = status_table(sup);
    } else if (req.rfind("restart ", 0) == 0) {
      try {
        sup.restart(req.substr(8), clock.now());
        pm::run_until_settled(sup, clock);
        reply = status_table(sup);
      } catch (const pm::ProcError& e) {
        reply = std::string("error ") + e.what() + "\nall_ready=0\n";
      }
    } else if (req == "shutdown") {
      g_stop = true;
      reply = "shutting down\nall_ready=0\n";
    } else {
      reply = "error unknown request '" + req + "'\nall_ready=0\n";
    }
    write_all(c, reply);
    ::close(c);
  }
  sup.stop_all(clock.now());
  ::close(listener);
  ::unlink(sock_path.c_str());
  return 0;
}

int request(const std::string& sock_path, const std::string& req) {
  int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  auto addr = socket_address(sock_path);
  if (fd < 0 || ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    std::cerr << "procman: no supervisor on " << sock_path << "\n";
    return 2;
  }
  write_all(fd, req + "\n");
  ::shutdown(fd, SHUT_WR);
  auto reply = read_all(fd);
  ::close(fd);
  std::cout << reply;
  return reply.find("all_ready=1") != std::string::npos ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Process supervisor with dependency ordering and output-based readiness"};
  app.require_subcommand(1);
  std::string sock = default_socket();
  app.add_option("--socket", sock, "Control socket path");

  std::string config, name;
  auto* start = app.add_subcommand("start", "Start every process of a graph and supervise it");
  start->add_option("config", config, "Process graph file")->required()->check(CLI::ExistingFile);
  auto* status = app.add_subcommand("status", "Print process states; exit 0 iff all are ready");
  auto* restart = app.add_subcommand("restart", "Restart a process and its dependents");
  restart->add_option("name", name, "Process name")->required();
  auto* shutdown = app.add_subcommand("shutdown", "Stop the supervisor and its processes");
  CLI11_PARSE(app, argc, argv);

  try {
    if (*start) return serve(config, sock);
    if (*status) return request(sock, "status");
    if (*restart) return request(sock, "restart " + name);
    if (*shutdown) {
      request(sock, "shutdown");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "procman: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
