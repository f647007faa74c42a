// Watches a transmission folder and sends every file over UDP, paced by a
// token bucket, with per-folder priority / resend / min-interval rules.

#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "spacedream/common/udp.hpp"
#include "spacedream/datasync/watcher.hpp"
#include "tool_util.hpp"

using namespace spacedream;

int main(int argc, char** argv) {
  CLI::App app{"Acknowledgement-free prioritized file sender"};
  std::string root, config, dest = "127.0.0.1:47100";
  double rate = 1e6, rescan = 1.0, max_seconds = 0.0;
  std::size_t fragment_size = sync::kDefaultFragmentSize, budget = sync::kDefaultPacketBudget;
  std::uint32_t generation = 0;
  bool exit_idle = false, refill = false, no_inotify = false;
  app.add_option("--root", root, "Transmission folder (tx/)")->required()->check(CLI::ExistingDirectory);
  app.add_option("--rate", rate, "Rate limit in bit/s")->check(CLI::PositiveNumber);
  app.add_option("--config", config, "Per-folder transfer rules")->check(CLI::ExistingFile);
  app.add_option("--dest", dest, "Receiver host:port");
  app.add_option("--fragment-size", fragment_size, "Payload bytes per fragment");
  app.add_option("--packet-budget", budget, "Maximum UDP payload bytes");
  app.add_option("--rescan", rescan, "Checksum rescan period in seconds");
  app.add_option("--generation", generation, "Boot generation for files outside a numeric generation folder");
  app.add_option("--max-seconds", max_seconds, "Stop after this long (0: run until interrupted)");
  app.add_flag("--exit-when-idle", exit_idle, "Stop once everything found has been sent");
  app.add_flag("--refill", refill, "Resend retired fragments at lowest priority while the link is idle");
  app.add_flag("--no-inotify", no_inotify, "Rely on the periodic rescan only");
  CLI11_PARSE(app, argc, argv);

  try {
    sync::TransferRules rules;
    if (!config.empty()) rules = sync::parse_rules(read_text(config));
    sync::SenderConfig sc;
    sc.rate_bps = rate;
    sc.fragment_size = fragment_size;
    sc.packet_budget = budget;
    sc.refill_when_idle = refill;
    sync::SyncService svc(root, rules, sc, from_seconds(rescan), generation, !no_inotify);
    UdpSocket sock;
    SteadyClock clock;
    tools::install_stop_handlers();
    const auto t0 = clock.now();
    while (!tools::stop_flag()) {
      const auto now = clock.now();
      for (const auto& p : svc.poll(now)) sock.send_to(dest, p.bytes);
      if (max_seconds > 0 && now - t0 >= from_seconds(max_seconds)) break;
      if (exit_idle && svc.sender().idle() && svc.watcher().rescans() > 0) break;
      auto wake = svc.sender().next_wakeup(now).value_or(now + std::chrono::milliseconds(20));
      auto nap = std::clamp<Duration>(wake - clock.now(), std::chrono::milliseconds(0), std::chrono::milliseconds(20));
      std::this_thread::sleep_for(nap);
    }
    const auto& st = svc.sender().stats();
    std::cerr << "sent packets=" << st.packets << " fragments=" << st.fragments << " bytes=" << st.bytes
              << " files=" << svc.stats().files_queued << "\n";
  } catch (const std::exception& e) {
    std::cerr << "datasync-send: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
