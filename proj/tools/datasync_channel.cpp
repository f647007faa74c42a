// UDP relay that puts the lossy downlink model between sender and receiver:
// loss, single-byte corruption, bounded reordering, bandwidth delay.

#include <iostream>

#include "CLI11.hpp"
#include "spacedream/common/udp.hpp"
#include "spacedream/datasync/channel.hpp"
#include "tool_util.hpp"

using namespace spacedream;

int main(int argc, char** argv) {
  CLI::App app{"Lossy channel simulator"};
  std::string listen = "0.0.0.0:47101", forward = "127.0.0.1:47100";
  sync::ChannelModel m;
  std::uint64_t seed = 1;
  app.add_option("--listen", listen, "host:port the sender targets");
  app.add_option("--forward", forward, "host:port of the receiver");
  app.add_option("--loss", m.loss, "Packet loss probability")->check(CLI::Range(0.0, 1.0));
  app.add_option("--corrupt", m.corruption, "Packet corruption probability")->check(CLI::Range(0.0, 1.0));
  app.add_option("--reorder", m.reorder_window, "Reorder window in packets");
  app.add_option("--bandwidth", m.bandwidth_bps, "Link bandwidth in bit/s (0: unlimited)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "Random seed");
  CLI11_PARSE(app, argc, argv);
  try {
    sync::Channel ch(m, seed);
    UdpSocket in, out;
    in.bind(listen);
    SteadyClock clock;
    tools::install_stop_handlers();
    while (!tools::stop_flag()) {
      if (auto d = in.receive(std::chrono::milliseconds(1))) ch.send(*d, clock.now());
      for (const auto& p : ch.receive(clock.now())) out.send_to(forward, p);
    }
    for (const auto& p : ch.drain()) out.send_to(forward, p);
    const auto& st = ch.stats();
    std::cerr << "in=" << st.in << " lost=" << st.lost << " corrupted=" << st.corrupted << " delivered=" << st.delivered << "\n";
  } catch (const std::exception& e) {
    std::cerr << "datasync-channel: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
