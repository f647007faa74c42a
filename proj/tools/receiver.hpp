#pragma once

#include <iostream>

#include "spacedream/common/udp.hpp"
#include "spacedream/datasync/receiver.hpp"
#include "tool_util.hpp"

namespace spacedream::tools {

inline int run_receiver(const std::string& listen, const std::string& out, double idle_exit) {
  UdpSocket sock;
  sock.bind(listen);
  sync::Receiver rx{fs::path(out)};
  install_stop_handlers();
  std::cerr << "listening on port " << sock.local_port() << ", writing to " << out << "\n";
  SteadyClock clock;
  auto last = clock.now();
  while (!stop_flag()) {
    if (auto d = sock.receive(std::chrono::milliseconds(100))) {
      rx.ingest_packet(*d);
      last = clock.now();
    } else if (idle_exit > 0 && clock.now() - last >= from_seconds(idle_exit)) {
      break;
    }
  }
  rx.finalize();
  const auto st = rx.stats();
  std::size_t complete = 0, holed = 0;
  for (const auto& m : rx.manifests()) (m.complete ? complete : holed) += 1;
  std::cerr << "packets=" << st.packets << " fragments=" << st.fragments << " duplicates=" << st.duplicates
            << " corrupt=" << st.corrupt << " malformed=" << st.malformed << " files_complete=" << complete
            << " files_with_holes=" << holed << "\n";
  return 0;
}

}  // namespace spacedream::tools
