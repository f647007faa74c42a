// Ground receiver: merges fragments into rx/<generation>/<name>, writing
// <name>.holes next to files that could not be completed.

#include "CLI11.hpp"
#include "receiver.hpp"

using namespace spacedream;

int main(int argc, char** argv) {
  CLI::App app{"Ground receiver for the downlink"};
  std::string listen = "0.0.0.0:47100", out;
  double idle_exit = 0.0;
  app.add_option("--listen", listen, "host:port to bind");
  app.add_option("--out", out, "Output folder (rx/)")->required();
  app.add_option("--idle-exit", idle_exit, "Finish after this many seconds without packets (0: until interrupted)");
  CLI11_PARSE(app, argc, argv);
  try {
    return tools::run_receiver(listen, out, idle_exit);
  } catch (const std::exception& e) {
    std::cerr << "datasync-recv: " << e.what() << "\n";
    return 1;
  }
}
