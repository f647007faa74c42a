#pragma once

#include <atomic>
#include <csignal>

namespace spacedream::tools {

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> f{false};
  return f;
}

/// SIGINT / SIGTERM set the stop flag instead of killing the process.
inline void install_stop_handlers() {
  std::signal(SIGINT, [](int) { stop_flag() = true; });
  std::signal(SIGTERM, [](int) { stop_flag() = true; });
}

}  // namespace spacedream::tools
