#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/clock.hpp"

namespace spacedream {

/// "host:port" (IPv4). An empty host means any address.
inline sockaddr_in parse_endpoint(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("endpoint must be host:port: " + s);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::invalid_argument("bad port in " + s);
  a.sin_port = htons(static_cast<std::uint16_t>(port));
  auto host = s.substr(0, colon);
  if (host.empty() || host == "*") a.sin_addr.s_addr = htonl(INADDR_ANY);
  else if (host == "localhost") a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  else if (inet_pton(AF_INET, host.c_str(), &a.sin_addr) != 1) throw std::invalid_argument("bad address in " + s);
  return a;
}

class UdpSocket {
 public:
  UdpSocket() : fd_(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0)) {
    if (fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  }
  ~UdpSocket() {
    if (fd_ >= 0) ::close(fd_);
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  void bind(const std::string& endpoint) {
    auto a = parse_endpoint(endpoint);
    int on = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &on, sizeof on);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&a), sizeof a) != 0)
      throw std::runtime_error("bind " + endpoint + ": " + std::strerror(errno));
  }

  std::uint16_t local_port() const {
    sockaddr_in a{};
    socklen_t len = sizeof a;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&a), &len);
    return ntohs(a.sin_port);
  }

  void send_to(const std::string& endpoint, ByteView data) {
    auto a = parse_endpoint(endpoint);
    if (::sendto(fd_, data.data(), data.size(), 0, reinterpret_cast<sockaddr*>(&a), sizeof a) < 0)
      throw std::runtime_error(std::string("sendto: ") + std::strerror(errno));
  }

  /// One datagram, or nullopt after `timeout`.
  std::optional<Bytes> receive(Duration timeout) {
    pollfd p{fd_, POLLIN, 0};
    int ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(timeout).count());
    if (::poll(&p, 1, ms) <= 0) return std::nullopt;
    Bytes buf(65536);
    auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }

 private:
  int fd_;
};

}  // namespace spacedream
