#pragma once

// Bridges a Bus onto a loopback TCP socket so that other processes can publish,
// subscribe, call services and read/write parameters.
//
// Frame: u32 LE length of the remainder | u8 kind | u16 LE name length | name | payload
//
//   kind 0 topic message   payload = i64 stamp_ns | u64 seq | data
//   kind 1 service request payload = u32 call_id | u32 timeout_ms | request
//   kind 2 service reply   payload = u32 call_id | u8 status | data-or-error-text
//   kind 3 parameter op    request = u32 call_id | u8 op (0 get, 1 set) | [value]
//                          reply   = u32 call_id | u8 status | value-or-error-text
//
// status 0 is success, otherwise 1 + BusErrc. A client subscribes by calling the
// reserved service "bus/subscribe" with the topic name as request.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/common/bytes.hpp"

namespace spacedream::bus {

enum class FrameKind : std::uint8_t { TopicMessage = 0, ServiceRequest = 1, ServiceReply = 2, ParamOp = 3 };

struct Frame {
  FrameKind kind = FrameKind::TopicMessage;
  std::string name;
  Bytes payload;

  bool operator==(const Frame&) const = default;
};

inline constexpr std::uint32_t kMaxFrameLength = 64u << 20;
inline constexpr const char* kSubscribeService = "bus/subscribe";

inline Bytes encode_frame(const Frame& f) {
  ByteWriter w;
  const auto body = 1 + 2 + f.name.size() + f.payload.size();
  w.u32(static_cast<std::uint32_t>(body)).u8(static_cast<std::uint8_t>(f.kind)).str16(f.name).raw(f.payload);
  return std::move(w).take();
}

/// Incremental decoder for a byte stream of frames.
class FrameDecoder {
 public:
  void feed(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

  /// Next complete frame, or nullopt if more bytes are needed. Throws DecodeError on garbage.
  std::optional<Frame> next() {
    if (buf_.size() < 4) return std::nullopt;
    ByteReader hdr(buf_);
    auto len = hdr.u32();
    if (len < 3 || len > kMaxFrameLength) throw DecodeError("bad frame length");
    if (buf_.size() < 4 + std::size_t{len}) return std::nullopt;
    ByteReader r(ByteView(buf_).subspan(4, len));
    Frame f;
    auto kind = r.u8();
    if (kind > 3) throw DecodeError("bad frame kind");
    f.kind = static_cast<FrameKind>(kind);
    f.name = r.str16();
    auto rest = r.rest();
    f.payload.assign(rest.begin(), rest.end());
    buf_.erase(buf_.begin(), buf_.begin() + 4 + len);
    return f;
  }

 private:
  Bytes buf_;
};

inline void encode_value(ByteWriter& w, const ParamValue& v) {
  w.u8(static_cast<std::uint8_t>(v.index()));
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          w.u8(x ? 1 : 0);
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          w.i64(x);
        } else if constexpr (std::is_same_v<T, double>) {
          w.f64(x);
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
          w.u32(static_cast<std::uint32_t>(x.size()));
          for (double d : x) w.f64(d);
        } else {
          w.blob32(as_bytes(x));
        }
      },
      v);
}

inline ParamValue decode_value(ByteReader& r) {
  switch (r.u8()) {
    case 0: return r.u8() != 0;
    case 1: return r.i64();
    case 2: return r.f64();
    case 3: {
      auto n = r.u32();
      if (n > r.remaining() / 8) throw DecodeError("float array truncated");
      std::vector<double> v(n);
      for (auto& d : v) d = r.f64();
      return v;
    }
    case 4: return as_string(r.blob32());
    default: throw DecodeError("bad value tag");
  }
}

namespace detail {

inline void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

inline bool write_all(int fd, ByteView data) {
  std::size_t off = 0;
  while (off < data.size()) {
    auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

inline std::uint8_t status_of(BusErrc e) { return static_cast<std::uint8_t>(1 + static_cast<int>(e)); }

}  // namespace detail

/// Accepts loopback connections and serves them from a Bus.
class BusServer {
 public:
  /// `port` 0 picks an ephemeral port; see port().
  BusServer(Bus& bus, std::uint16_t port = 0) : bus_(bus) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
      auto err = std::string(std::strerror(errno));
      detail::close_fd(listen_fd_);
      throw std::runtime_error("bind/listen on port " + std::to_string(port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  ~BusServer() {
    stopping_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    acceptor_.join();
    detail::close_fd(listen_fd_);
    std::lock_guard lock(conn_mutex_);
    for (auto& c : connections_) c->stop();
    connections_.clear();
  }

  BusServer(const BusServer&) = delete;
  BusServer& operator=(const BusServer&) = delete;

  std::uint16_t port() const { return port_; }

 private:
  class Connection {
   public:
    Connection(Bus& bus, int fd) : bus_(bus), fd_(fd), wake_(std::make_shared<Wake>()) {
      reader_ = std::thread([this] { read_loop(); });
      forwarder_ = std::thread([this] { forward_loop(); });
    }
    ~Connection() { stop(); }

    void stop() {
      {
        std::lock_guard lock(wake_->mutex);
        if (wake_->stopped) return;
        wake_->stopped = true;
      }
      wake_->cv.notify_all();
      ::shutdown(fd_, SHUT_RDWR);
      if (reader_.joinable()) reader_.join();
      if (forwarder_.joinable()) forwarder_.join();
      detail::close_fd(fd_);
    }

   private:
    // Shared with subscription hooks, which may fire from a publisher's thread
    // while the connection is being torn down.
    struct Wake {
      std::mutex mutex;
      std::condition_variable cv;
      bool stopped = false;
      bool peer_closed = false;
      bool pending = false;
    };

    void send(const Frame& f) {
      std::lock_guard lock(write_mutex_);
      detail::write_all(fd_, encode_frame(f));
    }

    void read_loop() {
      FrameDecoder dec;
      std::uint8_t buf[65536];
      for (;;) {
        auto n = ::recv(fd_, buf, sizeof buf, 0);
        if (n <= 0) {
          if (n < 0 && errno == EINTR) continue;
          break;
        }
        dec.feed(ByteView(buf, static_cast<std::size_t>(n)));
        try {
          while (auto f = dec.next()) handle(*f);
        } catch (const DecodeError&) {
          break;
        }
      }
      std::lock_guard lock(wake_->mutex);
      wake_->peer_closed = true;
      wake_->cv.notify_all();
    }

    void handle(const Frame& f) {
      ByteReader r(f.payload);
      switch (f.kind) {
        case FrameKind::TopicMessage: {
          auto stamp = TimePoint{Duration{r.i64()}};
          r.u64();
          try {
            bus_.publish(f.name, r.rest(), stamp);
          } catch (const BusError&) {
            // Remote publishes to unknown topics are dropped.
          }
          break;
        }
        case FrameKind::ServiceRequest: {
          auto call_id = r.u32();
          auto timeout = std::chrono::milliseconds(r.u32());
          auto request = r.rest();
          ByteWriter w;
          w.u32(call_id);
          try {
            if (f.name == kSubscribeService) {
              subscribe(as_string(request));
              w.u8(0);
            } else {
              auto resp = bus_.call_service(f.name, request, timeout);
              w.u8(0).raw(resp);
            }
          } catch (const BusError& e) {
            w.u8(detail::status_of(e.code())).raw(std::string_view(e.what()));
          }
          send({FrameKind::ServiceReply, f.name, std::move(w).take()});
          break;
        }
        case FrameKind::ParamOp: {
          auto call_id = r.u32();
          auto op = r.u8();
          ByteWriter w;
          w.u32(call_id);
          try {
            if (op == 1) {
              bus_.set_parameter(f.name, decode_value(r));
              w.u8(0);
            } else {
              auto v = bus_.get_parameter(f.name);
              w.u8(0);
              encode_value(w, v);
            }
          } catch (const BusError& e) {
            w.u8(detail::status_of(e.code())).raw(std::string_view(e.what()));
          } catch (const DecodeError& e) {
            w.u8(detail::status_of(BusErrc::TypeMismatch)).raw(std::string_view(e.what()));
          }
          send({FrameKind::ParamOp, f.name, std::move(w).take()});
          break;
        }
        case FrameKind::ServiceReply:
          break;
      }
    }

    void subscribe(const std::string& topic) {
      auto sub = bus_.subscribe(topic);
      sub.queue().set_on_push([wake = wake_] {
        std::lock_guard lock(wake->mutex);
        wake->pending = true;
        wake->cv.notify_all();
      });
      std::lock_guard lock(subs_mutex_);
      subs_.emplace_back(topic, std::move(sub));
    }

    void forward_loop() {
      for (;;) {
        {
          std::unique_lock lock(wake_->mutex);
          wake_->cv.wait(lock, [&] { return wake_->stopped || wake_->peer_closed || wake_->pending; });
          if (wake_->stopped || wake_->peer_closed) return;
          wake_->pending = false;
        }
        std::vector<std::pair<std::string, Message>> batch;
        {
          std::lock_guard lock(subs_mutex_);
          for (auto& [name, sub] : subs_)
            for (auto& m : sub.drain()) batch.emplace_back(name, std::move(m));
        }
        for (auto& [name, m] : batch) {
          ByteWriter w;
          w.i64(m.stamp.time_since_epoch().count()).u64(m.seq).raw(m.payload);
          send({FrameKind::TopicMessage, name, std::move(w).take()});
        }
      }
    }

    Bus& bus_;
    int fd_;
    std::shared_ptr<Wake> wake_;
    std::mutex write_mutex_;
    std::mutex subs_mutex_;
    std::list<std::pair<std::string, Subscription>> subs_;
    std::thread reader_;
    std::thread forwarder_;
  };

  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(conn_mutex_);
      connections_.push_back(std::make_unique<Connection>(bus_, fd));
    }
  }

  Bus& bus_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex conn_mutex_;
  std::vector<std::unique_ptr<Connection>> connections_;
  std::thread acceptor_;
};

/// Remote handle onto a BusServer. Thread-safe.
class BusClient {
 public:
  BusClient(std::uint16_t port, const std::string& host = "127.0.0.1") {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw BusError(BusErrc::Disconnected, "socket: " + std::string(std::strerror(errno)));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      auto err = std::string(std::strerror(errno));
      detail::close_fd(fd_);
      throw BusError(BusErrc::Disconnected, "connect to port " + std::to_string(port) + ": " + err);
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    reader_ = std::thread([this] { read_loop(); });
  }

  ~BusClient() {
    ::shutdown(fd_, SHUT_RDWR);
    reader_.join();
    detail::close_fd(fd_);
  }

  BusClient(const BusClient&) = delete;
  BusClient& operator=(const BusClient&) = delete;

  void publish(const std::string& topic, ByteView payload, TimePoint stamp) {
    ByteWriter w;
    w.i64(stamp.time_since_epoch().count()).u64(0).raw(payload);
    send({FrameKind::TopicMessage, topic, std::move(w).take()});
  }

  Bytes call_service(const std::string& service, ByteView request, Duration timeout) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(timeout).count();
    return roundtrip(FrameKind::ServiceRequest, service, timeout + std::chrono::seconds(1), [&](ByteWriter& w) {
      w.u32(static_cast<std::uint32_t>(std::max<std::int64_t>(ms, 0))).raw(request);
    });
  }

  Subscription subscribe(const std::string& topic, std::size_t depth = kDefaultQueueDepth) {
    auto q = std::make_shared<SubscriberQueue>(depth);
    {
      std::lock_guard lock(mutex_);
      subs_[topic].push_back(q);
    }
    try {
      call_service(kSubscribeService, as_bytes(topic), std::chrono::seconds(5));
    } catch (...) {
      std::lock_guard lock(mutex_);
      std::erase(subs_[topic], q);
      throw;
    }
    return Subscription(q);
  }

  void set_parameter(const std::string& name, const ParamValue& value) {
    roundtrip(FrameKind::ParamOp, name, std::chrono::seconds(5), [&](ByteWriter& w) {
      w.u8(1);
      encode_value(w, value);
    });
  }

  ParamValue get_parameter(const std::string& name) {
    auto bytes = roundtrip(FrameKind::ParamOp, name, std::chrono::seconds(5), [](ByteWriter& w) { w.u8(0); });
    ByteReader r(bytes);
    return decode_value(r);
  }

 private:
  struct Pending {
    bool done = false;
    std::uint8_t status = 0;
    Bytes data;
  };

  template <typename Fill>
  Bytes roundtrip(FrameKind kind, const std::string& name, Duration wait, Fill&& fill) {
    std::uint32_t id;
    auto pending = std::make_shared<Pending>();
    {
      std::lock_guard lock(mutex_);
      if (closed_) throw BusError(BusErrc::Disconnected, "connection closed");
      id = next_call_++;
      pending_[id] = pending;
    }
    ByteWriter w;
    w.u32(id);
    fill(w);
    send({kind, name, std::move(w).take()});
    std::unique_lock lock(mutex_);
    bool ok = cv_.wait_for(lock, wait, [&] { return pending->done || closed_; });
    pending_.erase(id);
    if (!ok) throw BusError(BusErrc::Timeout, name + " timed out");
    if (!pending->done) throw BusError(BusErrc::Disconnected, "connection closed");
    if (pending->status != 0) {
      auto code = static_cast<BusErrc>(pending->status - 1);
      throw BusError(code, as_string(pending->data));
    }
    return std::move(pending->data);
  }

  void send(const Frame& f) {
    std::lock_guard lock(write_mutex_);
    if (!detail::write_all(fd_, encode_frame(f))) throw BusError(BusErrc::Disconnected, "write failed");
  }

  void read_loop() {
    FrameDecoder dec;
    std::uint8_t buf[65536];
    for (;;) {
      auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) {
        if (n < 0 && errno == EINTR) continue;
        break;
      }
      dec.feed(ByteView(buf, static_cast<std::size_t>(n)));
      try {
        while (auto f = dec.next()) dispatch(*f);
      } catch (const DecodeError&) {
        break;
      }
    }
    std::lock_guard lock(mutex_);
    closed_ = true;
    cv_.notify_all();
  }

  void dispatch(const Frame& f) {
    ByteReader r(f.payload);
    if (f.kind == FrameKind::TopicMessage) {
      Message m;
      m.stamp = TimePoint{Duration{r.i64()}};
      m.seq = r.u64();
      auto rest = r.rest();
      m.payload.assign(rest.begin(), rest.end());
      std::vector<std::shared_ptr<SubscriberQueue>> targets;
      {
        std::lock_guard lock(mutex_);
        for (auto& q : subs_[f.name]) targets.push_back(q);
      }
      for (auto& q : targets) q->push(m);
      return;
    }
    auto id = r.u32();
    auto status = r.u8();
    auto rest = r.rest();
    std::lock_guard lock(mutex_);
    if (auto it = pending_.find(id); it != pending_.end()) {
      it->second->status = status;
      it->second->data.assign(rest.begin(), rest.end());
      it->second->done = true;
      cv_.notify_all();
    }
  }

  int fd_ = -1;
  std::mutex mutex_;
  std::mutex write_mutex_;
  std::condition_variable cv_;
  std::map<std::uint32_t, std::shared_ptr<Pending>> pending_;
  std::map<std::string, std::vector<std::shared_ptr<SubscriberQueue>>> subs_;
  std::uint32_t next_call_ = 1;
  bool closed_ = false;
  std::thread reader_;
};

}  // namespace spacedream::bus
