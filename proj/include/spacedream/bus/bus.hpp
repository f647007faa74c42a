#pragma once

// In-process message bus: cyclic topics, request/response services and
// externally settable parameters. Cross-process access goes through
// `loopback.hpp`, which bridges a Bus onto a local stream socket.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "spacedream/common/bytes.hpp"
#include "spacedream/common/clock.hpp"
#include "spacedream/common/error.hpp"

namespace spacedream::bus {

enum class BusErrc {
  UnknownTopic,
  DuplicateName,
  InvalidSpec,
  UnknownService,
  Timeout,
  HandlerFailed,
  UnknownParameter,
  NotWritable,
  TypeMismatch,
  Disconnected,
};
using BusError = Error<BusErrc>;

inline const char* to_string(BusErrc e) {
  switch (e) {
    case BusErrc::UnknownTopic: return "UnknownTopic";
    case BusErrc::DuplicateName: return "DuplicateName";
    case BusErrc::InvalidSpec: return "InvalidSpec";
    case BusErrc::UnknownService: return "UnknownService";
    case BusErrc::Timeout: return "Timeout";
    case BusErrc::HandlerFailed: return "HandlerFailed";
    case BusErrc::UnknownParameter: return "UnknownParameter";
    case BusErrc::NotWritable: return "NotWritable";
    case BusErrc::TypeMismatch: return "TypeMismatch";
    case BusErrc::Disconnected: return "Disconnected";
  }
  return "?";
}

struct TopicSpec {
  std::string name;
  std::string schema_id;
  double nominal_rate = 0.0;  // messages per second, 0 = acyclic
};

struct ServiceSpec {
  std::string name;
  std::string request_schema_id;
  std::string response_schema_id;
};

using ParamValue = std::variant<bool, std::int64_t, double, std::vector<double>, std::string>;

inline const char* type_name(const ParamValue& v) {
  constexpr const char* names[] = {"bool", "int", "float", "float-array", "string"};
  return names[v.index()];
}

struct Message {
  TimePoint stamp;
  std::uint64_t seq = 0;  // per-topic publish counter, starts at 0
  Bytes payload;
};

inline constexpr std::size_t kDefaultQueueDepth = 16;

/// Bounded per-subscriber FIFO. Overflow drops the oldest message.
class SubscriberQueue {
 public:
  explicit SubscriberQueue(std::size_t depth) : depth_(depth ? depth : 1) {}

  void push(const Message& m) {
    std::function<void()> hook;
    {
      std::lock_guard lock(mutex_);
      if (queue_.size() >= depth_) {
        queue_.pop_front();
        ++overflows_;
      }
      queue_.push_back(m);
      hook = on_push_;
    }
    cv_.notify_all();
    if (hook) hook();
  }

  std::optional<Message> try_pop() {
    std::lock_guard lock(mutex_);
    if (queue_.empty()) return std::nullopt;
    auto m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  std::optional<Message> pop(Duration timeout) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_for(lock, timeout, [&] { return !queue_.empty(); })) return std::nullopt;
    auto m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  std::vector<Message> drain() {
    std::lock_guard lock(mutex_);
    std::vector<Message> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
  }
  std::uint64_t overflow_count() const {
    std::lock_guard lock(mutex_);
    return overflows_;
  }
  void set_on_push(std::function<void()> hook) {
    std::lock_guard lock(mutex_);
    on_push_ = std::move(hook);
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Message> queue_;
  std::size_t depth_;
  std::uint64_t overflows_ = 0;
  std::function<void()> on_push_;
};

/// Owning handle; dropping it unsubscribes.
class Subscription {
 public:
  Subscription() = default;
  explicit Subscription(std::shared_ptr<SubscriberQueue> q) : queue_(std::move(q)) {}

  explicit operator bool() const { return static_cast<bool>(queue_); }
  SubscriberQueue& queue() { return *queue_; }
  std::optional<Message> try_pop() { return queue_->try_pop(); }
  std::optional<Message> pop(Duration timeout) { return queue_->pop(timeout); }
  std::vector<Message> drain() { return queue_->drain(); }
  /// Most recent queued message, discarding older ones.
  std::optional<Message> latest() {
    auto all = queue_->drain();
    if (all.empty()) return std::nullopt;
    return std::move(all.back());
  }
  std::uint64_t overflow_count() const { return queue_->overflow_count(); }

 private:
  std::shared_ptr<SubscriberQueue> queue_;
};

/// Serial task runner. Service handlers execute here, never on the caller's thread.
class Executor {
 public:
  Executor() : worker_([this] { run(); }) {}
  ~Executor() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  void post(std::function<void()> task) {
    {
      std::lock_guard lock(mutex_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  bool stopping_ = false;
  std::thread worker_;
};

using ServiceHandler = std::function<Bytes(ByteView request)>;

class Bus {
 public:
  Bus() : executor_(std::make_unique<Executor>()) {}
  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  // --- topics ---------------------------------------------------------------

  void register_topic(const TopicSpec& spec) {
    if (spec.name.empty() || spec.nominal_rate < 0.0)
      throw BusError(BusErrc::InvalidSpec, "invalid topic spec '" + spec.name + "'");
    std::lock_guard lock(mutex_);
    if (topics_.contains(spec.name)) {
      if (topics_[spec.name].spec.schema_id == spec.schema_id) return;
      throw BusError(BusErrc::DuplicateName, "topic '" + spec.name + "' already registered with another schema");
    }
    topics_[spec.name].spec = spec;
  }

  bool has_topic(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return topics_.contains(name);
  }

  std::vector<TopicSpec> topics() const {
    std::lock_guard lock(mutex_);
    std::vector<TopicSpec> out;
    for (const auto& [_, t] : topics_) out.push_back(t.spec);
    return out;
  }

  Subscription subscribe(const std::string& topic, std::size_t depth = kDefaultQueueDepth) {
    auto q = std::make_shared<SubscriberQueue>(depth);
    std::lock_guard lock(mutex_);
    auto it = topics_.find(topic);
    if (it == topics_.end()) throw BusError(BusErrc::UnknownTopic, "unknown topic '" + topic + "'");
    it->second.subscribers.push_back(q);
    return Subscription(std::move(q));
  }

  /// Returns the sequence number assigned to the message.
  std::uint64_t publish(const std::string& topic, ByteView payload, TimePoint stamp) {
    std::vector<std::shared_ptr<SubscriberQueue>> live;
    Message msg;
    {
      std::lock_guard lock(mutex_);
      auto it = topics_.find(topic);
      if (it == topics_.end()) throw BusError(BusErrc::UnknownTopic, "unknown topic '" + topic + "'");
      auto& t = it->second;
      msg = Message{stamp, t.next_seq++, Bytes(payload.begin(), payload.end())};
      std::erase_if(t.subscribers, [](const auto& w) { return w.expired(); });
      for (auto& w : t.subscribers)
        if (auto q = w.lock()) live.push_back(std::move(q));
      // Delivery happens under the topic lock so concurrent publishers cannot
      // interleave out of order for any subscriber.
      for (auto& q : live) q->push(msg);
    }
    return msg.seq;
  }

  std::uint64_t published_count(const std::string& topic) const {
    std::lock_guard lock(mutex_);
    auto it = topics_.find(topic);
    if (it == topics_.end()) throw BusError(BusErrc::UnknownTopic, "unknown topic '" + topic + "'");
    return it->second.next_seq;
  }

  // --- services -------------------------------------------------------------

  void register_service(const ServiceSpec& spec) {
    if (spec.name.empty()) throw BusError(BusErrc::InvalidSpec, "empty service name");
    std::lock_guard lock(mutex_);
    if (auto it = services_.find(spec.name); it != services_.end()) {
      const auto& have = it->second.spec;
      if (have.request_schema_id == spec.request_schema_id && have.response_schema_id == spec.response_schema_id) return;
      throw BusError(BusErrc::DuplicateName, "service '" + spec.name + "' already registered with another schema");
    }
    services_[spec.name].spec = spec;
  }

  void attach_handler(const std::string& service, ServiceHandler handler) {
    std::lock_guard lock(mutex_);
    auto it = services_.find(service);
    if (it == services_.end()) throw BusError(BusErrc::UnknownService, "unknown service '" + service + "'");
    it->second.handler = std::make_shared<ServiceHandler>(std::move(handler));
  }

  void detach_handler(const std::string& service) {
    std::lock_guard lock(mutex_);
    if (auto it = services_.find(service); it != services_.end()) it->second.handler.reset();
  }

  bool has_service(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = services_.find(name);
    return it != services_.end() && it->second.handler;
  }

  /// Runs the handler on the bus executor. Handlers must not call services on
  /// the same bus (the executor is serial).
  Bytes call_service(const std::string& service, ByteView request, Duration timeout) {
    std::shared_ptr<ServiceHandler> handler;
    {
      std::lock_guard lock(mutex_);
      auto it = services_.find(service);
      if (it == services_.end() || !it->second.handler)
        throw BusError(BusErrc::UnknownService, "no handler for service '" + service + "'");
      handler = it->second.handler;
    }
    auto promise = std::make_shared<std::promise<Bytes>>();
    auto future = promise->get_future();
    executor_->post([handler, promise, req = Bytes(request.begin(), request.end())] {
      try {
        promise->set_value((*handler)(req));
      } catch (...) {
        promise->set_exception(std::current_exception());
      }
    });
    if (future.wait_for(timeout) != std::future_status::ready)
      throw BusError(BusErrc::Timeout, "service '" + service + "' timed out");
    try {
      return future.get();
    } catch (const BusError&) {
      throw;
    } catch (const std::exception& e) {
      throw BusError(BusErrc::HandlerFailed, service + ": " + e.what());
    }
  }

  // --- parameters -----------------------------------------------------------

  void declare_parameter(const std::string& name, ParamValue initial, bool writable = true) {
    std::lock_guard lock(mutex_);
    if (params_.contains(name)) throw BusError(BusErrc::DuplicateName, "parameter '" + name + "' already declared");
    params_[name] = Param{std::move(initial), writable, 0};
  }

  /// External write. The owner passes `as_owner` to update read-only values.
  void set_parameter(const std::string& name, const ParamValue& value, bool as_owner = false) {
    std::lock_guard lock(mutex_);
    auto it = params_.find(name);
    if (it == params_.end()) throw BusError(BusErrc::UnknownParameter, "unknown parameter '" + name + "'");
    auto& p = it->second;
    if (!p.writable && !as_owner) throw BusError(BusErrc::NotWritable, "parameter '" + name + "' is read-only");
    if (p.value.index() != value.index())
      throw BusError(BusErrc::TypeMismatch, "parameter '" + name + "' expects " + type_name(p.value) + ", got " +
                                                type_name(value));
    p.value = value;
    ++p.version;
  }

  ParamValue get_parameter(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = params_.find(name);
    if (it == params_.end()) throw BusError(BusErrc::UnknownParameter, "unknown parameter '" + name + "'");
    return it->second.value;
  }

  template <typename T>
  T get(const std::string& name) const {
    auto v = get_parameter(name);
    if (auto* p = std::get_if<T>(&v)) return *p;
    throw BusError(BusErrc::TypeMismatch, "parameter '" + name + "' has type " + type_name(v));
  }

  /// Incremented on every successful write; lets owners detect changes cheaply.
  std::uint64_t parameter_version(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = params_.find(name);
    if (it == params_.end()) throw BusError(BusErrc::UnknownParameter, "unknown parameter '" + name + "'");
    return it->second.version;
  }

  std::vector<std::string> parameter_names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
  }

 private:
  struct Topic {
    TopicSpec spec;
    std::vector<std::weak_ptr<SubscriberQueue>> subscribers;
    std::uint64_t next_seq = 0;
  };
  struct Service {
    ServiceSpec spec;
    std::shared_ptr<ServiceHandler> handler;
  };
  struct Param {
    ParamValue value;
    bool writable = true;
    std::uint64_t version = 0;
  };

  mutable std::mutex mutex_;
  std::map<std::string, Topic> topics_;
  std::map<std::string, Service> services_;
  std::map<std::string, Param> params_;
  // Declared last: destroyed first, so running handlers finish before the tables go away.
  std::unique_ptr<Executor> executor_;
};

}  // namespace spacedream::bus
