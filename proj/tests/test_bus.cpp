#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <random>
#include <thread>

#include "spacedream/bus/bus.hpp"
#include "spacedream/bus/loopback.hpp"

using namespace spacedream;
using namespace spacedream::bus;
using namespace std::chrono_literals;

namespace {

template <typename F>
BusErrc error_of(F&& f) {
  try {
    f();
  } catch (const BusError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected BusError";
  return BusErrc::Disconnected;
}

Bytes random_bytes(std::mt19937& rng, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> byte(0, 255);
  Bytes b(len(rng));
  for (auto& x : b) x = static_cast<std::uint8_t>(byte(rng));
  return b;
}

}  // namespace

TEST(Bus, PublishDeliversToAllSubscribersInOrder) {
  Bus bus;
  bus.register_topic({"joint_telemetry", "test/1", 100.0});
  auto a = bus.subscribe("joint_telemetry");
  auto b = bus.subscribe("joint_telemetry");
  Bytes record(64, 0x5a);
  bus.publish("joint_telemetry", record, at_seconds(0.1));
  record[0] = 1;
  bus.publish("joint_telemetry", record, at_seconds(0.2));
  for (auto* s : {&a, &b}) {
    auto m1 = s->try_pop();
    auto m2 = s->try_pop();
    ASSERT_TRUE(m1 && m2);
    EXPECT_EQ(m1->stamp, at_seconds(0.1));
    EXPECT_EQ(m1->payload.size(), 64u);
    EXPECT_EQ(m1->seq, 0u);
    EXPECT_EQ(m2->payload[0], 1);
    EXPECT_EQ(m2->seq, 1u);
    EXPECT_FALSE(s->try_pop());
  }
}

TEST(Bus, PublishWithoutSubscribersIsAccepted) {
  Bus bus;
  bus.register_topic({"t", "s", 0});
  EXPECT_NO_THROW(bus.publish("t", Bytes{1, 2}, TimePoint{}));
  EXPECT_EQ(bus.published_count("t"), 1u);
}

TEST(Bus, PublishUnknownTopic) {
  Bus bus;
  EXPECT_EQ(error_of([&] { bus.publish("nope", Bytes{}, TimePoint{}); }), BusErrc::UnknownTopic);
  EXPECT_EQ(error_of([&] { bus.subscribe("nope"); }), BusErrc::UnknownTopic);
}

TEST(Bus, TopicSpecValidation) {
  Bus bus;
  EXPECT_EQ(error_of([&] { bus.register_topic({"", "s", 1}); }), BusErrc::InvalidSpec);
  EXPECT_EQ(error_of([&] { bus.register_topic({"t", "s", -1}); }), BusErrc::InvalidSpec);
  bus.register_topic({"t", "s", 1});
  EXPECT_NO_THROW(bus.register_topic({"t", "s", 1}));
  EXPECT_EQ(error_of([&] { bus.register_topic({"t", "other", 1}); }), BusErrc::DuplicateName);
}

TEST(Bus, OverflowDropsOldest) {
  Bus bus;
  bus.register_topic({"t", "s", 0});
  auto sub = bus.subscribe("t");
  for (int i = 0; i < 20; ++i) bus.publish("t", Bytes{static_cast<std::uint8_t>(i)}, at_seconds(i));
  EXPECT_EQ(sub.overflow_count(), 4u);
  auto all = sub.drain();
  ASSERT_EQ(all.size(), kDefaultQueueDepth);
  EXPECT_EQ(all.front().payload[0], 4);
  EXPECT_EQ(all.back().payload[0], 19);
}

TEST(Bus, DroppedSubscriptionStopsReceiving) {
  Bus bus;
  bus.register_topic({"t", "s", 0});
  {
    auto sub = bus.subscribe("t");
  }
  EXPECT_NO_THROW(bus.publish("t", Bytes{1}, TimePoint{}));
}

TEST(Bus, PerTopicFifoUnderConcurrentPublishers) {
  Bus bus;
  constexpr int kTopics = 4;
  constexpr int kMessages = 2000;
  std::vector<Subscription> subs;
  for (int t = 0; t < kTopics; ++t) {
    bus.register_topic({"topic" + std::to_string(t), "s", 0});
    subs.push_back(bus.subscribe("topic" + std::to_string(t), kMessages));
  }
  std::vector<std::thread> publishers;
  for (int t = 0; t < kTopics; ++t) {
    publishers.emplace_back([&, t] {
      for (int i = 0; i < kMessages; ++i) bus.publish("topic" + std::to_string(t), Bytes{}, TimePoint{Duration{i}});
    });
  }
  for (auto& p : publishers) p.join();
  for (auto& s : subs) {
    auto all = s.drain();
    ASSERT_EQ(all.size(), static_cast<std::size_t>(kMessages));
    for (std::size_t i = 1; i < all.size(); ++i) {
      EXPECT_LE(all[i - 1].stamp, all[i].stamp);
      EXPECT_EQ(all[i - 1].seq + 1, all[i].seq);
    }
  }
}

TEST(Bus, ServiceEchoRoundTrip) {
  Bus bus;
  bus.register_service({"echo", "bytes", "bytes"});
  bus.attach_handler("echo", [](ByteView req) { return Bytes(req.begin(), req.end()); });
  std::mt19937 rng(7);
  for (int i = 0; i < 1000; ++i) {
    auto payload = random_bytes(rng, 512);
    EXPECT_EQ(bus.call_service("echo", payload, 1s), payload);
  }
}

TEST(Bus, ServiceRunsOffCallerThread) {
  Bus bus;
  bus.register_service({"whoami", "", ""});
  bus.attach_handler("whoami", [](ByteView) {
    auto id = std::hash<std::thread::id>{}(std::this_thread::get_id());
    return ByteWriter().u64(id).bytes();
  });
  auto reply = bus.call_service("whoami", Bytes{}, 1s);
  ByteReader r(reply);
  EXPECT_NE(r.u64(), std::hash<std::thread::id>{}(std::this_thread::get_id()));
}

TEST(Bus, ServiceErrors) {
  Bus bus;
  EXPECT_EQ(error_of([&] { bus.call_service("missing", Bytes{}, 1s); }), BusErrc::UnknownService);
  bus.register_service({"no_handler", "", ""});
  EXPECT_EQ(error_of([&] { bus.call_service("no_handler", Bytes{}, 1s); }), BusErrc::UnknownService);
  bus.register_service({"throws", "", ""});
  bus.attach_handler("throws", [](ByteView) -> Bytes { throw std::runtime_error("boom"); });
  EXPECT_EQ(error_of([&] { bus.call_service("throws", Bytes{}, 1s); }), BusErrc::HandlerFailed);
}

TEST(Bus, ServiceTimeout) {
  Bus bus;
  bus.register_service({"slow", "", ""});
  bus.attach_handler("slow", [](ByteView) {
    std::this_thread::sleep_for(2s);
    return Bytes{};
  });
  EXPECT_EQ(error_of([&] { bus.call_service("slow", Bytes{}, 1s); }), BusErrc::Timeout);
}

TEST(Bus, ParameterReadYourWrite) {
  Bus bus;
  bus.declare_parameter("controller/mode", std::string("position"));
  bus.declare_parameter("controller/q_des", std::vector<double>{0, 0, 0, 0});
  bus.set_parameter("controller/mode", std::string("impedance"));
  EXPECT_EQ(bus.get<std::string>("controller/mode"), "impedance");
  bus.set_parameter("controller/q_des", std::vector<double>{0.1, 0.2, 0.3, 0.4});
  EXPECT_EQ(bus.get<std::vector<double>>("controller/q_des")[2], 0.3);
  EXPECT_EQ(bus.parameter_version("controller/mode"), 1u);
}

TEST(Bus, ParameterErrors) {
  Bus bus;
  bus.declare_parameter("gain", 1.0);
  bus.declare_parameter("ro", std::int64_t{3}, false);
  EXPECT_EQ(error_of([&] { bus.set_parameter("gain", std::string("x")); }), BusErrc::TypeMismatch);
  EXPECT_EQ(error_of([&] { bus.set_parameter("ro", std::int64_t{4}); }), BusErrc::NotWritable);
  EXPECT_NO_THROW(bus.set_parameter("ro", std::int64_t{4}, true));
  EXPECT_EQ(error_of([&] { bus.get_parameter("nope"); }), BusErrc::UnknownParameter);
  EXPECT_EQ(error_of([&] { bus.set_parameter("nope", 1.0); }), BusErrc::UnknownParameter);
  EXPECT_EQ(error_of([&] { bus.get<bool>("gain"); }), BusErrc::TypeMismatch);
}

// --- loopback ----------------------------------------------------------------

TEST(Loopback, FrameLayoutIsLittleEndianLengthPrefixed) {
  Frame f{FrameKind::ServiceRequest, "ab", Bytes{9}};
  Bytes expected{6, 0, 0, 0, 1, 2, 0, 'a', 'b', 9};
  EXPECT_EQ(encode_frame(f), expected);
}

TEST(Loopback, FrameStreamDecodesAcrossArbitraryChunking) {
  std::mt19937 rng(11);
  std::vector<Frame> frames;
  Bytes stream;
  for (int i = 0; i < 200; ++i) {
    Frame f{static_cast<FrameKind>(rng() % 4), "topic/" + std::to_string(rng() % 1000), random_bytes(rng, 300)};
    auto enc = encode_frame(f);
    stream.insert(stream.end(), enc.begin(), enc.end());
    frames.push_back(std::move(f));
  }
  FrameDecoder dec;
  std::vector<Frame> out;
  std::size_t off = 0;
  while (off < stream.size()) {
    auto n = std::min<std::size_t>(1 + rng() % 97, stream.size() - off);
    dec.feed(ByteView(stream).subspan(off, n));
    off += n;
    while (auto f = dec.next()) out.push_back(*f);
  }
  EXPECT_EQ(out, frames);
}

TEST(Loopback, DecoderRejectsGarbageLength) {
  FrameDecoder dec;
  Bytes junk{0xff, 0xff, 0xff, 0xff, 0};
  dec.feed(junk);
  EXPECT_THROW(dec.next(), DecodeError);
}

TEST(Loopback, ParamValueCodecRoundTrip) {
  std::vector<ParamValue> values{true, std::int64_t{-5}, 2.5, std::vector<double>{1, 2, 3}, std::string("impedance")};
  for (const auto& v : values) {
    ByteWriter w;
    encode_value(w, v);
    ByteReader r(w.bytes());
    EXPECT_EQ(decode_value(r), v);
  }
}

TEST(Loopback, RemotePublishSubscribeServiceAndParameters) {
  Bus bus;
  bus.register_topic({"hal/telemetry", "t", 100});
  bus.register_topic({"hal/command", "c", 100});
  bus.register_service({"echo", "", ""});
  bus.attach_handler("echo", [](ByteView req) { return Bytes(req.begin(), req.end()); });
  bus.declare_parameter("controller/mode", std::string("position"));
  BusServer server(bus);
  BusClient client(server.port());

  auto local = bus.subscribe("hal/command");
  client.publish("hal/command", Bytes{1, 2, 3}, at_seconds(1.5));
  auto got = local.pop(2s);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->payload, (Bytes{1, 2, 3}));
  EXPECT_EQ(got->stamp, at_seconds(1.5));

  auto remote = client.subscribe("hal/telemetry");
  for (int i = 0; i < 5; ++i) bus.publish("hal/telemetry", Bytes{static_cast<std::uint8_t>(i)}, at_seconds(i));
  for (int i = 0; i < 5; ++i) {
    auto m = remote.pop(2s);
    ASSERT_TRUE(m);
    EXPECT_EQ(m->payload[0], i);
    EXPECT_EQ(m->seq, static_cast<std::uint64_t>(i));
  }

  EXPECT_EQ(client.call_service("echo", Bytes{7, 7}, 1s), (Bytes{7, 7}));
  EXPECT_EQ(error_of([&] { client.call_service("missing", Bytes{}, 1s); }), BusErrc::UnknownService);

  client.set_parameter("controller/mode", std::string("impedance"));
  EXPECT_EQ(bus.get<std::string>("controller/mode"), "impedance");
  EXPECT_EQ(std::get<std::string>(client.get_parameter("controller/mode")), "impedance");
  EXPECT_EQ(error_of([&] { client.set_parameter("controller/mode", 1.0); }), BusErrc::TypeMismatch);
  EXPECT_EQ(error_of([&] { client.get_parameter("nope"); }), BusErrc::UnknownParameter);
}

TEST(Loopback, ParameterWriteFromAnotherProcess) {
  Bus bus;
  bus.declare_parameter("controller/q_des", std::vector<double>{0, 0, 0, 0});
  BusServer server(bus);
  auto port = server.port();
  pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    int rc = 1;
    try {
      BusClient client(port);
      client.set_parameter("controller/q_des", std::vector<double>{0.5, 0.1, 0, 0});
      auto back = std::get<std::vector<double>>(client.get_parameter("controller/q_des"));
      rc = back[0] == 0.5 ? 0 : 2;
    } catch (...) {
      rc = 3;
    }
    ::_exit(rc);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_EQ(bus.get<std::vector<double>>("controller/q_des")[0], 0.5);
}
