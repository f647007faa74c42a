#include <gtest/gtest.h>

#include "spacedream/camsim/camera.hpp"

using namespace spacedream;
using namespace spacedream::cam;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sd_cam_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Reads width/height/components from the SOF0 segment.
struct SofInfo {
  int width = 0, height = 0, components = 0;
};
SofInfo read_sof(const Bytes& b) {
  for (std::size_t i = 2; i + 9 < b.size();) {
    if (b[i] != 0xFF) break;
    const int marker = b[i + 1];
    const std::size_t len = (b[i + 2] << 8) | b[i + 3];
    if (marker == 0xC0 || marker == 0xC1)
      return {(b[i + 7] << 8) | b[i + 8], (b[i + 5] << 8) | b[i + 6], b[i + 9]};
    i += 2 + len;
  }
  return {};
}

CameraConfig fast_config(const fs::path& root) {
  CameraConfig c;
  c.media_root = root;
  c.latency_scale = 0.01;  // 30–220 ms
  c.switch_time = std::chrono::milliseconds(10);
  return c;
}

// Advances until everything pending is written.
void settle(CameraServer& s, TimePoint& now) {
  for (int i = 0; i < 10000 && s.busy(now); ++i) {
    now += std::chrono::milliseconds(10);
    s.tick(now);
  }
  s.tick(now);
}

}  // namespace

TEST(Jpeg, EncodesValidBaselineWithComment) {
  CaptureParams p{64, 48};
  auto px = synthetic_frame(1, p, CameraId::Base, 0, 3);
  auto jpg = encode_jpeg(px, 64, 48, 3, "hello");
  EXPECT_TRUE(is_valid_jpeg(jpg));
  EXPECT_EQ(jpeg_comment(jpg), "hello");
  auto sof = read_sof(jpg);
  EXPECT_EQ(sof.width, 64);
  EXPECT_EQ(sof.height, 48);
  EXPECT_EQ(sof.components, 3);
  jpg.pop_back();
  EXPECT_FALSE(is_valid_jpeg(jpg));
  EXPECT_THROW(encode_jpeg(px, 65, 48, 3, ""), std::invalid_argument);
}

TEST(Camera, OnlyTheSelectedCameraCaptures) {
  TempDir d("excl");
  CameraServer s(fast_config(d.path));
  const auto now = TimePoint{};
  EXPECT_THROW(s.take_image(CameraId::Base, {}, now), CameraError);
  s.select(CameraId::Base, now);
  s.select(CameraId::Base, now);  // same camera again is a no-op
  try {
    s.take_image(CameraId::EndEffector, {}, now);
    FAIL();
  } catch (const CameraError& e) {
    EXPECT_EQ(e.code(), CameraErrc::CameraInactive);
  }
  try {
    s.select(CameraId::EndEffector, now);
    FAIL();
  } catch (const CameraError& e) {
    EXPECT_EQ(e.code(), CameraErrc::SwitchForbidden);
  }
  EXPECT_EQ(s.active(), CameraId::Base);
}

TEST(Camera, SwitchingWhenAllowed) {
  TempDir d("switch");
  auto cfg = fast_config(d.path);
  cfg.allow_switching = true;
  CameraServer s(cfg);
  s.select(CameraId::Base, {});
  s.select(CameraId::EndEffector, {});
  EXPECT_EQ(s.active(), CameraId::EndEffector);
  auto m = s.take_image(CameraId::EndEffector, {32, 32}, {});
  EXPECT_GE(m.captured, TimePoint{} + cfg.switch_time);
}

TEST(Camera, WeightedChoiceFavoursEndEffector) {
  std::mt19937_64 rng(2024);
  int ee = 0;
  for (int i = 0; i < 1000; ++i) ee += choose_camera(rng) == CameraId::EndEffector;
  EXPECT_GE(ee, 650);
  EXPECT_LE(ee, 750);
}

TEST(Camera, GrayCaptureMatchesFileOnDisk) {
  TempDir d("gray");
  hal::JointVector q{0.1, -0.2, 0.3, -0.4};
  CameraServer s(fast_config(d.path), [&] { return q; });
  TimePoint now{};
  s.select(CameraId::EndEffector, now);
  CaptureParams p;
  p.color = ColorSpace::Gray8;
  auto m = s.take_image(CameraId::EndEffector, p, now);
  EXPECT_FALSE(fs::exists(d.path / m.path));  // not before post-processing
  EXPECT_TRUE(s.list_media().empty());
  settle(s, now);
  auto bytes = read_file(d.path / m.path);
  EXPECT_EQ(bytes.size(), m.size);
  EXPECT_TRUE(is_valid_jpeg(bytes));
  auto sof = read_sof(bytes);
  EXPECT_EQ(sof.width, 640);
  EXPECT_EQ(sof.height, 480);
  EXPECT_EQ(sof.components, 1);
  auto comment = jpeg_comment(bytes);
  EXPECT_NE(comment.find("camera=end_effector"), std::string::npos);
  EXPECT_NE(comment.find("q=0.100000,-0.200000,0.300000,-0.400000"), std::string::npos);
  EXPECT_EQ(m.path, "end_effector/1.jpg");
}

TEST(Camera, SameSeedSameBytes) {
  auto capture = [](const std::string& name) {
    TempDir d(name);
    CameraServer s(fast_config(d.path));
    TimePoint now{};
    s.select(CameraId::Base, now);
    auto m = s.take_image(CameraId::Base, {160, 120}, now);
    settle(s, now);
    return std::make_pair(read_file(d.path / m.path), m.created);
  };
  EXPECT_EQ(capture("det_a"), capture("det_b"));
}

TEST(Camera, VideoHasDurationTimesFpsFrames) {
  TempDir d("video");
  CameraServer s(fast_config(d.path));
  TimePoint now{};
  s.select(CameraId::Base, now);
  CaptureParams p{80, 60};
  p.duration = 2.0;
  p.fps = 10;
  auto m = s.record_video(CameraId::Base, p, now);
  EXPECT_GE(to_seconds(m.created - now), 2.0);
  settle(s, now);
  auto v = parse_video(read_file(d.path / m.path));
  EXPECT_EQ(v.frames.size(), 20u);
  EXPECT_EQ(v.width, 80);
  for (const auto& f : v.frames) EXPECT_TRUE(is_valid_jpeg(f));
  p.duration = 0;
  EXPECT_THROW(s.record_video(CameraId::Base, p, now), CameraError);
}

TEST(Camera, ListOrderAndDelete) {
  TempDir d("list");
  CameraServer s(fast_config(d.path));
  TimePoint now{};
  s.select(CameraId::Base, now);
  std::vector<std::uint32_t> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(s.take_image(CameraId::Base, {32, 32}, now).id);
  settle(s, now);
  auto all = s.list_media();
  ASSERT_EQ(all.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(all[i].id, ids[i]);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_LT(all[i - 1].created, all[i].created);
  s.delete_media(ids[1]);
  EXPECT_FALSE(fs::exists(d.path / all[1].path));
  EXPECT_EQ(s.list_media().size(), 2u);
  try {
    s.delete_media(ids[1]);
    FAIL();
  } catch (const CameraError& e) {
    EXPECT_EQ(e.code(), CameraErrc::UnknownMedia);
  }
}

TEST(Camera, LatencyWithinBoundsAndStagesOrdered) {
  TempDir d("latency");
  CameraConfig cfg;
  cfg.media_root = d.path;
  CameraServer s(cfg);
  s.select(CameraId::Base, {});
  TimePoint now = TimePoint{} + std::chrono::seconds(5);
  for (int i = 0; i < 50; ++i) {
    auto m = s.take_image(CameraId::Base, {16, 16}, now);
    EXPECT_LE(m.captured, m.stored);
    EXPECT_LE(m.stored, m.downloaded);
    EXPECT_LE(m.downloaded, m.created);
    EXPECT_EQ(m.stage_at(m.created), Stage::PostProcessed);
    EXPECT_EQ(m.stage_at(m.stored), Stage::Stored);
    now = m.created;  // next request once this one is done: latency is the whole wait
    const double wait = to_seconds(m.created - m.requested);
    EXPECT_GE(wait, 3.0);
    EXPECT_LE(wait, 22.0);
  }
}

TEST(Camera, RequestsAreSerialized) {
  TempDir d("serial");
  CameraServer s(fast_config(d.path));
  s.select(CameraId::Base, {});
  auto a = s.take_image(CameraId::Base, {16, 16}, {});
  auto b = s.take_image(CameraId::Base, {16, 16}, {});
  EXPECT_GE(b.captured, a.created);
}

TEST(Camera, StorageFull) {
  TempDir d("storage");
  auto cfg = fast_config(d.path);
  cfg.storage_limit_bytes = 1;
  CameraServer s(cfg);
  s.select(CameraId::Base, {});
  try {
    s.take_image(CameraId::Base, {32, 32}, {});
    FAIL();
  } catch (const CameraError& e) {
    EXPECT_EQ(e.code(), CameraErrc::StorageFull);
  }
}

TEST(Camera, BusServicesRoundTrip) {
  TempDir d("bus");
  bus::Bus bus;
  ManualClock clock;
  CameraServer server(fast_config(d.path));
  CameraNode node(bus, server, clock);
  auto events = bus.subscribe(kEventsTopic);
  CameraClient client(bus);
  try {
    client.take_image(CameraId::Base, {});
    FAIL();
  } catch (const CameraError& e) {
    EXPECT_EQ(e.code(), CameraErrc::CameraInactive);
  }
  client.select(CameraId::EndEffector);
  auto m = client.take_image(CameraId::EndEffector, {64, 48});
  EXPECT_EQ(m.camera, CameraId::EndEffector);
  EXPECT_TRUE(client.list_media().empty());
  for (int i = 0; i < 100; ++i) {
    clock.advance(std::chrono::milliseconds(10));
    node.tick(clock.now());
  }
  auto all = client.list_media();
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0], m);
  EXPECT_EQ(events.drain().size(), 1u);
  client.delete_media(m.id);
  EXPECT_TRUE(client.list_media().empty());
}
