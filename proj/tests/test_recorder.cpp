#include <gtest/gtest.h>

#include <random>

#include "spacedream/recorder/recorder.hpp"

using namespace spacedream;
using namespace spacedream::rec;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sd_rec_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Publishes `topic` at 100 Hz with the recorder ticking after each publication.
void drive(bus::Bus& bus, Recorder& r, const std::string& topic, double seconds, std::size_t payload = 64,
           TimePoint start = {}) {
  const int n = static_cast<int>(std::lround(seconds * 100));
  for (int i = 1; i <= n; ++i) {
    auto now = start + i * std::chrono::milliseconds(10);
    bus.publish(topic, Bytes(payload, static_cast<std::uint8_t>(i)), now);
    r.tick(now);
  }
}

}  // namespace

TEST(LogFile, RoundTripAndFooter) {
  TempDir d("roundtrip");
  LogWriter w(d.path / "t_0000.sdlg", {7, "hal/telemetry", TimePoint{}});
  std::vector<LogRecord> recs;
  for (int i = 0; i < 50; ++i) {
    recs.push_back({static_cast<std::uint64_t>(i), at_seconds(i * 0.01), "hal/telemetry", Bytes(10 + i, 0x5A)});
    w.append(recs.back());
  }
  EXPECT_TRUE(fs::exists(d.path / "t_0000.sdlg.partial"));
  auto path = w.close();
  EXPECT_FALSE(fs::exists(d.path / "t_0000.sdlg.partial"));
  auto c = read_log(path);
  EXPECT_EQ(c.header.boot_generation, 7u);
  EXPECT_EQ(c.header.topic, "hal/telemetry");
  EXPECT_EQ(c.records, recs);
  EXPECT_TRUE(c.footer_valid);
  // the footer checksum covers everything before it
  auto bytes = read_file(path);
  ByteReader r(ByteView(bytes).last(kFooterSize));
  r.raw(4);
  EXPECT_EQ(r.u32(), 50u);
  EXPECT_EQ(r.u32(), crc32(ByteView(bytes).first(bytes.size() - kFooterSize)));
}

TEST(LogFile, TruncatedTailLosesAtMostTheLastRecord) {
  TempDir d("trunc");
  LogWriter w(d.path / "x.sdlg", {1, "a", TimePoint{}});
  for (int i = 0; i < 20; ++i) w.append({static_cast<std::uint64_t>(i), TimePoint{}, "a", Bytes(100, 1)});
  auto bytes = read_file(w.close());
  std::mt19937 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t cut = 40 + rng() % (bytes.size() - 40);
    auto c = parse_log(ByteView(bytes).first(cut));
    std::size_t complete = 0;  // records fully inside the cut
    for (std::size_t k = 0; k < 20; ++k)
      if (encode_header({1, "a", TimePoint{}}).size() + (k + 1) * encode_record({0, {}, "a", Bytes(100, 1)}).size() <= cut)
        ++complete;
    EXPECT_EQ(c.records.size(), complete);
    EXPECT_FALSE(c.footer_valid);
  }
}

TEST(LogFile, ZeroFilledHoleSkipsOnlyDamagedRecords) {
  TempDir d("hole");
  LogWriter w(d.path / "x.sdlg", {1, "a", TimePoint{}});
  for (int i = 0; i < 40; ++i) w.append({static_cast<std::uint64_t>(i), TimePoint{}, "a", Bytes(90, 2)});
  auto bytes = read_file(w.close());
  std::fill(bytes.begin() + 1024, bytes.begin() + 2048, 0);
  auto c = parse_log(bytes);
  const std::size_t rec = encode_record({0, {}, "a", Bytes(90, 2)}).size();
  EXPECT_GE(c.records.size(), 40 - (1024 / rec + 2));
  EXPECT_LT(c.records.size(), 40u);
  for (std::size_t i = 1; i < c.records.size(); ++i) EXPECT_LT(c.records[i - 1].seq, c.records[i].seq);
  EXPECT_FALSE(c.footer_valid);
}

TEST(LogFile, PartialRecovery) {
  TempDir d("recover");
  {
    LogWriter w(d.path / "logs" / "a_0000.sdlg", {3, "a", TimePoint{}});
    for (int i = 0; i < 5; ++i) w.append({static_cast<std::uint64_t>(i), TimePoint{}, "a", Bytes(8, 1)});
  }  // destroyed without close: crash
  EXPECT_EQ(recover_partials(d.path), 1u);
  auto c = read_log(d.path / "logs" / "a_0000.sdlg");
  EXPECT_EQ(c.records.size(), 5u);
  EXPECT_TRUE(c.footer_valid);
  EXPECT_FALSE(fs::exists(d.path / "logs" / "a_0000.sdlg.partial"));
}

TEST(Recorder, DownsamplesToConfiguredRate) {
  TempDir d("rate");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  Recorder r(bus, {{{"t", 10.0}}, 1u << 20, d.path, 1});
  drive(bus, r, "t", 10.0);
  r.close();
  auto n = r.stats().records_per_topic.at("t");
  EXPECT_GE(n, 90u);
  EXPECT_LE(n, 110u);
  // the newest message at each record tick is the one kept
  auto c = read_log(files_in(d.path).at(0));
  for (std::size_t i = 2; i < c.records.size(); ++i) EXPECT_EQ(c.records[i].seq - c.records[i - 1].seq, 10u);
}

TEST(Recorder, FullRateKeepsEveryMessage) {
  TempDir d("full");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  Recorder r(bus, {{{"t", 100.0}}, 1u << 20, d.path, 1});
  drive(bus, r, "t", 3.0);
  r.close();
  auto c = read_log(files_in(d.path).at(0));
  ASSERT_EQ(c.records.size(), 300u);
  for (std::size_t i = 0; i < c.records.size(); ++i) EXPECT_EQ(c.records[i].seq, i);
}

TEST(Recorder, HalvingRatesHalvesByteRate) {
  auto run = [](double factor) {
    TempDir d("halve");
    bus::Bus bus;
    bus.register_topic({"a", "x", 100.0});
    bus.register_topic({"b", "x", 100.0});
    Recorder r(bus, {scaled_rates({{"a", 50.0}, {"b", 20.0}}, factor), 1u << 20, d.path, 1});
    for (int i = 1; i <= 1000; ++i) {
      auto now = TimePoint{} + i * std::chrono::milliseconds(10);
      bus.publish("a", Bytes(200), now);
      bus.publish("b", Bytes(500), now);
      r.tick(now);
    }
    r.close();
    return static_cast<double>(r.stats().bytes_written);
  };
  const double full = run(1.0), half = run(0.5);
  EXPECT_NEAR(half / full, 0.5, 0.5 * 0.15);
}

TEST(Recorder, RotationAtConfiguredSize) {
  TempDir d("rotate");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  const std::size_t rotation = 20000;
  Recorder r(bus, {{{"t", 0.0}}, rotation, d.path, 2});
  const std::size_t rec = encode_record({0, {}, "t", Bytes(100)}).size();
  const auto n = static_cast<int>(2.5 * rotation / rec);
  for (int i = 1; i <= n; ++i) {
    bus.publish("t", Bytes(100), TimePoint{} + i * std::chrono::milliseconds(10));
    r.tick(TimePoint{} + i * std::chrono::milliseconds(10));
  }
  EXPECT_EQ(r.stats().closed_files.size(), 2u);
  r.close();
  auto files = files_in(d.path);
  ASSERT_EQ(files.size(), 3u);
  for (int i = 0; i < 2; ++i) {
    auto size = fs::file_size(files[i]) - kFooterSize;
    EXPECT_GE(size, rotation);
    EXPECT_LT(size, rotation + rec);
    EXPECT_TRUE(read_log(files[i]).footer_valid);
  }
  EXPECT_EQ(files[0].filename(), "t_0000.sdlg");
  EXPECT_EQ(files[2].filename(), "t_0002.sdlg");
}

TEST(Recorder, NoWritesNoFiles) {
  TempDir d("idle");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  Recorder r(bus, {{{"t", 10.0}}, 1000, d.path, 1});
  for (int i = 1; i < 100; ++i) r.tick(TimePoint{} + i * std::chrono::milliseconds(10));
  r.close();
  EXPECT_TRUE(files_in(d.path).empty());
}

TEST(Recorder, StorageFullStopsAndReports) {
  TempDir d("full_storage");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  std::vector<std::string> faults;
  RecordingConfig cfg{{{"t", 0.0}}, 1u << 20, d.path, 1, 5000};
  Recorder r(bus, cfg, [&](const std::string& f) { faults.push_back(f); });
  drive(bus, r, "t", 2.0, 100);
  EXPECT_TRUE(r.stopped());
  ASSERT_EQ(faults.size(), 1u);
  EXPECT_NE(faults[0].find("StorageFull"), std::string::npos);
  EXPECT_LE(r.stats().bytes_written, 5000u);
  auto files = files_in(d.path);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_TRUE(read_log(files[0]).footer_valid);
}

TEST(Recorder, RestartDoesNotOverwriteEarlierFiles) {
  TempDir d("restart");
  bus::Bus bus;
  bus.register_topic({"t", "x", 100.0});
  {
    Recorder r(bus, {{{"t", 0.0}}, 1u << 20, d.path, 1});
    drive(bus, r, "t", 0.1);
  }
  {
    Recorder r(bus, {{{"t", 0.0}}, 1u << 20, d.path, 1});
    drive(bus, r, "t", 0.1);
  }
  EXPECT_EQ(files_in(d.path).size(), 2u);
}
