#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spacedream/bus/bus.hpp"
#include "spacedream/camsim/jpeg.hpp"
#include "spacedream/common/checksum.hpp"
#include "spacedream/common/files.hpp"
#include "spacedream/halsim/node.hpp"

namespace spacedream::cam {

enum class CameraErrc { CameraInactive, StorageFull, UnknownMedia, SwitchForbidden, InvalidParams, BadRecord };
using CameraError = Error<CameraErrc>;

inline const char* to_string(CameraErrc e) {
  switch (e) {
    case CameraErrc::CameraInactive: return "CameraInactive";
    case CameraErrc::StorageFull: return "StorageFull";
    case CameraErrc::UnknownMedia: return "UnknownMedia";
    case CameraErrc::SwitchForbidden: return "SwitchForbidden";
    case CameraErrc::InvalidParams: return "InvalidParams";
    case CameraErrc::BadRecord: return "BadRecord";
  }
  return "?";
}

enum class CameraId : std::uint8_t { Base = 0, EndEffector = 1 };
enum class FieldOfView : std::uint8_t { Wide = 0, Linear = 1, Narrow = 2 };
enum class ColorSpace : std::uint8_t { Rgb8 = 0, Gray8 = 1 };
enum class MediaKind : std::uint8_t { Image = 0, Video = 1 };
enum class Stage : std::uint8_t { Queued, Capturing, Stored, Downloaded, PostProcessed };

inline const char* to_string(CameraId c) { return c == CameraId::Base ? "base" : "end_effector"; }
inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::Queued: return "queued";
    case Stage::Capturing: return "capturing";
    case Stage::Stored: return "stored";
    case Stage::Downloaded: return "downloaded";
    case Stage::PostProcessed: return "post_processed";
  }
  return "?";
}

inline std::optional<CameraId> parse_camera(std::string_view s) {
  if (s == "base") return CameraId::Base;
  if (s == "end_effector") return CameraId::EndEffector;
  return std::nullopt;
}

struct CaptureParams {
  int width = 640;
  int height = 480;
  FieldOfView fov = FieldOfView::Wide;
  ColorSpace color = ColorSpace::Rgb8;
  bool use_light = false;
  double duration = 0.0;  // s, video only
  int fps = 10;           // video only

  void validate(MediaKind kind) const {
    if (width <= 0 || height <= 0 || width > 8192 || height > 8192)
      throw CameraError(CameraErrc::InvalidParams, "resolution must be positive");
    if (kind == MediaKind::Video && (!(duration > 0.0) || fps <= 0))
      throw CameraError(CameraErrc::InvalidParams, "video needs duration > 0 and fps > 0");
  }
  bool operator==(const CaptureParams&) const = default;
};

struct MediaRecord {
  std::uint32_t id = 0;
  CameraId camera = CameraId::Base;
  MediaKind kind = MediaKind::Image;
  std::string path;  // relative to the media root: <camera>/<id>.<jpg|vid>
  std::uint64_t size = 0;
  TimePoint requested{}, captured{}, stored{}, downloaded{}, created{};  // created: post-processing done

  Stage stage_at(TimePoint now) const {
    if (now >= created) return Stage::PostProcessed;
    if (now >= downloaded) return Stage::Downloaded;
    if (now >= stored) return Stage::Stored;
    if (now >= captured) return Stage::Capturing;
    return Stage::Queued;
  }
  bool operator==(const MediaRecord&) const = default;
};

struct CameraConfig {
  fs::path media_root;
  bool allow_switching = false;
  double latency_min = 3.0;   // s
  double latency_max = 22.0;  // s
  double latency_scale = 1.0;
  Duration switch_time = std::chrono::seconds(1);
  std::uint64_t storage_limit_bytes = 0;  // 0: unlimited
  std::uint64_t seed = 1;
  int jpeg_quality = 85;
};

/// Picks the camera for this boot; the end-effector camera is favoured.
inline CameraId choose_camera(std::mt19937_64& rng, double end_effector_weight = 0.7) {
  return std::bernoulli_distribution(end_effector_weight)(rng) ? CameraId::EndEffector : CameraId::Base;
}

/// Seeded gradient with noise, optionally lit, in the requested color space.
inline Bytes synthetic_frame(std::uint64_t seed, const CaptureParams& p, CameraId cam, int frame, int components) {
  std::mt19937_64 rng(seed ^ (std::uint64_t{static_cast<std::uint8_t>(cam)} << 56) ^ (static_cast<std::uint64_t>(frame) << 32));
  std::uniform_int_distribution<int> noise(-12, 12);
  const double zoom = p.fov == FieldOfView::Wide ? 1.0 : p.fov == FieldOfView::Linear ? 1.5 : 2.5;
  const int light = p.use_light ? 40 : 0;
  Bytes px(static_cast<std::size_t>(p.width) * p.height * components);
  const double phase = frame * 0.15 + static_cast<double>(rng() % 1000) / 100.0;
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const double u = zoom * x / p.width, v = zoom * y / p.height;
      const int base = static_cast<int>(110 + 80 * std::sin(6.0 * u + phase) * std::cos(4.0 * v)) + light;
      for (int c = 0; c < components; ++c) {
        const int val = base + c * 25 - static_cast<int>(60 * v) + noise(rng);
        px[(static_cast<std::size_t>(y) * p.width + x) * components + c] = static_cast<std::uint8_t>(std::clamp(val, 0, 255));
      }
    }
  }
  return px;
}

inline std::string stamp_comment(CameraId cam, std::uint32_t id, TimePoint t, const hal::JointVector& q) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "spacedream camera=%s media=%u t=%.3f q=%.6f,%.6f,%.6f,%.6f", to_string(cam), id,
                to_seconds(t), q[0], q[1], q[2], q[3]);
  return buf;
}

// Video container: "SDVD" | u8 version | u16 width | u16 height | u16 fps | u32 frames | frames x (u32 len | JPEG)

struct VideoInfo {
  int width = 0, height = 0, fps = 0;
  std::vector<Bytes> frames;
};

inline VideoInfo parse_video(ByteView b) {
  try {
    ByteReader r(b);
    if (as_string(r.raw(4)) != "SDVD" || r.u8() != 1) throw CameraError(CameraErrc::BadRecord, "not a video container");
    VideoInfo v;
    v.width = r.u16();
    v.height = r.u16();
    v.fps = r.u16();
    auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto f = r.blob32();
      v.frames.emplace_back(f.begin(), f.end());
    }
    return v;
  } catch (const DecodeError& e) {
    throw CameraError(CameraErrc::BadRecord, e.what());
  }
}

/// Camera server: one active camera, actions serialized on the shared USB link.
/// Media files appear on disk once post-processing has finished (see tick()).
class CameraServer {
 public:
  using PositionSource = std::function<hal::JointVector()>;

  CameraServer(CameraConfig cfg, PositionSource positions = {})
      : cfg_(std::move(cfg)), positions_(std::move(positions)), latency_rng_(cfg_.seed) {
    if (cfg_.latency_min <= 0.0 || cfg_.latency_max < cfg_.latency_min)
      throw std::invalid_argument("capture latency range must satisfy 0 < min <= max");
  }

  void select(CameraId id, TimePoint now) {
    std::lock_guard lock(mutex_);
    if (active_ == id) return;
    if (active_ && !cfg_.allow_switching)
      throw CameraError(CameraErrc::SwitchForbidden, std::string("switching to ") + to_string(id) + " is disabled");
    active_ = id;
    ready_at_ = std::max(now, busy_until_) + cfg_.switch_time;
  }

  std::optional<CameraId> active() const {
    std::lock_guard lock(mutex_);
    return active_;
  }

  MediaRecord take_image(CameraId cam, const CaptureParams& p, TimePoint now) {
    return capture(cam, p, MediaKind::Image, now);
  }
  MediaRecord record_video(CameraId cam, const CaptureParams& p, TimePoint now) {
    return capture(cam, p, MediaKind::Video, now);
  }

  /// Completed media, ascending by creation time.
  std::vector<MediaRecord> list_media() const {
    std::lock_guard lock(mutex_);
    std::vector<MediaRecord> out;
    for (const auto& [id, m] : done_) out.push_back(m);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.created < b.created; });
    return out;
  }

  void delete_media(std::uint32_t id) {
    std::lock_guard lock(mutex_);
    auto it = done_.find(id);
    if (it == done_.end()) throw CameraError(CameraErrc::UnknownMedia, "unknown media " + std::to_string(id));
    fs::remove(cfg_.media_root / it->second.path);
    used_ -= it->second.size;
    done_.erase(it);
  }

  /// Finishes actions whose post-processing is complete; returns them.
  std::vector<MediaRecord> tick(TimePoint now) {
    std::lock_guard lock(mutex_);
    std::vector<MediaRecord> finished;
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (now >= it->record.created) {
        write_file_atomic(cfg_.media_root / it->record.path, it->bytes);
        done_[it->record.id] = it->record;
        finished.push_back(it->record);
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
    return finished;
  }

  bool busy(TimePoint now) const {
    std::lock_guard lock(mutex_);
    return now < busy_until_;
  }
  std::uint64_t used_bytes() const {
    std::lock_guard lock(mutex_);
    return used_;
  }
  const CameraConfig& config() const { return cfg_; }

 private:
  struct Pending {
    MediaRecord record;
    Bytes bytes;
  };

  MediaRecord capture(CameraId cam, const CaptureParams& p, MediaKind kind, TimePoint now) {
    p.validate(kind);
    hal::JointVector q{};
    if (positions_) q = positions_();
    std::lock_guard lock(mutex_);
    if (active_ != cam)
      throw CameraError(CameraErrc::CameraInactive, std::string("camera ") + to_string(cam) + " is not active");

    MediaRecord m;
    m.id = next_id_++;
    m.camera = cam;
    m.kind = kind;
    m.path = std::string(to_string(cam)) + "/" + std::to_string(m.id) + (kind == MediaKind::Image ? ".jpg" : ".vid");
    m.requested = now;
    const TimePoint start = std::max({now, ready_at_, busy_until_});
    const double latency =
        std::uniform_real_distribution<double>(cfg_.latency_min, cfg_.latency_max)(latency_rng_) * cfg_.latency_scale +
        (kind == MediaKind::Video ? p.duration : 0.0);
    m.captured = start + from_seconds(0.1 * latency);
    m.stored = start + from_seconds(0.4 * latency);
    m.downloaded = start + from_seconds(0.8 * latency);
    m.created = start + from_seconds(latency);

    const std::uint64_t content_seed = cfg_.seed * 0x9E3779B97F4A7C15ull + m.id;
    Bytes bytes = kind == MediaKind::Image ? render_image(content_seed, p, cam, m, q) : render_video(content_seed, p, cam, m, q);
    if (cfg_.storage_limit_bytes && used_ + bytes.size() > cfg_.storage_limit_bytes) {
      --next_id_;
      throw CameraError(CameraErrc::StorageFull, "camera storage full");
    }
    m.size = bytes.size();
    used_ += m.size;
    busy_until_ = m.created;
    pending_.push_back({m, std::move(bytes)});
    return m;
  }

  Bytes render_image(std::uint64_t seed, const CaptureParams& p, CameraId cam, const MediaRecord& m,
                     const hal::JointVector& q) const {
    const int comps = p.color == ColorSpace::Rgb8 ? 3 : 1;
    return encode_jpeg(synthetic_frame(seed, p, cam, 0, comps), p.width, p.height, comps,
                       stamp_comment(cam, m.id, m.captured, q), cfg_.jpeg_quality);
  }

  Bytes render_video(std::uint64_t seed, const CaptureParams& p, CameraId cam, const MediaRecord& m,
                     const hal::JointVector& q) const {
    const int comps = p.color == ColorSpace::Rgb8 ? 3 : 1;
    const auto n = static_cast<std::uint32_t>(std::lround(p.duration * p.fps));
    ByteWriter w;
    w.raw(std::string_view("SDVD")).u8(1).u16(static_cast<std::uint16_t>(p.width)).u16(static_cast<std::uint16_t>(p.height));
    w.u16(static_cast<std::uint16_t>(p.fps)).u32(n);
    for (std::uint32_t i = 0; i < n; ++i)
      w.blob32(encode_jpeg(synthetic_frame(seed, p, cam, static_cast<int>(i), comps), p.width, p.height, comps,
                           stamp_comment(cam, m.id, m.captured + from_seconds(i / static_cast<double>(p.fps)), q),
                           cfg_.jpeg_quality));
    return std::move(w).take();
  }

  CameraConfig cfg_;
  PositionSource positions_;
  mutable std::mutex mutex_;
  std::mt19937_64 latency_rng_;
  std::optional<CameraId> active_;
  TimePoint ready_at_{}, busy_until_{};
  std::uint32_t next_id_ = 1;
  std::uint64_t used_ = 0;
  std::vector<Pending> pending_;
  std::map<std::uint32_t, MediaRecord> done_;
};

// --- bus interface --------------------------------------------------------------------
//
// Every reply starts with u8 status: 0 = ok, otherwise 1 + CameraErrc followed by the message text.
//   camera/select        req: u8 camera                          reply: -
//   camera/take_image    req: u8 camera | params                 reply: record
//   camera/record_video  req: u8 camera | params                 reply: record
//   camera/list          req: -                                  reply: u32 n | n x record
//   camera/delete        req: u32 media id                       reply: -
// params: u16 w | u16 h | u8 fov | u8 color | u8 light | f64 duration | u16 fps
// record: u32 id | u8 camera | u8 kind | str16 path | u64 size | 5 x i64 stage times (ns)

inline constexpr const char* kSelectService = "camera/select";
inline constexpr const char* kTakeImageService = "camera/take_image";
inline constexpr const char* kRecordVideoService = "camera/record_video";
inline constexpr const char* kListService = "camera/list";
inline constexpr const char* kDeleteService = "camera/delete";
inline constexpr const char* kEventsTopic = "camera/events";

inline void encode_params(ByteWriter& w, const CaptureParams& p) {
  w.u16(static_cast<std::uint16_t>(p.width)).u16(static_cast<std::uint16_t>(p.height));
  w.u8(static_cast<std::uint8_t>(p.fov)).u8(static_cast<std::uint8_t>(p.color)).u8(p.use_light ? 1 : 0);
  w.f64(p.duration).u16(static_cast<std::uint16_t>(p.fps));
}

inline CaptureParams decode_params(ByteReader& r) {
  CaptureParams p;
  p.width = r.u16();
  p.height = r.u16();
  auto fov = r.u8(), color = r.u8();
  if (fov > 2 || color > 1) throw CameraError(CameraErrc::InvalidParams, "bad capture parameters");
  p.fov = static_cast<FieldOfView>(fov);
  p.color = static_cast<ColorSpace>(color);
  p.use_light = r.u8() != 0;
  p.duration = r.f64();
  p.fps = r.u16();
  return p;
}

inline void encode_record(ByteWriter& w, const MediaRecord& m) {
  w.u32(m.id).u8(static_cast<std::uint8_t>(m.camera)).u8(static_cast<std::uint8_t>(m.kind)).str16(m.path).u64(m.size);
  for (auto t : {m.requested, m.captured, m.stored, m.downloaded, m.created}) w.i64(t.time_since_epoch().count());
}

inline MediaRecord decode_record(ByteReader& r) {
  MediaRecord m;
  m.id = r.u32();
  m.camera = static_cast<CameraId>(r.u8() & 1);
  m.kind = static_cast<MediaKind>(r.u8() & 1);
  m.path = r.str16();
  m.size = r.u64();
  for (auto* t : {&m.requested, &m.captured, &m.stored, &m.downloaded, &m.created}) *t = TimePoint{Duration{r.i64()}};
  return m;
}

inline CameraId decode_camera(ByteReader& r) {
  auto c = r.u8();
  if (c > 1) throw CameraError(CameraErrc::InvalidParams, "unknown camera " + std::to_string(c));
  return static_cast<CameraId>(c);
}

/// Exposes a CameraServer on the bus. Services read the clock when they run.
class CameraNode {
 public:
  CameraNode(bus::Bus& bus, CameraServer& server, const Clock& clock) : bus_(bus), server_(server), clock_(clock) {
    bus_.register_topic({kEventsTopic, "text", 0.0});
    for (const auto* s : {kSelectService, kTakeImageService, kRecordVideoService, kListService, kDeleteService})
      bus_.register_service({s, "camera.Request/1", "camera.Reply/1"});
    attach(kSelectService, [this](ByteReader& r, ByteWriter&) { server_.select(decode_camera(r), clock_.now()); });
    attach(kTakeImageService, [this](ByteReader& r, ByteWriter& w) {
      auto cam = decode_camera(r);
      encode_record(w, server_.take_image(cam, decode_params(r), clock_.now()));
    });
    attach(kRecordVideoService, [this](ByteReader& r, ByteWriter& w) {
      auto cam = decode_camera(r);
      encode_record(w, server_.record_video(cam, decode_params(r), clock_.now()));
    });
    attach(kListService, [this](ByteReader&, ByteWriter& w) {
      auto all = server_.list_media();
      w.u32(static_cast<std::uint32_t>(all.size()));
      for (const auto& m : all) encode_record(w, m);
    });
    attach(kDeleteService, [this](ByteReader& r, ByteWriter&) { server_.delete_media(r.u32()); });
  }

  ~CameraNode() {
    for (const auto* s : {kSelectService, kTakeImageService, kRecordVideoService, kListService, kDeleteService})
      bus_.detach_handler(s);
  }

  CameraNode(const CameraNode&) = delete;
  CameraNode& operator=(const CameraNode&) = delete;

  void tick(TimePoint now) {
    for (const auto& m : server_.tick(now)) {
      auto line = std::string("stored ") + m.path + " size=" + std::to_string(m.size);
      bus_.publish(kEventsTopic, as_bytes(line), now);
    }
  }

 private:
  void attach(const char* name, std::function<void(ByteReader&, ByteWriter&)> fn) {
    bus_.attach_handler(name, [fn = std::move(fn)](ByteView req) {
      ByteReader r(req);
      ByteWriter body;
      try {
        fn(r, body);
      } catch (const CameraError& e) {
        return ByteWriter().u8(static_cast<std::uint8_t>(1 + static_cast<int>(e.code()))).raw(std::string_view(e.what())).bytes();
      } catch (const DecodeError& e) {
        return ByteWriter().u8(1 + static_cast<std::uint8_t>(CameraErrc::InvalidParams)).raw(std::string_view(e.what())).bytes();
      }
      return ByteWriter().u8(0).raw(body.bytes()).bytes();
    });
  }

  bus::Bus& bus_;
  CameraServer& server_;
  const Clock& clock_;
};

/// Typed access to the camera services; rethrows server-side errors with their code.
class CameraClient {
 public:
  explicit CameraClient(bus::Bus& bus, Duration timeout = std::chrono::seconds(5)) : bus_(bus), timeout_(timeout) {}

  void select(CameraId id) { call(kSelectService, ByteWriter().u8(static_cast<std::uint8_t>(id)).bytes()); }

  MediaRecord take_image(CameraId id, const CaptureParams& p) { return capture(kTakeImageService, id, p); }
  MediaRecord record_video(CameraId id, const CaptureParams& p) { return capture(kRecordVideoService, id, p); }

  std::vector<MediaRecord> list_media() {
    auto data = call(kListService, {});
    ByteReader r(data);
    std::vector<MediaRecord> out(r.u32());
    for (auto& m : out) m = decode_record(r);
    return out;
  }

  void delete_media(std::uint32_t id) { call(kDeleteService, ByteWriter().u32(id).bytes()); }

 private:
  MediaRecord capture(const char* service, CameraId id, const CaptureParams& p) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(id));
    encode_params(w, p);
    auto data = call(service, w.bytes());
    ByteReader r(data);
    return decode_record(r);
  }

  Bytes call(const char* service, ByteView req) {
    auto reply = bus_.call_service(service, req, timeout_);
    if (reply.empty()) throw CameraError(CameraErrc::BadRecord, "empty camera reply");
    if (reply[0] != 0) {
      const auto code = static_cast<CameraErrc>(std::min<int>(reply[0] - 1, static_cast<int>(CameraErrc::BadRecord)));
      throw CameraError(code, as_string(ByteView(reply).subspan(1)));
    }
    return Bytes(reply.begin() + 1, reply.end());
  }

  bus::Bus& bus_;
  Duration timeout_;
};

}  // namespace spacedream::cam
