#pragma once

#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <csetjmp>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "spacedream/common/bytes.hpp"

namespace spacedream::cam {

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

/// Baseline JPEG via libjpeg. `pixels` holds width·height·components bytes,
/// row-major; components is 1 (gray) or 3 (RGB). The comment goes into a COM marker.
inline Bytes encode_jpeg(const Bytes& pixels, int width, int height, int components, const std::string& comment,
                         int quality = 85) {
  if (width <= 0 || height <= 0 || (components != 1 && components != 3) ||
      pixels.size() != static_cast<std::size_t>(width) * height * components)
    throw std::invalid_argument("bad image geometry");

  jpeg_compress_struct cinfo{};
  detail::JpegErrorManager err{};
  unsigned char* out = nullptr;
  unsigned long out_size = 0;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::on_jpeg_error;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(out);
    throw std::runtime_error(std::string("jpeg: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &out, &out_size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = components;
  cinfo.in_color_space = components == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  if (!comment.empty())
    jpeg_write_marker(&cinfo, JPEG_COM, reinterpret_cast<const JOCTET*>(comment.data()),
                      static_cast<unsigned>(std::min<std::size_t>(comment.size(), 65533)));
  const auto stride = static_cast<std::size_t>(width) * components;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(pixels.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  Bytes result(out, out + out_size);
  jpeg_destroy_compress(&cinfo);
  std::free(out);
  return result;
}

/// SOI at the start, EOI at the end, and a well-formed marker chain up to the scan.
inline bool is_valid_jpeg(ByteView b) {
  if (b.size() < 4 || b[0] != 0xFF || b[1] != 0xD8 || b[b.size() - 2] != 0xFF || b[b.size() - 1] != 0xD9) return false;
  std::size_t pos = 2;
  while (pos + 4 <= b.size()) {
    if (b[pos] != 0xFF) return false;
    const std::uint8_t marker = b[pos + 1];
    const std::size_t len = (std::size_t{b[pos + 2]} << 8) | b[pos + 3];
    if (len < 2 || pos + 2 + len > b.size()) return false;
    if (marker == 0xDA) return true;  // start of scan: entropy-coded data follows
    pos += 2 + len;
  }
  return false;
}

/// Text of the first COM marker, if any.
inline std::string jpeg_comment(ByteView b) {
  std::size_t pos = 2;
  while (pos + 4 <= b.size() && b[pos] == 0xFF) {
    const std::uint8_t marker = b[pos + 1];
    const std::size_t len = (std::size_t{b[pos + 2]} << 8) | b[pos + 3];
    if (pos + 2 + len > b.size()) break;
    if (marker == 0xFE) return as_string(b.subspan(pos + 4, len - 2));
    if (marker == 0xDA) break;
    pos += 2 + len;
  }
  return {};
}

}  // namespace spacedream::cam
