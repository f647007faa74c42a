#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "spacedream/common/bytes.hpp"

namespace spacedream {

namespace fs = std::filesystem;

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text(const fs::path& path) {
  auto b = read_file(path);
  return as_string(b);
}

/// Writes via a sibling temporary and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, ByteView data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_text_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, as_bytes(text));
}

}  // namespace spacedream
