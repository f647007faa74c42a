#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spacedream {

/// Error raised for malformed configuration text; `line` is 1-based (0 when unknown).
class ConfigParseError : public std::runtime_error {
 public:
  ConfigParseError(std::size_t line, const std::string& msg)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Shared plain-text format for process graphs, transfer rules and scenarios:
//
//   # comment
//   key = value                 top-level entry
//   [kind name]                 opens a block
//   key = value                 entry of the block
//
// Keys may repeat; order is preserved.

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct ConfigBlock {
  std::string kind;  // empty for the top-level block
  std::string name;
  std::size_t line = 0;
  std::vector<ConfigEntry> entries;

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& e : entries)
      if (e.key == key) return e.value;
    return std::nullopt;
  }
  std::vector<const ConfigEntry*> all(std::string_view key) const {
    std::vector<const ConfigEntry*> out;
    for (const auto& e : entries)
      if (e.key == key) out.push_back(&e);
    return out;
  }
};

struct ConfigDocument {
  ConfigBlock top;
  std::vector<ConfigBlock> blocks;
};

inline std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline ConfigDocument parse_config(std::string_view text) {
  ConfigDocument doc;
  ConfigBlock* current = &doc.top;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    auto nl = text.find('\n');
    auto raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

    auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigParseError(lineno, "unterminated block header");
      auto inner = trim(line.substr(1, line.size() - 2));
      auto sp = inner.find_first_of(" \t");
      ConfigBlock block;
      block.kind = std::string(inner.substr(0, sp));
      block.name = sp == std::string_view::npos ? std::string{} : std::string(trim(inner.substr(sp)));
      block.line = lineno;
      if (block.kind.empty()) throw ConfigParseError(lineno, "empty block header");
      doc.blocks.push_back(std::move(block));
      current = &doc.blocks.back();
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigParseError(lineno, "expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigParseError(lineno, "empty key");
    current->entries.push_back({std::string(key), std::string(trim(line.substr(eq + 1))), lineno});
  }
  return doc;
}

inline double parse_double(std::string_view s, std::size_t line = 0) {
  try {
    std::size_t used = 0;
    double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigParseError(line, "not a number: '" + std::string(s) + "'");
  }
}

inline std::int64_t parse_int(std::string_view s, std::size_t line = 0) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ConfigParseError(line, "not an integer: '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s, std::size_t line = 0) {
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigParseError(line, "not a boolean: '" + std::string(s) + "'");
}

/// Accepts plain seconds or a number suffixed with `ms`, `s` or `min`.
inline double parse_seconds(std::string_view s, std::size_t line = 0) {
  s = trim(s);
  double scale = 1.0;
  if (s.ends_with("ms")) {
    scale = 1e-3;
    s.remove_suffix(2);
  } else if (s.ends_with("min")) {
    scale = 60.0;
    s.remove_suffix(3);
  } else if (s.ends_with("s")) {
    s.remove_suffix(1);
  }
  return parse_double(trim(s), line) * scale;
}

/// Splits on commas or whitespace, dropping empty items.
inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace spacedream
