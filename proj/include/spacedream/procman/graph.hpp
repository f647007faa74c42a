#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "spacedream/common/clock.hpp"
#include "spacedream/common/error.hpp"
#include "spacedream/common/text_config.hpp"

namespace spacedream::pm {

enum class ProcErrc { ParseError, CycleError, UnknownDependency, SpawnError, ReadyTimeout, UnknownProcess };
using ProcError = Error<ProcErrc>;

struct ProcessSpec {
  std::string name;
  std::vector<std::string> command;
  std::map<std::string, std::string> env;
  std::vector<std::string> depends_on;
  std::string ready_pattern;
  std::string error_pattern;  // empty: never matches
  Duration start_timeout = std::chrono::seconds(10);
};

struct ProcessGraph {
  std::vector<ProcessSpec> specs;  // topological order: dependencies first
  const ProcessSpec* find(const std::string& name) const {
    for (const auto& s : specs)
      if (s.name == name) return &s;
    return nullptr;
  }
  std::vector<std::string> order() const {
    std::vector<std::string> out;
    for (const auto& s : specs) out.push_back(s.name);
    return out;
  }
  /// Every process that depends on `name`, directly or not, in start order.
  std::vector<std::string> dependents(const std::string& name) const {
    std::set<std::string> hit{name};
    std::vector<std::string> out;
    for (const auto& s : specs)
      for (const auto& d : s.depends_on)
        if (hit.contains(d) && !hit.contains(s.name)) {
          hit.insert(s.name);
          out.push_back(s.name);
        }
    return out;
  }
};

/// Splits a command line into words. Single and double quotes group, backslash escapes.
inline std::vector<std::string> split_command(std::string_view s, std::size_t line = 0) {
  std::vector<std::string> out;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == quote) quote = 0;
      else if (c == '\\' && quote == '"' && i + 1 < s.size()) cur += s[++i];
      else cur += c;
    } else if (c == '"' || c == '\'') {
      quote = c;
      in_word = true;
    } else if (c == '\\' && i + 1 < s.size()) {
      cur += s[++i];
      in_word = true;
    } else if (c == ' ' || c == '\t') {
      if (in_word) out.push_back(std::move(cur));
      cur.clear();
      in_word = false;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quote) throw ProcError(ProcErrc::ParseError, "line " + std::to_string(line) + ": unterminated quote");
  if (in_word) out.push_back(std::move(cur));
  return out;
}

/// Orders specs so that every process follows its dependencies; ties keep file order.
inline std::vector<ProcessSpec> topological_order(std::vector<ProcessSpec> specs) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!index.emplace(specs[i].name, i).second)
      throw ProcError(ProcErrc::ParseError, "duplicate process '" + specs[i].name + "'");
  }
  for (const auto& s : specs)
    for (const auto& d : s.depends_on)
      if (!index.contains(d))
        throw ProcError(ProcErrc::UnknownDependency, "process '" + s.name + "' depends on unknown '" + d + "'");

  std::vector<int> mark(specs.size(), 0);  // 0 new, 1 on stack, 2 done
  std::vector<ProcessSpec> out;
  std::vector<std::string> stack;
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    if (mark[i] == 2) return;
    stack.push_back(specs[i].name);
    if (mark[i] == 1) {
      std::string cycle;
      auto first = std::find(stack.begin(), stack.end(), specs[i].name);
      for (auto it = first; it != stack.end(); ++it) cycle += (it == first ? "" : " -> ") + *it;
      throw ProcError(ProcErrc::CycleError, "dependency cycle: " + cycle);
    }
    mark[i] = 1;
    for (const auto& d : specs[i].depends_on) visit(index.at(d));
    mark[i] = 2;
    stack.pop_back();
    out.push_back(specs[i]);
  };
  for (std::size_t i = 0; i < specs.size(); ++i) visit(i);
  return out;
}

// Process graph file:
//
//   [process hal]
//   command = /usr/bin/spacedream-hal --rate 100
//   env = LD_LIBRARY_PATH=/opt/lib          (repeatable)
//   depends_on = power                       (repeatable, or comma separated)
//   ready = ^HAL ready$
//   error = ERROR|FATAL
//   start_timeout_ms = 5000

inline ProcessGraph load_config(std::string_view text) {
  ConfigDocument doc;
  try {
    doc = parse_config(text);
  } catch (const ConfigParseError& e) {
    throw ProcError(ProcErrc::ParseError, e.what());
  }
  if (!doc.top.entries.empty())
    throw ProcError(ProcErrc::ParseError, "line " + std::to_string(doc.top.entries[0].line) + ": entry outside a block");
  std::vector<ProcessSpec> specs;
  for (const auto& b : doc.blocks) {
    auto fail = [&](std::size_t line, const std::string& msg) {
      throw ProcError(ProcErrc::ParseError, "line " + std::to_string(line) + ": " + msg);
    };
    if (b.kind != "process") fail(b.line, "unknown block '" + b.kind + "'");
    if (b.name.empty()) fail(b.line, "process without a name");
    ProcessSpec s;
    s.name = b.name;
    for (const auto& e : b.entries) {
      if (e.key == "command") {
        s.command = split_command(e.value, e.line);
      } else if (e.key == "env") {
        auto eq = e.value.find('=');
        if (eq == std::string::npos || eq == 0) fail(e.line, "env expects NAME=value");
        s.env[e.value.substr(0, eq)] = e.value.substr(eq + 1);
      } else if (e.key == "depends_on") {
        std::string_view v = e.value;
        while (!v.empty()) {
          auto comma = v.find(',');
          auto item = trim(v.substr(0, comma));
          if (!item.empty()) s.depends_on.emplace_back(item);
          v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
        }
      } else if (e.key == "ready") {
        s.ready_pattern = e.value;
      } else if (e.key == "error") {
        s.error_pattern = e.value;
      } else if (e.key == "start_timeout_ms") {
        try {
          s.start_timeout = std::chrono::milliseconds(parse_int(e.value, e.line));
        } catch (const ConfigParseError& err) {
          fail(e.line, err.what());
        }
      } else {
        fail(e.line, "unknown key '" + e.key + "'");
      }
    }
    if (s.command.empty()) fail(b.line, "process '" + s.name + "' has no command");
    if (s.ready_pattern.empty()) fail(b.line, "process '" + s.name + "' has no ready pattern");
    for (const auto* pat : {&s.ready_pattern, &s.error_pattern}) {
      try {
        if (!pat->empty()) std::regex re(*pat);
      } catch (const std::regex_error& err) {
        fail(b.line, "bad pattern '" + *pat + "': " + err.what());
      }
    }
    specs.push_back(std::move(s));
  }
  return {topological_order(std::move(specs))};
}

}  // namespace spacedream::pm
