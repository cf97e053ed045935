#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <string>

#include "htrlab/error.hpp"

// Typed reads from flat key=value maps; malformed values are InvalidConfig.
namespace htrlab::kv {

using Map = std::map<std::string, std::string>;

/// Shortest text that reads back to the same double.
inline std::string format(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format(bool v) { return v ? "true" : "false"; }

inline std::int64_t get_int(const Map& m, const std::string& key, std::int64_t dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  require(ec == std::errc{} && p == it->second.data() + it->second.size(), ErrorCode::InvalidConfig,
          "'" + key + "' expects an integer, got '" + it->second + "'");
  return v;
}

inline double get_double(const Map& m, const std::string& key, double dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  double v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  require(ec == std::errc{} && p == it->second.data() + it->second.size(), ErrorCode::InvalidConfig,
          "'" + key + "' expects a number, got '" + it->second + "'");
  return v;
}

inline bool get_bool(const Map& m, const std::string& key, bool dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  fail(ErrorCode::InvalidConfig, "'" + key + "' expects true or false, got '" + it->second + "'");
}

inline std::string get_string(const Map& m, const std::string& key, const std::string& dflt) {
  auto it = m.find(key);
  return it == m.end() ? dflt : it->second;
}

}  // namespace htrlab::kv
