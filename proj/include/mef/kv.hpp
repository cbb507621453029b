#pragma once

#include <cerrno>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mef/error.hpp"

namespace mef {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

/// `key = value` lines; `#` starts a comment. Later keys override earlier ones.
class KeyValues {
 public:
  static KeyValues parse(std::istream& is) {
    KeyValues kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(n, "expected key = value, got '" + line + "'");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError(n, "empty key");
      kv.set(key, trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues parse(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return to_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double d = to_double(key, it->second);
    if (d != static_cast<double>(static_cast<long long>(d)))
      throw Error(ErrorCode::ConfigError, "'" + key + "' must be an integer, got '" + it->second + "'");
    return static_cast<long long>(d);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(ErrorCode::ConfigError, "'" + key + "' must be a boolean, got '" + v + "'");
  }

 private:
  static double to_double(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "Inf") return std::numeric_limits<double>::infinity();
    char* end = nullptr;
    errno = 0;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
      throw Error(ErrorCode::ConfigError, "'" + key + "' must be a number, got '" + v + "'");
    return d;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mef
