#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slipstep/types.hpp"

namespace slipstep {

/// Flat `key = value` file. `#` starts a comment; blank lines are ignored;
/// later keys override earlier ones.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<string>") {
    KeyValueConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::InvalidArgument, origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(body.substr(0, eq));
      if (key.empty()) throw Error(ErrorKind::InvalidArgument, origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(body.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const std::string& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) bad(key, s);
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    bad(key, s);
    return fallback;
  }

  /// Comma-separated list; each item may be a range `start:step:stop`
  /// (inclusive, tolerant to round-off at the end).
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_list(key, it->second);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::vector<double> parse_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      std::vector<std::string> parts;
      std::stringstream is(item);
      std::string p;
      while (std::getline(is, p, ':')) parts.push_back(trim(p));
      if (parts.size() == 1) {
        out.push_back(to_double(key, parts[0]));
      } else if (parts.size() == 3) {
        const double a = to_double(key, parts[0]), step = to_double(key, parts[1]), b = to_double(key, parts[2]);
        if (!(step > 0) || b < a) bad(key, item);
        const long n = static_cast<long>(std::floor((b - a) / step + 1e-9));
        for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * step);
      } else {
        bad(key, item);
      }
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  [[noreturn]] static void bad(const std::string& key, const std::string& value) {
    throw Error(ErrorKind::InvalidArgument, "bad value for " + key + ": '" + value + "'");
  }

  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) bad(key, s);
      return v;
    } catch (const std::logic_error&) {
      bad(key, s);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace slipstep
