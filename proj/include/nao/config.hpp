#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nao/errors.hpp"

namespace nao {

// Line-oriented key=value configuration with [section] headers. Keys are
// addressed as "section.key". '#' starts a comment; parse errors carry the
// file name and line number.
class Config {
 public:
  static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    cfg.raw_ = text;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const std::string stripped = strip(line);
      if (stripped.empty() || stripped[0] == '#') continue;
      if (stripped.front() == '[') {
        if (stripped.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(line_no) +
                            ": unterminated section header: " + stripped);
        section = strip(stripped.substr(1, stripped.size() - 2));
        if (section.empty())
          throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
        continue;
      }
      const std::size_t eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": expected key = value, got: " + stripped);
      const std::string key = strip(stripped.substr(0, eq));
      const std::string value = strip(stripped.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full))
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key " + full);
      cfg.values_[full] = value;
      cfg.lines_[full] = line_no;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_string(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing required key " + key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  long long get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
      std::size_t pos = 0;
      long long out = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ":" + std::to_string(line_of(key)) + ": key " + key +
                        " expects an integer, got '" + v + "'");
    }
  }
  long long get_int(const std::string& key, long long dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(origin_ + ":" + std::to_string(line_of(key)) + ": key " + key +
                      " expects a boolean, got '" + v + "'");
  }

  // "[a, b, c]" or "a, b, c"
  std::vector<long long> get_int_list(const std::string& key) const {
    std::vector<long long> out;
    for (const std::string& item : split_list(key)) {
      try {
        out.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError(origin_ + ":" + std::to_string(line_of(key)) + ": key " + key +
                          " expects integers, got '" + item + "'");
      }
    }
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key) const {
    return split_list(key);
  }

  // FNV-1a over the raw bytes: the reproducibility fingerprint recorded in
  // artifact sidecars.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : raw_) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::string hash_hex() const {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = hash();
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
      out[std::size_t(i)] = digits[h & 0xf];
      h >>= 4;
    }
    return out;
  }

  const std::string& raw_text() const { return raw_; }
  const std::string& origin() const { return origin_; }
  int line_of(const std::string& key) const {
    auto it = lines_.find(key);
    return it == lines_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  double to_double(const std::string& key, const std::string& v) const {
    try {
      std::size_t pos = 0;
      double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ":" + std::to_string(line_of(key)) + ": key " + key +
                        " expects a number, got '" + v + "'");
    }
  }

  std::vector<std::string> split_list(const std::string& key) const {
    std::string v = get_string(key);
    if (!v.empty() && v.front() == '[') {
      if (v.back() != ']')
        throw ConfigError(origin_ + ":" + std::to_string(line_of(key)) + ": key " + key +
                          ": unterminated list");
      v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
      const std::string s = strip(item);
      if (!s.empty()) out.push_back(s);
    }
    return out;
  }

  std::string raw_;
  std::string origin_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
};

}  // namespace nao
