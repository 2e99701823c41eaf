#ifndef HETMOGP_CONFIG_HPP
#define HETMOGP_CONFIG_HPP

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hetmogp/errors.hpp"

namespace hetmogp {

/// Minimal TOML-like document: `[section]` headers, `key = value` lines,
/// `#` comments. Values are numbers, booleans, double-quoted strings or
/// flat lists of those in brackets. Keys are addressed as "section.key".
class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text, const std::string& origin = "config") {
    ConfigDoc doc;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(strip_comment(line));
      if (line.empty()) continue;
      auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where() + "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(where() + "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError(where() + "empty key or value");
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.values_.count(full)) throw ConfigError(where() + "duplicate key " + full);
      doc.values_[full] = value;
    }
    return doc;
  }

  static ConfigDoc load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : unquote(key, it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double v = to_double(key, it->second);
    if (v != static_cast<double>(static_cast<long long>(v))) {
      throw ConfigError(key + ": expected an integer, got " + it->second);
    }
    return static_cast<long long>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError(key + ": expected true or false, got " + it->second);
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    for (const auto& item : list_items(key, it->second)) out.push_back(unquote(key, item));
    return out;
  }

  std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<long long> out;
    for (const auto& item : list_items(key, it->second)) {
      const double v = to_double(key, item);
      if (v != static_cast<double>(static_cast<long long>(v))) throw ConfigError(key + ": expected integers");
      out.push_back(static_cast<long long>(v));
    }
    return out;
  }

  /// Throws for keys that were never read through a getter.
  void reject_unknown() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string unquote(const std::string& key, const std::string& v) {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
      throw ConfigError(key + ": expected a quoted string, got " + v);
    }
    return v.substr(1, v.size() - 2);
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw ConfigError("");
      return d;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got " + v);
    }
  }

  static std::vector<std::string> list_items(const std::string& key, const std::string& v) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
      throw ConfigError(key + ": expected a [list], got " + v);
    }
    std::vector<std::string> items;
    std::string cur;
    bool quoted = false;
    for (char c : v.substr(1, v.size() - 2)) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        items.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
    for (const auto& it : items) {
      if (it.empty()) throw ConfigError(key + ": empty list element");
    }
    return items;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace hetmogp

#endif
