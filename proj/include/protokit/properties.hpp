#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "protokit/errors.hpp"

namespace protokit {

// Flat key=value configuration. `[section]` headers prefix subsequent keys
// with "section.". Lines starting with '#' and blank lines are ignored.
class Properties {
 public:
  Properties() = default;
  Properties(std::initializer_list<std::pair<const std::string, std::string>> init)
      : values_(init) {}

  static Properties fromString(const std::string& text) {
    Properties p;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      if (line.empty() || line[0] == '#') continue;
      if (line.front() == '[' && line.back() == ']') {
        section = line.substr(1, line.size() - 2);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
      const auto vstart = value.find_first_not_of(" \t");
      value = vstart == std::string::npos ? "" : value.substr(vstart);
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      p.set(section.empty() ? key : section + "." + key, value);
    }
    return p;
  }

  static Properties fromFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open properties file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return fromString(buf.str());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw MissingProperty(key);
    return it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int64_t getInt(const std::string& key) const { return std::stoll(get(key)); }
  int64_t getInt(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoll(it->second);
  }

  double getDouble(const std::string& key) const { return std::stod(get(key)); }
  double getDouble(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }

  bool getBool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return it->second == "true" || it->second == "1" || it->second == "yes";
  }

  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace protokit
