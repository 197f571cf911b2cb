#include "chainsgd/configfile.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chainsgd {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void missing(const std::string& section, const std::string& key) {
  throw std::runtime_error("config key [" + section + "] " + key + " is required");
}

double to_double(const std::string& section, const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key [" + section + "] " + key + ": not a number: " + raw);
  }
  if (pos != raw.size()) {
    throw std::runtime_error("config key [" + section + "] " + key + ": not a number: " + raw);
  }
  return v;
}

long to_long(const std::string& section, const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(raw, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key [" + section + "] " + key + ": not an integer: " + raw);
  }
  if (pos != raw.size()) {
    throw std::runtime_error("config key [" + section + "] " + key + ": not an integer: " + raw);
  }
  return v;
}

std::vector<std::string> split_commas(const std::string& raw) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream ss(raw);
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) parts.push_back(t);
  }
  return parts;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": malformed section header: " + t);
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value: " + t);
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    }
    cfg.values_[section][key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  if (s == values_.end()) missing(section, key);
  const auto k = s->second.find(key);
  if (k == s->second.end()) missing(section, key);
  return k->second;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  return has(section, key) ? get_string(section, key) : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key) const {
  return to_double(section, key, get_string(section, key));
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

long ConfigFile::get_long(const std::string& section, const std::string& key) const {
  return to_long(section, key, get_string(section, key));
}

long ConfigFile::get_long(const std::string& section, const std::string& key,
                          long fallback) const {
  return has(section, key) ? get_long(section, key) : fallback;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  std::string v = get_string(section, key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw std::runtime_error("config key [" + section + "] " + key + ": not a boolean: " + v);
}

std::vector<double> ConfigFile::get_double_list(const std::string& section, const std::string& key,
                                                const std::vector<double>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<double> out;
  for (const auto& part : split_commas(get_string(section, key))) {
    out.push_back(to_double(section, key, part));
  }
  return out.empty() ? fallback : out;
}

std::vector<long> ConfigFile::get_long_list(const std::string& section, const std::string& key,
                                            const std::vector<long>& fallback) const {
  if (!has(section, key)) return fallback;
  std::vector<long> out;
  for (const auto& part : split_commas(get_string(section, key))) {
    out.push_back(to_long(section, key, part));
  }
  return out.empty() ? fallback : out;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  values_[section][key] = value;
}

std::vector<std::string> ConfigFile::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : values_) out.push_back(name);
  return out;
}

std::vector<std::string> ConfigFile::keys(const std::string& section) const {
  std::vector<std::string> out;
  const auto s = values_.find(section);
  if (s == values_.end()) return out;
  for (const auto& [key, _] : s->second) out.push_back(key);
  return out;
}

std::string ConfigFile::serialize() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [name, entries] : values_) {
    if (!first) out << "\n";
    first = false;
    if (!name.empty()) out << "[" << name << "]\n";
    for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
  }
  return out.str();
}

}  // namespace chainsgd
