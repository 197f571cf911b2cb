#pragma once

#include <map>
#include <string>
#include <vector>

namespace chainsgd {

/*! Flat key-value configuration with [section] headers.
 *
 *  Lines are `key = value`, blank, or `#` comments. Keys before any header
 *  land in the unnamed section "". Unknown keys are preserved; lookups are
 *  typed and either fall back to a supplied default or throw when the key is
 *  required but absent.
 */
class ConfigFile {
 public:
  static ConfigFile parse_string(const std::string& text);
  static ConfigFile parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long get_long(const std::string& section, const std::string& key) const;
  long get_long(const std::string& section, const std::string& key, long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  /// Comma-separated list of numbers; empty or missing key gives fallback.
  std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<long> get_long_list(const std::string& section, const std::string& key,
                                  const std::vector<long>& fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;

  /// Canonical text form: sections and keys in sorted order.
  std::string serialize() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace chainsgd
