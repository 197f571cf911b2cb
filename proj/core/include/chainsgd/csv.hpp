#pragma once

#include <string>
#include <vector>

namespace chainsgd {

/// Version string stamped into every CSV header comment.
const char* tool_version();

/*! Minimal CSV emitter with a schema-versioned header.
 *
 *  The first line is `# schema=<name>/<version> tool=chainsgd-<version>`,
 *  the second the column names. Numbers are rendered with %.17g so equal
 *  doubles always produce equal bytes; no timestamps, hostnames, or paths
 *  ever enter the output.
 */
class CsvWriter {
 public:
  CsvWriter(std::string schema_name, int schema_version, std::vector<std::string> columns);

  void row(const std::vector<std::string>& cells);

  static std::string num(double v);
  static std::string integer(long v);

  const std::string& text() const { return out_; }
  /// Writes the accumulated text to `dir/name`, creating `dir` if needed.
  void save(const std::string& dir, const std::string& name) const;

 private:
  std::size_t columns_ = 0;
  std::string out_;
};

}  // namespace chainsgd
