#include "chainsgd/csv.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace chainsgd {

const char* tool_version() { return "0.1.0"; }

namespace {

std::string escape(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

CsvWriter::CsvWriter(std::string schema_name, int schema_version,
                     std::vector<std::string> columns)
    : columns_(columns.size()) {
  out_ = "# schema=" + schema_name + "/" + std::to_string(schema_version) +
         " tool=chainsgd-" + tool_version() + "\n";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out_ += ',';
    out_ += escape(columns[i]);
  }
  out_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_) throw std::invalid_argument("csv row width mismatch");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ += ',';
    out_ += escape(cells[i]);
  }
  out_ += '\n';
}

std::string CsvWriter::num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string CsvWriter::integer(long v) { return std::to_string(v); }

void CsvWriter::save(const std::string& dir, const std::string& name) const {
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = std::filesystem::path(dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << out_;
}

}  // namespace chainsgd
