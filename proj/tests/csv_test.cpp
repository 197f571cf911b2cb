#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chainsgd/csv.hpp"

using namespace chainsgd;

TEST_CASE("header carries schema and tool versions") {
  CsvWriter csv("trace", 2, {"a", "b"});
  const std::string expected_first =
      std::string("# schema=trace/2 tool=chainsgd-") + tool_version();
  std::istringstream in(csv.text());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == expected_first);
  REQUIRE(std::getline(in, line));
  CHECK(line == "a,b");
}

TEST_CASE("doubles are rendered with full precision") {
  CHECK(CsvWriter::num(0.1) == "0.10000000000000001");
  CHECK(CsvWriter::num(1.0) == "1");
  // Round trip: parse back to the identical double.
  for (double value : {0.30000000000000004, -2.5e-17, 1e300, -0.0}) {
    double parsed = 1.0;
    std::sscanf(CsvWriter::num(value).c_str(), "%lf", &parsed);
    CHECK(parsed == value);
  }
}

TEST_CASE("row width is enforced and cells are escaped") {
  CsvWriter csv("t", 1, {"x", "y"});
  CHECK_THROWS(csv.row({"only one"}));
  csv.row({"plain", "with,comma"});
  csv.row({"quote\"inside", "fine"});
  std::istringstream in(csv.text());
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line == "plain,\"with,comma\"");
  std::getline(in, line);
  CHECK(line == "\"quote\"\"inside\",fine");
}

TEST_CASE("save writes the exact accumulated bytes") {
  CsvWriter csv("t", 1, {"v"});
  csv.row({CsvWriter::num(0.5)});
  const std::string dir = "csv_test_out";
  csv.save(dir, "probe.csv");
  std::ifstream in(std::filesystem::path(dir) / "probe.csv", std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  CHECK(buffer.str() == csv.text());
  std::filesystem::remove_all(dir);
}
