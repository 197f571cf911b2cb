#include <doctest.h>

#include "chainsgd/configfile.hpp"

using namespace chainsgd;

TEST_CASE("parses sections, comments, and typed values") {
  const ConfigFile cfg = ConfigFile::parse_string(
      "# top comment\n"
      "[dataset]\n"
      "dimension = 10\n"
      "rho = 0.1\n"
      "\n"
      "; alt comment\n"
      "[run]\n"
      "mode = stochastic\n"
      "steps = 1e-1, 3e-2 , 1e-2\n"
      "verbose = true\n");
  CHECK(cfg.get_long("dataset", "dimension") == 10);
  CHECK(cfg.get_double("dataset", "rho") == 0.1);
  CHECK(cfg.get_string("run", "mode") == "stochastic");
  CHECK(cfg.get_bool("run", "verbose", false));
  const auto steps = cfg.get_double_list("run", "steps", {});
  REQUIRE(steps.size() == 3);
  CHECK(steps[0] == 0.1);
  CHECK(steps[2] == 0.01);
}

TEST_CASE("fallbacks and missing keys") {
  const ConfigFile cfg = ConfigFile::parse_string("[a]\nx = 1\n");
  CHECK(cfg.get_long("a", "x", 9) == 1);
  CHECK(cfg.get_long("a", "y", 9) == 9);
  CHECK(cfg.get_double("b", "z", 2.5) == 2.5);
  CHECK_THROWS(cfg.get_long("a", "y"));
  CHECK_THROWS(cfg.get_string("missing", "key"));
  CHECK_FALSE(cfg.has("a", "y"));
  CHECK(cfg.has("a", "x"));
}

TEST_CASE("malformed input is rejected with a line number") {
  CHECK_THROWS(ConfigFile::parse_string("[unclosed\nx = 1\n"));
  CHECK_THROWS(ConfigFile::parse_string("just some text\n"));
  CHECK_THROWS(ConfigFile::parse_string("= value\n"));
  const ConfigFile cfg = ConfigFile::parse_string("[a]\nx = abc\n");
  CHECK_THROWS(cfg.get_double("a", "x"));
  CHECK_THROWS(cfg.get_long("a", "x"));
  const ConfigFile booled = ConfigFile::parse_string("[a]\nflag = maybe\n");
  CHECK_THROWS(booled.get_bool("a", "flag", false));
}

TEST_CASE("serialize followed by parse is the identity") {
  ConfigFile cfg;
  cfg.set("dataset", "dimension", "10");
  cfg.set("run", "step_size", "0.01");
  cfg.set("run", "mode", "full");
  const std::string text = cfg.serialize();
  const ConfigFile back = ConfigFile::parse_string(text);
  CHECK(back.serialize() == text);
  CHECK(back.get_long("dataset", "dimension") == 10);
  CHECK(back.get_string("run", "mode") == "full");
}

TEST_CASE("keys and sections enumerate sorted") {
  ConfigFile cfg;
  cfg.set("b", "k2", "1");
  cfg.set("b", "k1", "2");
  cfg.set("a", "x", "3");
  const auto sections = cfg.sections();
  REQUIRE(sections.size() == 2);
  CHECK(sections[0] == "a");
  CHECK(sections[1] == "b");
  const auto keys = cfg.keys("b");
  REQUIRE(keys.size() == 2);
  CHECK(keys[0] == "k1");
}
