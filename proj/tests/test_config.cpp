#include <fstream>

#include "doctest.h"
#include "femagents/config.hpp"
#include "temp_dir.hpp"

using namespace femagents;

TEST_SUITE("config") {

TEST_CASE("parses key-value lines with comments and blanks") {
  Config cfg = Config::from_string(
      "# leading comment\n"
      "n_runs = 40\n"
      "\n"
      "query= q2_planner   # trailing comment\n"
      "  backend.kind =scripted\n");
  CHECK(cfg.get_int("n_runs", 0) == 40);
  CHECK(cfg.get_string("query") == "q2_planner");
  CHECK(cfg.get_string("backend.kind") == "scripted");
  CHECK_FALSE(cfg.has("missing"));
}

TEST_CASE("typed getters convert and fall back") {
  Config cfg = Config::from_string(
      "temp = 0.25\nflag_on = true\nflag_off = no\nbig = 18446744073709551615\n");
  CHECK(cfg.get_double("temp", 0.0) == doctest::Approx(0.25));
  CHECK(cfg.get_double("absent", 1.5) == doctest::Approx(1.5));
  CHECK(cfg.get_bool("flag_on", false));
  CHECK_FALSE(cfg.get_bool("flag_off", true));
  CHECK(cfg.get_bool("absent", true));
  CHECK(cfg.get_uint64("big", 0) == 18446744073709551615ULL);
}

TEST_CASE("malformed input raises ConfigError") {
  CHECK_THROWS_AS(Config::from_string("not a key value line\n"), ConfigError);
  CHECK_THROWS_AS(Config::from_string("= value\n"), ConfigError);
  Config cfg = Config::from_string("x = abc\n");
  CHECK_THROWS_AS(cfg.get_int("x", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_double("x", 0.0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("x", false), ConfigError);
}

TEST_CASE("from_file round trips and reports missing files") {
  femagents::testing::TempDir dir;
  auto file = dir.path / "exp.cfg";
  {
    std::ofstream out(file);
    out << "seed = 7\nlevel = L2\n";
  }
  Config cfg = Config::from_file(file);
  CHECK(cfg.get_uint64("seed", 0) == 7);
  CHECK(cfg.get_string("level") == "L2");
  CHECK_THROWS_AS(Config::from_file(dir.path / "nope.cfg"), ConfigError);
}

}  // TEST_SUITE
