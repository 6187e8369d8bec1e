#include "testing.hpp"

#include <cstdlib>
#include <fstream>

#include "startrain/config.hpp"

using namespace startrain;

TEST_CASE("config layering: file then override then env var") {
  testutil::TempDir tmp("cfg");
  std::ofstream f(tmp / "a.cfg");
  f << "# comment line\n";
  f << "run.seed = 11\n";
  f << "\n";
  f << "bc.lr = 0.5\n";
  f << "env.world_size = 24\n";
  f.close();

  RunConfig cfg;
  cfg.apply_file(tmp / "a.cfg");
  CHECK(cfg.seed == 11);
  CHECK(cfg.bc.lr == doctest::Approx(0.5));
  CHECK(cfg.env.world_size == 24);

  cfg.apply_override("run.seed", "22");
  cfg.apply_override("env.world_size", " 32 ");
  CHECK(cfg.seed == 22);
  CHECK(cfg.env.world_size == 32);

  setenv("STARTRAIN_SEED", "33", 1);
  setenv("STARTRAIN_RUN_DIR", "/tmp/elsewhere", 1);
  cfg.apply_env_vars();
  unsetenv("STARTRAIN_SEED");
  unsetenv("STARTRAIN_RUN_DIR");
  CHECK(cfg.seed == 33);
  CHECK(cfg.run_dir == "/tmp/elsewhere");
}

TEST_CASE("config rejects unknown keys and bad values") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.apply_override("nope.x", "1"), ConfigError);
  CHECK_THROWS_WITH(cfg.apply_override("nope.x", "1"), "unknown config key: nope.x");
  CHECK_THROWS_AS(cfg.apply_line("just words"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("env.world_size", "abc"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("env.world_size", "12junk"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("bc.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("ppo.advantage_norm", "maybe"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file("/no/such/file.cfg"), ConfigError);

  setenv("STARTRAIN_SEED", "junk", 1);
  CHECK_THROWS_AS(cfg.apply_env_vars(), ConfigError);
  unsetenv("STARTRAIN_SEED");

  cfg.apply_override("ppo.advantage_norm", "true");
  CHECK(cfg.ppo.advantage_norm);
  cfg.apply_override("ppo.advantage_norm", "0");
  CHECK(!cfg.ppo.advantage_norm);
}

TEST_CASE("resolved text round-trips through apply_line") {
  RunConfig cfg;
  cfg.seed = 99;
  cfg.ppo.objective = "clipped_only";
  cfg.bc.heldout_frac = 0.25;

  RunConfig other;
  std::istringstream in(cfg.resolved_text());
  std::string line;
  while (std::getline(in, line)) other.apply_line(line);
  CHECK(other.seed == 99);
  CHECK(other.ppo.objective == "clipped_only");
  CHECK(other.bc.heldout_frac == doctest::Approx(0.25));
  CHECK(other.resolved_text() == cfg.resolved_text());
}

TEST_CASE("run dir layout") {
  testutil::TempDir tmp("rundir");
  RunConfig cfg = testutil::tiny_config();
  cfg.run_dir = (tmp / "r1").string();
  cfg.write_run_dir();
  CHECK(std::filesystem::exists(tmp / "r1" / "config.resolved"));
  CHECK(std::filesystem::exists(tmp / "r1" / "run_meta.txt"));
  std::string resolved = read_text_file(tmp / "r1" / "config.resolved");
  CHECK(resolved == cfg.resolved_text());
}

TEST_CASE("csv splitting") {
  CHECK(split_csv("a,b,c") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_csv(" a , b ") == std::vector<std::string>{"a", "b"});
  CHECK(split_csv("one") == std::vector<std::string>{"one"});
  CHECK(split_csv("") == std::vector<std::string>{});
}

TEST_CASE("schema derives from env settings") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema s = cfg.make_schema();
  CHECK(s.features.screen_size == 16);
  CHECK(s.features.minimap_size == 16);
  CHECK(s.delay.count() == 16);
  CHECK(s.delay.ticks.back() == 16);
  CHECK(s.num_actions() == act::kCount);
}
