#include <numeric>

#include "testing.hpp"

using namespace startrain;
using env::ReplayEvent;

namespace {

ReplayEvent ev(int tick, int action_id, std::optional<Point2i> minimap = std::nullopt) {
  ReplayEvent e;
  e.tick = tick;
  e.action.action_id = action_id;
  e.action.delay_bucket = 0;
  if (minimap) e.action.minimap = minimap;
  if (action_id == act::kSelectArmy || action_id == act::kStop) e.action.queued = 0;
  return e;
}

}  // namespace

TEST_CASE("strip_noops removes exactly the no-op events") {
  ActionSchema s = make_minirts_schema();
  std::vector<ReplayEvent> events = {ev(0, act::kNoOp), ev(2, act::kSelectArmy),
                                     ev(5, act::kNoOp), ev(6, act::kStop), ev(9, act::kNoOp)};
  auto out = strip_noops(events, s);
  REQUIRE(out.size() == 2);
  CHECK(out[0].tick == 2);
  CHECK(out[0].action.action_id == act::kSelectArmy);
  CHECK(out[1].tick == 6);
  CHECK(out[1].action.action_id == act::kStop);
  // order and non-noop payloads are untouched
  auto again = strip_noops(out, s);
  CHECK(again.size() == out.size());
}

TEST_CASE("camera chains collapse to their final target at the first tick") {
  ActionSchema s = make_minirts_schema();
  std::vector<ReplayEvent> events = {
      ev(0, act::kMoveCamera, Point2i{1, 1}), ev(2, act::kMoveCamera, Point2i{2, 2}),
      ev(3, act::kMoveCamera, Point2i{3, 3}), ev(5, act::kSelectArmy),
      ev(7, act::kMoveCamera, Point2i{4, 4}), ev(9, act::kStop),
      ev(11, act::kMoveCamera, Point2i{5, 5})};
  auto out = collapse_camera_chains(events, s);
  REQUIRE(out.size() == 5);
  CHECK(out[0].tick == 0);
  CHECK(*out[0].action.minimap == Point2i{3, 3});  // last target of the run
  CHECK(out[1].action.action_id == act::kSelectArmy);
  CHECK(out[2].tick == 7);
  CHECK(*out[2].action.minimap == Point2i{4, 4});  // singleton runs stay put
  CHECK(out[4].tick == 11);
  CHECK(*out[4].action.minimap == Point2i{5, 5});

  // idempotent: a second pass changes nothing
  auto twice = collapse_camera_chains(out, s);
  REQUIRE(twice.size() == out.size());
  for (size_t i = 0; i < out.size(); ++i) {
    CHECK(twice[i].tick == out[i].tick);
    CHECK(twice[i].action == out[i].action);
  }
}

TEST_CASE("supervised targets conserve duration") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  ReplayLog log = testutil::record_game(cfg, 21, env::OpponentLevel::kEasy,
                                        env::OpponentLevel::kVeryEasy);
  auto targets = build_targets(log.events, schema, log.meta.end_tick);
  REQUIRE(!targets.empty());

  int64_t total = 0;
  for (const TargetStep& t : targets) {
    CHECK(t.raw_delay >= 1);
    CHECK(t.action.delay_bucket == schema.delay.bucket_of(t.raw_delay));
    CHECK(t.action.action_id != act::kNoOp);
    total += t.raw_delay;
  }
  CHECK(total == log.meta.end_tick - targets.front().tick);

  // ticks strictly increase, so no gap was clamped away
  for (size_t i = 1; i < targets.size(); ++i) CHECK(targets[i].tick > targets[i - 1].tick);
}

TEST_CASE("replay logs round-trip through jsonl") {
  RunConfig cfg = testutil::tiny_config();
  ReplayLog log = testutil::record_game(cfg, 33, env::OpponentLevel::kMedium,
                                        env::OpponentLevel::kVeryEasy);
  std::string text = log.to_jsonl();
  ReplayLog back = ReplayLog::from_jsonl(text);
  CHECK(back.to_jsonl() == text);
  CHECK(back.meta.seed == log.meta.seed);
  CHECK(back.meta.end_state_hash == log.meta.end_state_hash);
  CHECK(back.events.size() == log.events.size());

  SUBCASE("truncation is detected") {
    size_t cut = text.rfind("\n", text.size() - 2);  // drop the footer line
    CHECK_THROWS_AS(ReplayLog::from_jsonl(text.substr(0, cut + 1)), SchemaError);
  }
  SUBCASE("garbage is rejected") {
    CHECK_THROWS_AS(ReplayLog::from_jsonl("{\"kind\":\"wat\"}\n"), SchemaError);
    CHECK_THROWS_AS(ReplayLog::from_jsonl("not json\n"), SchemaError);
    CHECK_THROWS_AS(ReplayLog::from_jsonl(""), SchemaError);
  }
  SUBCASE("events must stay ordered") {
    std::string bad = text;
    // swap two event lines
    size_t p1 = bad.find("\"kind\": \"event\"");
    if (p1 == std::string::npos) p1 = bad.find("\"kind\":\"event\"");
    REQUIRE(p1 != std::string::npos);
    size_t l1s = bad.rfind('\n', p1) + 1;
    size_t l1e = bad.find('\n', p1);
    size_t p2 = bad.find("\"kind\"", l1e);
    size_t l2e = bad.find('\n', p2);
    std::string line1 = bad.substr(l1s, l1e - l1s);
    std::string line2 = bad.substr(l1e + 1, l2e - l1e - 1);
    if (line2.find("\"event\"") != std::string::npos) {
      bad = bad.substr(0, l1s) + line2 + "\n" + line1 + bad.substr(l2e);
      // only out of order when the ticks actually differ
      if (line1 != line2) CHECK_THROWS_AS(ReplayLog::from_jsonl(bad), SchemaError);
    }
  }
}

TEST_CASE("replay filters") {
  FilterConfig fc;  // min_mmr 2500, mini_acropolis_64, 480 ticks, alpha
  ReplayMeta m;
  m.player_race = "alpha";
  m.player_mmr = 3000;
  m.map_name = "mini_acropolis_64";
  m.end_tick = 1000;
  CHECK(!filter_reason(m, fc));

  SUBCASE("mmr boundary is strict") {
    m.player_mmr = 2500;
    REQUIRE(filter_reason(m, fc));
    CHECK(filter_reason(m, fc)->find("mmr") == 0);
    m.player_mmr = 2501;
    CHECK(!filter_reason(m, fc));
  }
  SUBCASE("race") {
    m.player_race = "beta";
    REQUIRE(filter_reason(m, fc));
    CHECK(filter_reason(m, fc)->find("race") == 0);
  }
  SUBCASE("map") {
    m.map_name = "other_map";
    REQUIRE(filter_reason(m, fc));
    CHECK(filter_reason(m, fc)->find("map") == 0);
  }
  SUBCASE("length boundary is strict") {
    m.end_tick = 480;
    REQUIRE(filter_reason(m, fc));
    CHECK(filter_reason(m, fc)->find("too short") == 0);
    m.end_tick = 481;
    CHECK(!filter_reason(m, fc));
  }
}

TEST_CASE("mmr buckets") {
  CHECK(mmr_to_bucket(0) == 0);
  CHECK(mmr_to_bucket(2499) == 0);
  CHECK(mmr_to_bucket(2500) == 1);
  CHECK(mmr_to_bucket(2999) == 1);
  CHECK(mmr_to_bucket(3000) == 2);
  CHECK(mmr_to_bucket(3700) == 3);
  CHECK(mmr_to_bucket(4000) == 4);
  CHECK(mmr_to_bucket(4500) == 5);
  CHECK(mmr_to_bucket(9000) == kMmrBuckets - 1);
}

TEST_CASE("build orders pad with the null id and truncate at length") {
  std::vector<int32_t> shortlog = {3, 4, 4};
  auto bo = extract_build_order(shortlog);
  CHECK(bo[0] == 3);
  CHECK(bo[2] == 4);
  for (int i = 3; i < kBuildOrderLen; ++i) CHECK(bo[size_t(i)] == 0);

  std::vector<int32_t> longlog(kBuildOrderLen + 7, 2);
  longlog[0] = 5;
  auto bo2 = extract_build_order(longlog);
  CHECK(bo2[0] == 5);
  CHECK(bo2[kBuildOrderLen - 1] == 2);
}

TEST_CASE("re-simulation reproduces the recorded game") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  env::EnvConfig env_cfg = arena::env_config_from(cfg);
  ReplayLog log = testutil::record_game(cfg, 55, env::OpponentLevel::kEasy,
                                        env::OpponentLevel::kVeryEasy);

  ResimResult rr = resimulate(log, schema, env_cfg);
  CHECK(rr.hash_ok);
  CHECK(rr.final_hash == log.meta.end_state_hash);
  CHECK(rr.final_tick == log.meta.end_tick);

  auto targets = build_targets(log.events, schema, log.meta.end_tick);
  REQUIRE(rr.frames.size() == targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    CHECK(rr.frames[i].target == targets[i].action);
    CHECK(rr.frames[i].raw_delay == targets[i].raw_delay);
  }

  // conditioning came from the game: the expert built things, so the build
  // order is non-empty and every slot is a valid type id
  CHECK(rr.build_order[0] != 0);
  for (int32_t t : rr.build_order) {
    CHECK(t >= 0);
    CHECK(t < env::kNumUnitTypes);
  }

  // a tampered footer hash is noticed
  ReplayLog bad = log;
  bad.meta.end_state_hash ^= 1;
  ResimResult rr2 = resimulate(bad, schema, env_cfg);
  CHECK(!rr2.hash_ok);
}
