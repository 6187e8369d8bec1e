#include "testing.hpp"

#include <algorithm>

#include "startrain/schema.hpp"

using namespace startrain;

namespace {
std::vector<uint8_t> all_available(const ActionSchema& s) {
  return std::vector<uint8_t>(size_t(s.num_actions()), 1);
}
}  // namespace

TEST_CASE("bundled action table") {
  ActionSchema s = make_minirts_schema();
  REQUIRE(s.num_actions() == act::kCount);

  auto params_of = [&](const char* name) {
    int id = s.find_action(name);
    REQUIRE(id >= 0);
    return s.actions[size_t(id)].params;
  };

  // every action's parameter list starts with the delay slot
  for (const ActionDef& d : s.actions) {
    REQUIRE(!d.params.empty());
    CHECK(d.params.front() == Param::kDelay);
  }

  CHECK(params_of("no_op") == std::vector<Param>{Param::kDelay});
  CHECK(params_of("move_camera") == std::vector<Param>{Param::kDelay, Param::kMinimap});
  CHECK(params_of("select_point") ==
        std::vector<Param>{Param::kDelay, Param::kQueued, Param::kScreen1, Param::kSelectModifier});
  CHECK(params_of("select_rect") ==
        std::vector<Param>{Param::kDelay, Param::kQueued, Param::kScreen1, Param::kScreen2,
                           Param::kSelectModifier});
  CHECK(params_of("select_army") == std::vector<Param>{Param::kDelay, Param::kQueued});
  CHECK(params_of("select_control_group") ==
        std::vector<Param>{Param::kDelay, Param::kControlGroupId, Param::kControlGroupOp});
  for (const char* name : {"move_screen", "attack_screen", "gather_screen", "build_barracks",
                           "build_base"})
    CHECK(params_of(name) == std::vector<Param>{Param::kDelay, Param::kQueued, Param::kScreen1});
  for (const char* name : {"move_minimap", "attack_minimap"})
    CHECK(params_of(name) == std::vector<Param>{Param::kDelay, Param::kQueued, Param::kMinimap});
  for (const char* name : {"train_worker", "train_soldier", "stop"})
    CHECK(params_of(name) == std::vector<Param>{Param::kDelay, Param::kQueued});

  // stable well-known ids
  CHECK(s.find_action("no_op") == act::kNoOp);
  CHECK(s.find_action("move_camera") == act::kMoveCamera);
  CHECK(s.find_action("select_rect") == act::kSelectRect);
  CHECK(s.find_action("train_soldier") == act::kTrainSoldier);
  CHECK(s.find_action("stop") == act::kStop);
  CHECK(s.find_action("not_an_action") == -1);
  CHECK_THROWS_AS(s.action(-1), SchemaError);
  CHECK_THROWS_AS(s.action(act::kCount), SchemaError);
  CHECK_THROWS_AS(required_params(s, 99), SchemaError);
  CHECK(required_params(s, act::kMoveCamera) ==
        std::vector<Param>{Param::kDelay, Param::kMinimap});
}

TEST_CASE("schema json round trip is bit exact") {
  ActionSchema s = make_minirts_schema();
  std::string j = s.to_json();
  ActionSchema back = ActionSchema::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.hash() == s.hash());
  CHECK(back.num_actions() == s.num_actions());
  CHECK(back.features.screen.size() == s.features.screen.size());
  CHECK(back.delay.ticks == s.delay.ticks);

  // a different geometry gives a different hash
  MiniRtsSchemaConfig small;
  small.screen_size = 16;
  small.minimap_size = 16;
  small.delay_buckets = 16;
  small.max_delay_ticks = 16;
  CHECK(make_minirts_schema(small).hash() != s.hash());

  CHECK_THROWS_AS(ActionSchema::from_json("not json"), SchemaError);
  CHECK_THROWS_AS(ActionSchema::from_json("{}"), SchemaError);
  CHECK_THROWS_AS(ActionSchema::from_json(j.substr(0, j.size() / 2)), SchemaError);
}

TEST_CASE("delay buckets") {
  // count == max: the table is exactly 1..max
  DelayBuckets dense = DelayBuckets::geometric(16, 16);
  REQUIRE(dense.count() == 16);
  for (int i = 0; i < 16; ++i) CHECK(dense.ticks_of(i) == i + 1);

  DelayBuckets sparse = DelayBuckets::geometric(32, 128);
  REQUIRE(sparse.count() == 32);
  CHECK(sparse.ticks.front() == 1);
  CHECK(sparse.ticks.back() == 128);
  for (int i = 1; i < sparse.count(); ++i) CHECK(sparse.ticks[size_t(i)] > sparse.ticks[size_t(i) - 1]);

  // bucket_of inverts ticks_of exactly
  for (int b = 0; b < sparse.count(); ++b) CHECK(sparse.bucket_of(sparse.ticks_of(b)) == b);

  // floor semantics: raw maps to the largest bucket with ticks <= raw
  for (int raw = 1; raw <= 128; ++raw) {
    int b = sparse.bucket_of(raw);
    CHECK(sparse.ticks_of(b) <= raw);
    if (b + 1 < sparse.count()) CHECK(sparse.ticks_of(b + 1) > raw);
  }

  // clamping at both ends
  CHECK(sparse.bucket_of(0) == 0);
  CHECK(sparse.bucket_of(-5) == 0);
  CHECK(sparse.bucket_of(100000) == sparse.count() - 1);

  CHECK_THROWS_AS(DelayBuckets::geometric(0, 16), SchemaError);
  CHECK_THROWS_AS(sparse.ticks_of(32), SchemaError);
}

TEST_CASE("action validation") {
  ActionSchema s = make_minirts_schema();
  std::vector<uint8_t> avail = all_available(s);

  HierarchicalAction camera;
  camera.action_id = act::kMoveCamera;
  camera.minimap = Point2i{3, 5};
  CHECK(validate_action(s, camera, avail).empty());

  SUBCASE("masked-off action") {
    avail[size_t(act::kMoveCamera)] = 0;
    auto v = validate_action(s, camera, avail);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation::kUnavailable);
  }

  SUBCASE("unknown id is unavailable") {
    HierarchicalAction bad;
    bad.action_id = 999;
    auto v = validate_action(s, bad, avail);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation::kUnavailable);
  }

  SUBCASE("missing parameter") {
    HierarchicalAction a;
    a.action_id = act::kAttackScreen;  // needs queued + screen1
    a.queued = 0;
    auto v = validate_action(s, a, avail);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation::kMissingParam);
  }

  SUBCASE("extra parameter") {
    HierarchicalAction a = camera;
    a.control_group_id = 2;
    auto v = validate_action(s, a, avail);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation::kExtraParam);
  }

  SUBCASE("point outside the grid") {
    HierarchicalAction a = camera;
    a.minimap = Point2i{0, s.features.minimap_size};
    auto v = validate_action(s, a, avail);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation::kOutOfGrid);

    a.minimap = Point2i{-1, 0};
    CHECK(validate_action(s, a, avail) == std::vector<Violation>{Violation::kOutOfGrid});
  }

  SUBCASE("scalar ranges") {
    HierarchicalAction a;
    a.action_id = act::kSelectControlGroup;
    a.control_group_id = 10;
    a.control_group_op = 1;
    CHECK(validate_action(s, a, avail) == std::vector<Violation>{Violation::kOutOfGrid});
    a.control_group_id = 9;
    a.control_group_op = 3;
    CHECK(validate_action(s, a, avail) == std::vector<Violation>{Violation::kOutOfGrid});
    a.control_group_op = 2;
    CHECK(validate_action(s, a, avail).empty());
    a.delay_bucket = s.delay.count();
    CHECK(validate_action(s, a, avail) == std::vector<Violation>{Violation::kOutOfGrid});
  }

  SUBCASE("several problems are all reported") {
    HierarchicalAction a;
    a.action_id = act::kSelectRect;  // needs queued, screen1, screen2, modifier
    a.screen1 = Point2i{-2, 1};
    a.minimap = Point2i{0, 0};
    avail[size_t(act::kSelectRect)] = 0;
    auto v = validate_action(s, a, avail);
    CHECK(std::count(v.begin(), v.end(), Violation::kUnavailable) == 1);
    CHECK(std::count(v.begin(), v.end(), Violation::kMissingParam) == 3);
    CHECK(std::count(v.begin(), v.end(), Violation::kExtraParam) == 1);
    CHECK(std::count(v.begin(), v.end(), Violation::kOutOfGrid) == 1);
  }
}

TEST_CASE("reward bookkeeping") {
  RewardBreakdown r;
  r.kill_building_value = 400;  // razing a 400-cost building
  CHECK(r.shaped()[2] == doctest::Approx(0.04).epsilon(1e-12));

  r = RewardBreakdown{};
  r.minerals_collected = 8;  // one carry load
  CHECK(r.shaped()[3] == doctest::Approx(0.00008).epsilon(1e-12));

  r = RewardBreakdown{};
  r.game_result = 1;
  r.kill_unit_value = 100;
  r.vespene_collected = 4;
  double expect = 1.0 + 100 * RewardBreakdown::kKillUnitCoef + 4 * RewardBreakdown::kVespeneCoef;
  CHECK(r.total() == doctest::Approx(expect).epsilon(1e-12));

  RewardBreakdown a, b;
  a.minerals_collected = 8;
  a.kill_unit_value = 50;
  b.minerals_collected = 16;
  b.game_result = -1;
  a += b;
  CHECK(a.minerals_collected == 24);
  CHECK(a.kill_unit_value == 50);
  CHECK(a.game_result == -1);

  CHECK(reward_component_names().size() == RewardBreakdown::kNumComponents);
  CHECK(reward_component_names()[0] == "result");
  CHECK(reward_component_names()[2] == "kill_building");
}
