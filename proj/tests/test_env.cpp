#include <set>

#include "testing.hpp"

using namespace startrain;
using namespace startrain::env;

namespace {

RunConfig mid_config() {
  RunConfig cfg = testutil::tiny_config();
  cfg.env.world_size = 32;
  cfg.env.camera_size = 16;
  cfg.env.screen_size = 32;
  cfg.env.minimap_size = 32;
  cfg.env.max_ticks = 3000;
  cfg.env.draw_ticks = 400;
  return cfg;
}

HierarchicalAction noop(int delay_bucket = 0) {
  HierarchicalAction a;
  a.action_id = act::kNoOp;
  a.delay_bucket = delay_bucket;
  return a;
}

}  // namespace

TEST_CASE("opponent levels and races") {
  CHECK(opponent_level_from_name("very_easy") == OpponentLevel::kVeryEasy);
  CHECK(opponent_level_from_name("hard") == OpponentLevel::kHard);
  CHECK(std::string(opponent_level_name(OpponentLevel::kMedium)) == "medium");
  CHECK_THROWS_AS(opponent_level_from_name("impossible"), ConfigError);
  int prev = 0;
  for (auto lvl : {OpponentLevel::kVeryEasy, OpponentLevel::kEasy, OpponentLevel::kMedium,
                   OpponentLevel::kHard}) {
    CHECK(opponent_army_cap(lvl) > prev);
    prev = opponent_army_cap(lvl);
  }
  CHECK(race_from_name("gamma") == Race::kGamma);
  CHECK(std::string(race_name(Race::kBeta)) == "beta");
  CHECK_THROWS_AS(race_from_name("zerg"), ConfigError);
}

TEST_CASE("same seed reproduces the same game bit for bit") {
  RunConfig cfg = testutil::tiny_config();
  ReplayLog a = testutil::record_game(cfg, 31, OpponentLevel::kEasy, OpponentLevel::kVeryEasy);
  ReplayLog b = testutil::record_game(cfg, 31, OpponentLevel::kEasy, OpponentLevel::kVeryEasy);
  CHECK(a.meta.end_state_hash == b.meta.end_state_hash);
  CHECK(a.meta.end_tick == b.meta.end_tick);
  CHECK(a.to_jsonl() == b.to_jsonl());
}

TEST_CASE("different seeds give different maps") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  std::set<uint64_t> hashes;
  for (uint64_t s = 1; s <= 6; ++s) {
    e.reset(s, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);
    hashes.insert(e.state_hash());
  }
  CHECK(hashes.size() > 1);

  // and the same seed twice gives the same observation
  FeatureObservation o1 = e.reset(3, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);
  FeatureObservation o2 = e.reset(3, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);
  CHECK(o1.content_hash() == o2.content_hash());
  CHECK(o1 == o2);
}

TEST_CASE("reset observation: fog, conditioning defaults, masks") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  FeatureObservation obs = e.reset(5, OpponentLevel::kEasy, Race::kAlpha, Race::kBeta);

  const int M = schema.features.minimap_size;
  REQUIRE(int(obs.minimap.size()) == int(schema.features.minimap.size()) * M * M);
  // minimap layer 0 is visibility; the world maps 1:1 onto it here
  Point2i own = e.world().player(0).start_base;
  CHECK(obs.minimap[size_t(own.r) * M + own.c] == 2);
  // the far corner is beyond every starting unit's sight
  CHECK(obs.minimap[size_t(M - 1) * M + (M - 1)] == 0);
  // screen shows the agent's home region
  int visible = 0;
  const int S = schema.features.screen_size;
  for (int i = 0; i < S * S; ++i) visible += obs.screen[size_t(i)] == 2;
  CHECK(visible > 0);

  CHECK(obs.mmr_bucket == kMmrBuckets - 1);
  for (int32_t v : obs.build_order) CHECK(v == 0);
  for (int32_t v : obs.control_groups_hint) CHECK(v == 0);
  CHECK(obs.prev_action == 0);
  CHECK(obs.game_loop == 0);

  REQUIRE(int(obs.available_actions.size()) == schema.num_actions());
  CHECK(obs.available_actions[act::kNoOp] == 1);
  CHECK(obs.available_actions[act::kMoveCamera] == 1);
  CHECK(obs.available_actions[act::kSelectPoint] == 1);
  CHECK(obs.available_actions[act::kAttackScreen] == 0);  // nothing selected
  CHECK(obs.available_actions[act::kTrainWorker] == 0);
  CHECK(obs.available_actions[act::kBuildBarracks] == 0);
}

TEST_CASE("selection gates production actions") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  e.reset(5, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);

  Point2i base = e.world().player(0).start_base;
  Point2i cam = e.world().player(0).camera;
  int f = cfg.env.screen_size / cfg.env.camera_size;
  HierarchicalAction sel;
  sel.action_id = act::kSelectPoint;
  sel.queued = 0;
  sel.select_modifier = 0;
  sel.screen1 = Point2i{(base.r - cam.r) * f, (base.c - cam.c) * f};
  StepResult r = e.step(sel);
  REQUIRE(r.status == StepStatus::kOk);
  CHECK(r.obs.available_actions[act::kTrainWorker] == 1);  // base selected, can afford
  CHECK(r.obs.available_actions[act::kTrainSoldier] == 0);
  CHECK(r.obs.available_actions[act::kBuildBarracks] == 0);  // a base is not a worker
  CHECK(r.obs.single_select.n == 1);
  CHECK(r.obs.prev_action == act::kSelectPoint);
}

TEST_CASE("rejected steps do not advance the game") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  e.reset(5, OpponentLevel::kEasy, Race::kAlpha, Race::kBeta);

  HierarchicalAction a;
  a.action_id = act::kTrainSoldier;  // masked: no barracks selected
  a.queued = 0;
  StepResult r = e.step(a);
  CHECK(r.status == StepStatus::kRejected);
  REQUIRE(!r.violations.empty());
  CHECK(r.violations[0] == Violation::kUnavailable);
  CHECK(e.tick() == 0);

  // malformed parameters are caught even for available actions
  HierarchicalAction cam;
  cam.action_id = act::kMoveCamera;  // missing minimap point
  r = e.step(cam);
  CHECK(r.status == StepStatus::kRejected);
  CHECK(r.violations == std::vector<Violation>{Violation::kMissingParam});
  CHECK(e.tick() == 0);

  // a legal action advances by exactly its delay
  StepResult ok = e.step(noop(4));
  CHECK(ok.status == StepStatus::kOk);
  CHECK(e.tick() == schema.delay.ticks_of(4));
}

TEST_CASE("gather events arrive in carry-load units") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  e.reset(9, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);
  ScriptedPolicy agent(OpponentLevel::kEasy, schema);
  RngStream rng(derive_seed(9, {fnv1a64("expert")}));

  const int carry_m = e.world().defs().worker_carry_minerals;
  const int carry_v = e.world().defs().worker_carry_vespene;
  bool saw_minerals = false, saw_vespene = false;
  for (int i = 0; i < 1500 && !e.done() && !(saw_minerals && saw_vespene); ++i) {
    StepResult r = e.step(agent.decide(e.world(), 0, rng));
    REQUIRE(r.status == StepStatus::kOk);
    if (r.reward.minerals_collected > 0) {
      int m = int(r.reward.minerals_collected);
      CHECK(m % carry_m == 0);
      saw_minerals = true;
    }
    if (r.reward.vespene_collected > 0) {
      int v = int(r.reward.vespene_collected);
      CHECK(v % carry_v == 0);
      saw_vespene = true;
    }
  }
  CHECK(saw_minerals);
  CHECK(saw_vespene);
}

TEST_CASE("kill credit equals the victim's build cost") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  World w(WorldConfig{cfg.env.world_size, cfg.env.camera_size, cfg.env.screen_size,
                      cfg.env.minimap_size, cfg.env.draw_ticks, cfg.env.max_ticks},
          WorldDefs::builtin());
  w.init(5, Race::kAlpha, Race::kBeta);

  int sid = w.spawn(1, UnitType::kSoldier, Point2i{8, 8});
  const UnitStats& bs = w.defs().stats[int(Race::kBeta)][int(UnitType::kSoldier)];
  w.deal_damage(0, sid, 10000);
  CHECK(w.player(0).step_events.kill_unit_value == doctest::Approx(bs.total_cost()));
  CHECK(w.player(1).lost_value == doctest::Approx(bs.total_cost()));

  int bid = w.spawn(1, UnitType::kBarracks, Point2i{10, 10});
  const UnitStats& rs = w.defs().stats[int(Race::kBeta)][int(UnitType::kBarracks)];
  w.deal_damage(0, bid, 10000);
  CHECK(w.player(0).step_events.kill_building_value == doctest::Approx(rs.total_cost()));
}

TEST_CASE("supply accounting") {
  RunConfig cfg = testutil::tiny_config();
  World w(WorldConfig{cfg.env.world_size, cfg.env.camera_size, cfg.env.screen_size,
                      cfg.env.minimap_size, cfg.env.draw_ticks, cfg.env.max_ticks},
          WorldDefs::builtin());
  w.init(5, Race::kAlpha, Race::kBeta);
  const WorldDefs& d = w.defs();

  CHECK(w.supply_cap(0) == d.supply_per_base);
  CHECK(w.supply_used(0) == d.start_workers);

  w.spawn(0, UnitType::kBase, Point2i{1, 12});
  CHECK(w.supply_cap(0) == 2 * d.supply_per_base);
  w.spawn(0, UnitType::kSoldier, Point2i{2, 2});
  CHECK(w.supply_used(0) == d.start_workers + 1);

  // the cap saturates at the global limit
  for (int i = 0; i < 6; ++i) w.spawn(0, UnitType::kBase, Point2i{1 + i, 14});
  CHECK(w.supply_cap(0) == d.supply_cap);

  // unfinished units carry no supply
  int uid = w.spawn(0, UnitType::kSoldier, Point2i{3, 3}, /*completed=*/false);
  (void)uid;
  CHECK(w.supply_used(0) == d.start_workers + 1);
}

TEST_CASE("idle worlds end in draws") {
  RunConfig cfg = testutil::tiny_config();

  SUBCASE("tick limit") {
    World w(WorldConfig{16, 8, 16, 16, /*draw_ticks=*/500, /*max_ticks=*/40},
            WorldDefs::builtin());
    w.init(5, Race::kAlpha, Race::kBeta);
    w.advance(60);
    CHECK(w.done());
    CHECK(w.is_draw());
    CHECK(w.result() == 0);
    CHECK(w.tick() <= 40);
  }

  SUBCASE("no progress") {
    World w(WorldConfig{16, 8, 16, 16, /*draw_ticks=*/50, /*max_ticks=*/5000},
            WorldDefs::builtin());
    w.init(5, Race::kAlpha, Race::kBeta);
    w.advance(200);  // nobody has orders, so nothing ever happens
    CHECK(w.done());
    CHECK(w.is_draw());
    CHECK(w.result() == 0);
    CHECK(w.tick() <= 55);
  }
}

TEST_CASE("recorded events replay the agent's interface stream") {
  RunConfig cfg = testutil::tiny_config();
  ActionSchema schema = cfg.make_schema();
  EnvConfig env_cfg = arena::env_config_from(cfg);
  MiniRtsEnv e(schema, env_cfg);
  e.reset(11, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta);
  e.set_recording(true);
  ScriptedPolicy agent(OpponentLevel::kEasy, schema);
  RngStream rng(derive_seed(11, {fnv1a64("expert")}));
  int steps = 0;
  for (; steps < 25 && !e.done(); ++steps) e.step(agent.decide(e.world(), 0, rng));

  const std::vector<ReplayEvent>& ev = e.events();
  REQUIRE(int(ev.size()) == steps);
  CHECK(ev.front().tick == 0);
  for (size_t i = 1; i < ev.size(); ++i) CHECK(ev[i].tick >= ev[i - 1].tick);
  // each gap equals the previous action's chosen delay
  for (size_t i = 1; i < ev.size(); ++i)
    CHECK(ev[i].tick - ev[i - 1].tick == schema.delay.ticks_of(ev[i - 1].action.delay_bucket));
}

TEST_CASE("stronger scripts beat weaker ones") {
  RunConfig cfg = mid_config();
  auto series = [&](OpponentLevel a, OpponentLevel b, int games) {
    int wins = 0, losses = 0;
    for (int g = 0; g < games; ++g) {
      ReplayLog log = testutil::record_game(cfg, 400 + uint64_t(g), a, b);
      wins += log.meta.result == 1;
      losses += log.meta.result == -1;
    }
    return std::pair<int, int>{wins, losses};
  };

  auto [w1, l1] = series(OpponentLevel::kEasy, OpponentLevel::kVeryEasy, 5);
  CHECK(w1 == 5);
  auto [w2, l2] = series(OpponentLevel::kMedium, OpponentLevel::kEasy, 5);
  CHECK(w2 > l2);
  auto [w3, l3] = series(OpponentLevel::kHard, OpponentLevel::kEasy, 5);
  CHECK(w3 > l3);
}
