#include "startrain/env.hpp"

#include <algorithm>
#include <cmath>

#include "startrain/common.hpp"

namespace startrain::env {

namespace {

int chebyshev(Point2i a, Point2i b) { return std::max(std::abs(a.r - b.r), std::abs(a.c - b.c)); }

bool on_screen(const World& w, int pid, Point2i cell) {
  Point2i cam = w.player(pid).camera;
  int c = w.config().camera_size;
  return cell.r >= cam.r && cell.r < cam.r + c && cell.c >= cam.c && cell.c < cam.c + c;
}

Point2i to_screen(const World& w, int pid, Point2i cell) {
  Point2i cam = w.player(pid).camera;
  int f = w.config().screen_size / w.config().camera_size;
  return {(cell.r - cam.r) * f, (cell.c - cam.c) * f};
}

Point2i to_minimap(const World& w, Point2i cell) {
  int g = w.config().world_size / w.config().minimap_size;
  return {cell.r / g, cell.c / g};
}

bool same_id_set(std::vector<int> a, std::vector<int> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

}  // namespace

const char* opponent_level_name(OpponentLevel lvl) {
  static const char* names[4] = {"very_easy", "easy", "medium", "hard"};
  return names[int(lvl)];
}

OpponentLevel opponent_level_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i)
    if (name == opponent_level_name(OpponentLevel(i))) return OpponentLevel(i);
  throw ConfigError("unknown opponent level: " + name);
}

int opponent_army_cap(OpponentLevel lvl) {
  static const int caps[4] = {2, 5, 10, 16};
  return caps[int(lvl)];
}

ScriptedPolicy::ScriptedPolicy(OpponentLevel level, const ActionSchema& schema)
    : level_(level), schema_(&schema), army_cap_(opponent_army_cap(level)) {
  switch (level) {
    case OpponentLevel::kVeryEasy:
      target_workers_ = 5;
      target_barracks_ = 1;
      attack_at_ = 1 << 20;  // never attacks first
      delay_lo_ = 14;
      delay_hi_ = 24;
      break;
    case OpponentLevel::kEasy:
      target_workers_ = 7;
      target_barracks_ = 1;
      attack_at_ = 5;
      delay_lo_ = 8;
      delay_hi_ = 16;
      break;
    case OpponentLevel::kMedium:
      target_workers_ = 9;
      target_barracks_ = 2;
      attack_at_ = 8;
      delay_lo_ = 5;
      delay_hi_ = 10;
      break;
    case OpponentLevel::kHard:
      target_workers_ = 11;
      target_barracks_ = 3;
      attack_at_ = 8;
      delay_lo_ = 3;
      delay_hi_ = 6;
      break;
  }
}

HierarchicalAction ScriptedPolicy::with_delay(HierarchicalAction a, const World& world,
                                              RngStream& rng) const {
  (void)world;
  int lo = delay_lo_, hi = delay_hi_;
  if (a.action_id == schema_->find_action("no_op")) {
    lo = delay_hi_;
    hi = delay_hi_ * 2;
  }
  a.delay_bucket = schema_->delay.bucket_of(rng.uniform_int(lo, hi));
  return a;
}

HierarchicalAction ScriptedPolicy::decide(const World& world, int pid, RngStream& rng) const {
  const ActionSchema& schema = *schema_;
  const PlayerState& pl = world.player(pid);
  const WorldDefs& defs = world.defs();
  auto mask = world.available_mask(pid, schema);
  auto avail = [&](const char* name) {
    int id = schema.find_action(name);
    return id >= 0 && mask[size_t(id)];
  };
  auto mk = [&](const char* name) {
    HierarchicalAction a;
    a.action_id = schema.find_action(name);
    if (schema.action(a.action_id).needs(Param::kQueued)) a.queued = 0;
    return a;
  };
  auto noop = [&] { return with_delay(mk("no_op"), world, rng); };

  // camera hop toward a cell; far hops go via the midpoint so camera moves
  // arrive in short chains
  auto ensure_visible = [&](Point2i cell) -> std::optional<HierarchicalAction> {
    if (on_screen(world, pid, cell)) return std::nullopt;
    int c = world.config().camera_size;
    Point2i cur{pl.camera.r + c / 2, pl.camera.c + c / 2};
    Point2i target = cell;
    if (chebyshev(cur, cell) > c) target = {(cur.r + cell.r) / 2, (cur.c + cell.c) / 2};
    HierarchicalAction a = mk("move_camera");
    a.minimap = to_minimap(world, target);
    return with_delay(a, world, rng);
  };
  auto select_unit_at = [&](Point2i cell) -> HierarchicalAction {
    if (auto cam = ensure_visible(cell)) return *cam;
    HierarchicalAction a = mk("select_point");
    a.screen1 = to_screen(world, pid, cell);
    a.select_modifier = 0;
    return with_delay(a, world, rng);
  };

  std::vector<int> army_ids, idle_worker_ids;
  std::vector<Point2i> idle_worker_pos;
  int workers_total = 0, soldiers_total = 0, barracks_total = 0, bases_total = 0;
  int pending_rax = 0, pending_base = 0, gas_workers = 0;
  const Unit* my_base = nullptr;
  const Unit* my_barracks = nullptr;  // completed, shortest queue
  const Unit* mineral_worker = nullptr;
  Point2i army_centroid{0, 0};
  for (const Unit& u : world.units()) {
    if (u.owner != pid) continue;
    const UnitStats& s = defs.stats[int(u.race)][int(u.type)];
    bool complete = u.build_progress >= s.build_time;
    if (u.type == UnitType::kSoldier) {
      if (complete) {
        army_ids.push_back(u.id);
        army_centroid.r += u.pos.r;
        army_centroid.c += u.pos.c;
      }
      ++soldiers_total;
    } else if (u.type == UnitType::kWorker) {
      if (complete) {
        ++workers_total;
        if (u.commands.empty()) {
          idle_worker_ids.push_back(u.id);
          idle_worker_pos.push_back(u.pos);
        } else if (u.commands.front().kind == CommandKind::kBuild) {
          if (u.commands.front().build_type == UnitType::kBase)
            ++pending_base;
          else
            ++pending_rax;
        } else if (u.commands.front().kind == CommandKind::kGather) {
          const Unit* res = world.unit_by_id(u.commands.front().target_unit);
          if (res && res->type == UnitType::kGeyser)
            ++gas_workers;
          else if (!mineral_worker)
            mineral_worker = &u;
        }
      }
    } else if (u.type == UnitType::kBarracks) {
      ++barracks_total;
      if (complete && (!my_barracks || u.production.size() < my_barracks->production.size()))
        my_barracks = &u;
    } else if (u.type == UnitType::kBase) {
      if (complete) {
        ++bases_total;
        if (!my_base) my_base = &u;
      }
    }
    for (const ProductionItem& it : u.production) {
      if (it.type == UnitType::kWorker) ++workers_total;
      if (it.type == UnitType::kSoldier) ++soldiers_total;
    }
  }
  if (!army_ids.empty()) {
    army_centroid.r /= int(army_ids.size());
    army_centroid.c /= int(army_ids.size());
  }

  auto selected_all_workers_some_idle = [&] {
    if (pl.selection.empty()) return false;
    bool any_idle = false;
    for (int id : pl.selection) {
      const Unit* u = world.unit_by_id(id);
      if (!u || u->owner != pid || u->type != UnitType::kWorker) return false;
      if (u->commands.empty()) any_idle = true;
    }
    return any_idle;
  };
  auto selection_is = [&](const std::vector<int>& ids) {
    return !ids.empty() && same_id_set(pl.selection, ids);
  };
  auto group_is_army = [&] { return same_id_set(pl.groups[1], army_ids); };

  // --- defense: enemies near home and we have an army
  const Point2i home = pl.start_base;
  bool threat = false;
  Point2i threat_pos{0, 0};
  for (const Unit& u : world.units()) {
    if (u.owner == 2 || u.owner == pid) continue;
    if (u.is_building(defs)) continue;
    if (chebyshev(u.pos, home) <= 10) {
      threat = true;
      threat_pos = u.pos;
      break;
    }
  }
  if (threat && !army_ids.empty()) {
    if (selection_is(army_ids)) {
      HierarchicalAction a = mk("attack_minimap");
      a.minimap = to_minimap(world, threat_pos);
      return with_delay(a, world, rng);
    }
    if (avail("select_army")) return with_delay(mk("select_army"), world, rng);
  }

  // first candidate offset (from `preferred`) whose cell isn't statically occupied
  auto pick_spot = [&](const int (*spots)[2], int preferred) -> Point2i {
    Point2i fallback{-1, -1};
    for (int k = 0; k < 4; ++k) {
      int i = (preferred + k) % 4;
      Point2i s{home.r + spots[i][0], home.c + spots[i][1]};
      s.r = std::clamp(s.r, 1, world.config().world_size - 2);
      s.c = std::clamp(s.c, 1, world.config().world_size - 2);
      if (k == 0) fallback = s;
      const Unit* at = world.unit_at(s);
      if (!at || (!at->is_building(defs) && !at->is_resource())) return s;
    }
    return fallback;
  };
  auto worker_selected = [&] {
    for (int id : pl.selection) {
      const Unit* u = world.unit_by_id(id);
      if (u && u->owner == pid && u->type == UnitType::kWorker &&
          u->build_progress >= defs.stats[int(u->race)][int(u->type)].build_time)
        return true;
    }
    return false;
  };
  // builders are never volunteered for other jobs
  auto pick_builder = [&]() -> Point2i {
    if (!idle_worker_pos.empty()) return idle_worker_pos.front();
    if (mineral_worker) return mineral_worker->pos;
    for (const Unit& u : world.units())
      if (u.owner == pid && u.type == UnitType::kWorker &&
          (u.commands.empty() || u.commands.front().kind != CommandKind::kBuild))
        return u.pos;
    return {-1, -1};
  };

  // --- resume constructions whose builder died or wandered off
  for (const Unit& u : world.units()) {
    if (u.owner != pid || !u.is_building(defs)) continue;
    if (u.build_progress >= defs.stats[int(u.race)][int(u.type)].build_time) continue;
    bool attended = false;
    for (const Unit& w : world.units()) {
      if (w.owner != pid || w.type != UnitType::kWorker) continue;
      for (const Command& c : w.commands)
        if (c.kind == CommandKind::kBuild && c.target == u.pos) attended = true;
    }
    if (attended) continue;
    const char* act = u.type == UnitType::kBase ? "build_base" : "build_barracks";
    if (worker_selected() && avail(act)) {
      if (auto cam = ensure_visible(u.pos)) return *cam;
      HierarchicalAction a = mk(act);
      a.screen1 = to_screen(world, pid, u.pos);
      return with_delay(a, world, rng);
    }
    if (!worker_selected()) {
      Point2i builder = pick_builder();
      if (builder.r >= 0) return select_unit_at(builder);
    }
    break;
  }

  // --- barracks construction
  const UnitStats& rax_cost = defs.stats[int(pl.race)][int(UnitType::kBarracks)];
  if (barracks_total < target_barracks_ && pending_rax == 0 && pending_base == 0 &&
      pl.minerals >= rax_cost.mineral_cost && workers_total > 0 && my_base) {
    if (worker_selected() && avail("build_barracks")) {
      static const int kSpots[4][2] = {{6, 1}, {1, 6}, {6, 6}, {-5, 5}};
      Point2i site = pick_spot(kSpots, std::min(barracks_total, 3));
      if (auto cam = ensure_visible(site)) return *cam;
      HierarchicalAction a = mk("build_barracks");
      a.screen1 = to_screen(world, pid, site);
      return with_delay(a, world, rng);
    }
    if (!worker_selected()) {
      Point2i builder = pick_builder();
      if (builder.r >= 0) return select_unit_at(builder);
    }
  }

  // --- supply: production stalls at the cap, so add a base
  const UnitStats& base_cost = defs.stats[int(pl.race)][int(UnitType::kBase)];
  bool need_base = !my_base || (world.supply_used(pid) + 2 >= world.supply_cap(pid) &&
                                world.supply_cap(pid) < defs.supply_cap);
  if (need_base && pending_base == 0 && pl.minerals >= base_cost.mineral_cost &&
      workers_total > 0) {
    if (worker_selected() && avail("build_base")) {
      static const int kSpots[4][2] = {{-6, -1}, {-1, -6}, {-6, -6}, {6, -6}};
      Point2i site = pick_spot(kSpots, std::min(std::max(bases_total - 1, 0), 3));
      if (auto cam = ensure_visible(site)) return *cam;
      HierarchicalAction a = mk("build_base");
      a.screen1 = to_screen(world, pid, site);
      return with_delay(a, world, rng);
    }
    if (!worker_selected()) {
      Point2i builder = pick_builder();
      if (builder.r >= 0) return select_unit_at(builder);
    }
  }

  // --- vespene: soldiers cost gas, so staff the geyser once a barracks is up
  int want_gas =
      barracks_total > 0 ? std::min(1 + army_cap_ / 4, std::max(0, workers_total - 3)) : 0;
  if (gas_workers < want_gas) {
    const Unit* geyser = nullptr;
    int best = 1 << 30;
    for (const Unit& u : world.units()) {
      if (u.type != UnitType::kGeyser || u.resources_left <= 0) continue;
      int d = chebyshev(u.pos, home);
      if (d < best) {
        best = d;
        geyser = &u;
      }
    }
    const Unit* recruit = nullptr;
    if (!idle_worker_ids.empty()) recruit = world.unit_by_id(idle_worker_ids.front());
    else if (mineral_worker) recruit = mineral_worker;
    auto solo_nongas_worker = [&] {
      if (pl.selection.size() != 1) return false;
      const Unit* u = world.unit_by_id(pl.selection[0]);
      if (!u || u->owner != pid || u->type != UnitType::kWorker) return false;
      if (u->build_progress < defs.stats[int(u->race)][int(u->type)].build_time) return false;
      if (!u->commands.empty()) {
        if (u->commands.front().kind == CommandKind::kBuild) return false;  // never steal builders
        if (u->commands.front().kind == CommandKind::kGather) {
          const Unit* res = world.unit_by_id(u->commands.front().target_unit);
          if (res && res->type == UnitType::kGeyser) return false;  // already on gas
        }
      }
      return true;
    };
    if (geyser && recruit) {
      if (solo_nongas_worker() && avail("gather_screen")) {
        if (auto cam = ensure_visible(geyser->pos)) return *cam;
        HierarchicalAction a = mk("gather_screen");
        a.screen1 = to_screen(world, pid, geyser->pos);
        return with_delay(a, world, rng);
      }
      if (!solo_nongas_worker()) return select_unit_at(recruit->pos);
    }
  }

  // --- put idle workers on minerals
  if (!idle_worker_ids.empty()) {
    if (selected_all_workers_some_idle()) {
      // gather the closest live patch to home
      const Unit* patch = nullptr;
      int best = 1 << 30;
      for (const Unit& u : world.units()) {
        if (!u.is_resource() || u.type != UnitType::kMinerals || u.resources_left <= 0) continue;
        int d = chebyshev(u.pos, home);
        if (d < best) {
          best = d;
          patch = &u;
        }
      }
      if (patch && avail("gather_screen")) {
        if (auto cam = ensure_visible(patch->pos)) return *cam;
        HierarchicalAction a = mk("gather_screen");
        a.screen1 = to_screen(world, pid, patch->pos);
        return with_delay(a, world, rng);
      }
      return noop();
    }
    if (idle_worker_ids.size() >= 2) {
      Point2i lo = idle_worker_pos[0], hi = idle_worker_pos[0];
      for (Point2i p : idle_worker_pos) {
        lo.r = std::min(lo.r, p.r);
        lo.c = std::min(lo.c, p.c);
        hi.r = std::max(hi.r, p.r);
        hi.c = std::max(hi.c, p.c);
      }
      if (on_screen(world, pid, lo) && on_screen(world, pid, hi)) {
        HierarchicalAction a = mk("select_rect");
        a.screen1 = to_screen(world, pid, lo);
        a.screen2 = to_screen(world, pid, hi);
        a.select_modifier = 0;
        return with_delay(a, world, rng);
      }
      Point2i mid{(lo.r + hi.r) / 2, (lo.c + hi.c) / 2};
      if (auto cam = ensure_visible(mid)) return *cam;
    }
    return select_unit_at(idle_worker_pos.front());
  }

  // --- worker production
  const UnitStats& worker_cost = defs.stats[int(pl.race)][int(UnitType::kWorker)];
  if (workers_total < target_workers_ && pl.minerals >= worker_cost.mineral_cost && my_base) {
    if (avail("train_worker")) return with_delay(mk("train_worker"), world, rng);
    bool base_selected = selection_is({my_base->id});
    if (!base_selected) return select_unit_at(my_base->pos);
    return noop();  // base selected but queue full / supply blocked
  }

  // --- army production
  const UnitStats& soldier_cost = defs.stats[int(pl.race)][int(UnitType::kSoldier)];
  if (soldiers_total < army_cap_ && my_barracks &&
      pl.minerals >= soldier_cost.mineral_cost && pl.vespene >= soldier_cost.vespene_cost) {
    if (avail("train_soldier")) return with_delay(mk("train_soldier"), world, rng);
    if (!selection_is({my_barracks->id})) return select_unit_at(my_barracks->pos);
    return noop();
  }

  // --- keep the army on control group 1
  if (int(army_ids.size()) >= 2 && !group_is_army()) {
    if (selection_is(army_ids) && avail("select_control_group")) {
      HierarchicalAction a = mk("select_control_group");
      a.control_group_id = 1;
      a.control_group_op = int(ControlGroupOp::kSet);
      return with_delay(a, world, rng);
    }
    if (avail("select_army")) return with_delay(mk("select_army"), world, rng);
  }

  // --- attack once the army is large enough
  if (int(army_ids.size()) >= attack_at_) {
    if (selection_is(army_ids)) {
      // occasionally watch the army fight
      if (rng.uniform() < 0.25) {
        if (auto cam = ensure_visible(army_centroid)) return *cam;
      }
      Point2i target = world.player(1 - pid).start_base;
      // re-target the nearest visible enemy building if the main base is gone
      const Unit* closest = nullptr;
      int best = 1 << 30;
      for (const Unit& u : world.units()) {
        if (u.owner != 1 - pid || !u.is_building(defs)) continue;
        int d = chebyshev(u.pos, army_centroid);
        if (d < best) {
          best = d;
          closest = &u;
        }
      }
      if (closest) target = closest->pos;
      HierarchicalAction a = mk("attack_minimap");
      a.minimap = to_minimap(world, target);
      return with_delay(a, world, rng);
    }
    if (group_is_army() && avail("select_control_group")) {
      HierarchicalAction a = mk("select_control_group");
      a.control_group_id = 1;
      a.control_group_op = int(ControlGroupOp::kRecall);
      return with_delay(a, world, rng);
    }
    if (avail("select_army")) return with_delay(mk("select_army"), world, rng);
  }

  return noop();
}

MiniRtsEnv::MiniRtsEnv(const ActionSchema& schema, const EnvConfig& cfg)
    : schema_(schema), cfg_(cfg), opp_rng_(0) {
  world_ = std::make_unique<World>(cfg_.world, cfg_.defs);
}

FeatureObservation MiniRtsEnv::reset(uint64_t seed, OpponentLevel opponent, Race agent_race,
                                     Race opponent_race) {
  world_ = std::make_unique<World>(cfg_.world, cfg_.defs);
  world_->init(seed, agent_race, opponent_race);
  opponent_ = std::make_unique<ScriptedPolicy>(opponent, schema_);
  opp_rng_ = RngStream(derive_seed(seed, {fnv1a64("opponent")}));
  opp_next_tick_ = 1;
  events_.clear();
  prev_action_ = 0;
  prev_screen_ = {-1, -1};
  prev_minimap_ = {-1, -1};
  pending_result_ = RewardBreakdown{};
  result_credited_ = false;
  cond_ = Conditioning{};
  return observe();
}

std::vector<Violation> MiniRtsEnv::validate(const HierarchicalAction& a) const {
  return validate_action(schema_, a, world_->available_mask(0, schema_));
}

std::vector<uint8_t> MiniRtsEnv::available_mask() const {
  return world_->available_mask(0, schema_);
}

void MiniRtsEnv::record_prev(const HierarchicalAction& a) {
  if (a.action_id != schema_.find_action("no_op")) prev_action_ = a.action_id;
  if (a.screen1) prev_screen_ = *a.screen1;
  if (a.screen2) prev_screen_ = *a.screen2;
  if (a.minimap) prev_minimap_ = *a.minimap;
}

void MiniRtsEnv::apply_agent_action(const HierarchicalAction& a) {
  if (recording_) events_.push_back({world_->tick(), a});
  world_->apply_action(0, a, schema_);
  record_prev(a);
}

void MiniRtsEnv::advance_ticks(int n) {
  for (int i = 0; i < n && !world_->done(); ++i) {
    while (opponent_ && opp_next_tick_ == world_->tick() && !world_->done()) {
      HierarchicalAction a = opponent_->decide(*world_, 1, opp_rng_);
      world_->apply_action(1, a, schema_);
      opp_next_tick_ += schema_.delay.ticks_of(a.delay_bucket);
    }
    world_->advance(1);
  }
}

RewardBreakdown MiniRtsEnv::take_step_events() {
  RewardBreakdown r = world_->player(0).step_events;
  world_->player(0).step_events = RewardBreakdown{};
  if (world_->done() && !result_credited_) {
    r.game_result = world_->result();
    result_credited_ = true;
  }
  return r;
}

StepResult MiniRtsEnv::step(const HierarchicalAction& a) {
  if (world_->done()) throw TrainError("step() called on a finished game");
  StepResult res;
  res.violations = validate(a);
  if (!res.violations.empty()) {
    res.status = StepStatus::kRejected;
    res.obs = observe();
    return res;
  }
  apply_agent_action(a);
  advance_ticks(schema_.delay.ticks_of(a.delay_bucket));
  res.status = StepStatus::kOk;
  res.reward = take_step_events();
  res.done = world_->done();
  res.result = world_->result();
  res.draw = world_->is_draw();
  res.obs = observe();
  return res;
}

void MiniRtsEnv::render_screen(FeatureObservation& obs, const std::vector<uint8_t>& vis) const {
  const FeatureSpec& fs = schema_.features;
  const int R = fs.screen_size;
  const int n = world_->config().world_size;
  const int f = world_->config().screen_size / world_->config().camera_size;
  const Point2i cam = world_->player(0).camera;
  const auto& sel = world_->player(0).selection;
  obs.screen.assign(size_t(fs.screen.size()) * R * R, 0);

  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < R; ++c) {
      Point2i w{cam.r + r / f, cam.c + c / f};
      uint8_t v = vis[size_t(w.r) * n + w.c];
      const Unit* u = world_->unit_at(w);
      bool shown = u && (u->owner == 0 || v == 2);
      for (size_t li = 0; li < fs.screen.size(); ++li) {
        const std::string& name = fs.screen[li].name;
        int32_t val = 0;
        if (name == "visibility") {
          val = v;
        } else if (shown) {
          const UnitStats& s = world_->defs().stats[int(u->race)][int(u->type)];
          if (name == "player_relative")
            val = u->owner == 0 ? 1 : (u->owner == 2 ? 2 : 3);
          else if (name == "unit_type")
            val = int(u->type);
          else if (name == "selected")
            val = std::find(sel.begin(), sel.end(), u->id) != sel.end() ? 1 : 0;
          else if (name == "hit_points")
            val = u->hp;
          else if (name == "hit_points_ratio")
            val = s.max_hp > 0 ? u->hp * 255 / s.max_hp : 0;
          else if (name == "unit_density")
            val = 1;
          else if (name == "build_progress")
            val = u->build_progress < s.build_time ? u->build_progress * 100 / s.build_time : 0;
          else if (name == "resources")
            val = u->is_resource() ? u->resources_left : 0;
        }
        obs.screen[(li * R + size_t(r)) * R + size_t(c)] = val;
      }
    }
  }
}

void MiniRtsEnv::render_minimap(FeatureObservation& obs, const std::vector<uint8_t>& vis) const {
  const FeatureSpec& fs = schema_.features;
  const int M = fs.minimap_size;
  const int n = world_->config().world_size;
  const int g = n / M;
  const auto& sel = world_->player(0).selection;
  const Point2i cam = world_->player(0).camera;
  const int cam_size = world_->config().camera_size;
  obs.minimap.assign(size_t(fs.minimap.size()) * M * M, 0);

  auto layer_index = [&](const char* name) -> int {
    for (size_t i = 0; i < fs.minimap.size(); ++i)
      if (fs.minimap[i].name == name) return int(i);
    return -1;
  };
  const int li_vis = layer_index("visibility");
  const int li_rel = layer_index("player_relative");
  const int li_sel = layer_index("selected");
  const int li_cam = layer_index("camera");
  const int li_den = layer_index("unit_density");
  auto at = [&](int li, int r, int c) -> int32_t& {
    return obs.minimap[(size_t(li) * M + size_t(r)) * M + size_t(c)];
  };

  for (int r = 0; r < M; ++r) {
    for (int c = 0; c < M; ++c) {
      uint8_t best = 0;
      for (int dr = 0; dr < g; ++dr)
        for (int dc = 0; dc < g; ++dc)
          best = std::max(best, vis[size_t(r * g + dr) * n + size_t(c * g + dc)]);
      if (li_vis >= 0) at(li_vis, r, c) = best;
      if (li_cam >= 0) {
        bool inter = r * g < cam.r + cam_size && (r + 1) * g > cam.r &&
                     c * g < cam.c + cam_size && (c + 1) * g > cam.c;
        at(li_cam, r, c) = inter ? 1 : 0;
      }
    }
  }
  for (const Unit& u : world_->units()) {
    Point2i m{u.pos.r / g, u.pos.c / g};
    uint8_t v = vis[size_t(u.pos.r) * n + u.pos.c];
    bool shown = u.owner == 0 || v == 2;
    if (!shown) continue;
    int rel = u.owner == 0 ? 1 : (u.owner == 2 ? 2 : 3);
    if (li_rel >= 0) at(li_rel, m.r, m.c) = std::max(at(li_rel, m.r, m.c), int32_t(rel));
    if (li_sel >= 0 && std::find(sel.begin(), sel.end(), u.id) != sel.end()) at(li_sel, m.r, m.c) = 1;
    if (li_den >= 0) at(li_den, m.r, m.c) += 1;
  }
}

void MiniRtsEnv::fill_lists(FeatureObservation& obs) const {
  const auto& sel = world_->player(0).selection;
  auto unit_row = [&](const Unit& u) -> std::array<int32_t, 7> {
    const UnitStats& s = world_->defs().stats[int(u.race)][int(u.type)];
    int progress =
        u.build_progress < s.build_time ? u.build_progress * 100 / s.build_time : 100;
    return {int32_t(u.type), u.owner == 0 ? 1 : (u.owner == 2 ? 2 : 3),
            u.hp,            s.max_hp,
            u.pos.c,         u.pos.r,
            int32_t(progress)};
  };
  auto fill = [&](ItemList& list, const std::vector<const Unit*>& units) {
    list.n = int(units.size());
    list.rows.clear();
    int stored = std::min<int>(list.n, kItemListCap);
    for (int i = 0; i < stored; ++i) {
      auto row = unit_row(*units[size_t(i)]);
      list.rows.insert(list.rows.end(), row.begin(), row.end());
    }
  };

  std::vector<const Unit*> selected;
  for (int id : sel) {
    const Unit* u = world_->unit_by_id(id);
    if (u) selected.push_back(u);
  }
  obs.single_select = ItemList{};
  obs.multi_select = ItemList{};
  obs.cargo = ItemList{};
  obs.production_queue = ItemList{};
  if (selected.size() == 1) {
    fill(obs.single_select, selected);
  } else if (selected.size() > 1) {
    fill(obs.multi_select, selected);
  }
  if (selected.size() == 1 && !selected[0]->production.empty()) {
    const Unit& b = *selected[0];
    obs.production_queue.n = int(b.production.size());
    int stored = std::min<int>(obs.production_queue.n, kItemListCap);
    for (int i = 0; i < stored; ++i) {
      const ProductionItem& it = b.production[size_t(i)];
      const UnitStats& ts = world_->defs().stats[int(b.race)][int(it.type)];
      int progress = ts.build_time > 0 ? it.progress * 100 / ts.build_time : 0;
      obs.production_queue.rows.push_back(int32_t(it.type));
      obs.production_queue.rows.push_back(int32_t(progress));
    }
  }
}

void MiniRtsEnv::fill_scalars(FeatureObservation& obs) const {
  const PlayerState& pl = world_->player(0);
  obs.player[0] = pl.minerals;
  obs.player[1] = pl.vespene;
  obs.player[2] = world_->supply_used(0);
  obs.player[3] = world_->supply_cap(0);
  obs.player[4] = world_->count_units(0, UnitType::kSoldier);
  obs.player[5] = world_->count_units(0, UnitType::kWorker);
  obs.player[6] = world_->count_idle_workers(0);
  obs.player[7] = world_->count_buildings(0);
  obs.player[8] = pl.kills_value;
  obs.player[9] = pl.lost_value;
  obs.player[10] = world_->count_units(0, UnitType::kBase);
}

FeatureObservation MiniRtsEnv::observe() {
  FeatureObservation obs;
  auto vis = world_->visibility(0);
  render_screen(obs, vis);
  render_minimap(obs, vis);
  fill_lists(obs);
  fill_scalars(obs);
  const PlayerState& pl = world_->player(0);
  for (int i = 0; i < kNumControlGroups; ++i) {
    obs.control_groups[size_t(i * 2)] = pl.group_first_type[size_t(i)];
    obs.control_groups[size_t(i * 2 + 1)] = int32_t(pl.groups[size_t(i)].size());
    obs.control_groups_hint[size_t(i * 2)] = cond_.cg_hint[size_t(i)][0];
    obs.control_groups_hint[size_t(i * 2 + 1)] = cond_.cg_hint[size_t(i)][1];
  }
  obs.game_loop = world_->tick() / schema_.features.hour_ticks;
  obs.available_actions = world_->available_mask(0, schema_);
  obs.prev_action = prev_action_;
  obs.build_order = cond_.build_order;
  obs.mmr_bucket = cond_.mmr_bucket;
  obs.prev_screen_point = prev_screen_;
  obs.prev_minimap_point = prev_minimap_;
  return obs;
}

}  // namespace startrain::env
