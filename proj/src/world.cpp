#include "startrain/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <json.hpp>

#include "startrain/common.hpp"

namespace startrain::env {

using ordered_json = nlohmann::ordered_json;

const char* unit_type_name(UnitType t) {
  static const char* names[kNumUnitTypes] = {"none",    "base",     "barracks", "worker",
                                             "soldier", "minerals", "geyser"};
  return names[int(t)];
}

const char* race_name(Race r) {
  static const char* names[3] = {"alpha", "beta", "gamma"};
  return names[int(r)];
}

Race race_from_name(const std::string& name) {
  for (int i = 0; i < 3; ++i)
    if (name == race_name(Race(i))) return Race(i);
  throw ConfigError("unknown race: " + name);
}

WorldDefs WorldDefs::builtin() {
  WorldDefs d;
  auto set = [&](Race r, UnitType t, UnitStats s) { d.stats[int(r)][int(t)] = s; };
  for (int r = 0; r < 3; ++r) {
    set(Race(r), UnitType::kBase, {350, 0, 0, 5, 6, 400, 0, 60, 0, true});
    set(Race(r), UnitType::kBarracks, {250, 0, 0, 5, 5, 150, 0, 40, 0, true});
    set(Race(r), UnitType::kWorker, {40, 3, 1, 8, 5, 50, 0, 12, 1, false});
    set(Race(r), UnitType::kMinerals, {1, 0, 0, 0, 0, 0, 0, 0, 0, false});
    set(Race(r), UnitType::kGeyser, {1, 0, 0, 0, 0, 0, 0, 0, 0, false});
  }
  // Alpha (and its mirror gamma): expensive ranged soldier. Beta: cheap melee.
  set(Race::kAlpha, UnitType::kSoldier, {60, 8, 3, 6, 6, 75, 25, 20, 1, false});
  set(Race::kGamma, UnitType::kSoldier, {60, 8, 3, 6, 6, 75, 25, 1, 20, false});
  d.stats[int(Race::kGamma)][int(UnitType::kSoldier)] =
      d.stats[int(Race::kAlpha)][int(UnitType::kSoldier)];
  set(Race::kBeta, UnitType::kSoldier, {35, 5, 2, 5, 6, 45, 15, 16, 1, false});
  d.patch_minerals = 5000;
  d.geyser_vespene = 2500;
  return d;
}

std::string WorldDefs::to_json() const {
  ordered_json j;
  j["version"] = version;
  for (int r = 0; r < 3; ++r) {
    ordered_json jr;
    for (int t = 1; t < kNumUnitTypes; ++t) {
      const UnitStats& s = stats[r][t];
      jr[unit_type_name(UnitType(t))] = {
          {"max_hp", s.max_hp},           {"damage", s.damage},
          {"range", s.range},             {"attack_cooldown", s.attack_cooldown},
          {"vision", s.vision},           {"mineral_cost", s.mineral_cost},
          {"vespene_cost", s.vespene_cost}, {"build_time", s.build_time},
          {"supply", s.supply},           {"building", s.building}};
    }
    j["stats"][race_name(Race(r))] = jr;
  }
  j["patch_minerals"] = patch_minerals;
  j["geyser_vespene"] = geyser_vespene;
  j["patches_per_base"] = patches_per_base;
  j["start_workers"] = start_workers;
  j["start_minerals"] = start_minerals;
  j["start_vespene"] = start_vespene;
  j["supply_per_base"] = supply_per_base;
  j["supply_cap"] = supply_cap;
  j["worker_carry_minerals"] = worker_carry_minerals;
  j["worker_carry_vespene"] = worker_carry_vespene;
  j["production_queue_cap"] = production_queue_cap;
  j["selection_cap"] = selection_cap;
  return j.dump(1);
}

WorldDefs WorldDefs::from_json(const std::string& text) try {
  ordered_json j = ordered_json::parse(text);
  if (j.at("version").get<int>() != 1) throw SchemaError("unsupported world defs version");
  WorldDefs d;
  d.version = 1;
  for (int r = 0; r < 3; ++r) {
    const auto& jr = j.at("stats").at(race_name(Race(r)));
    for (int t = 1; t < kNumUnitTypes; ++t) {
      const auto& js = jr.at(unit_type_name(UnitType(t)));
      UnitStats s;
      s.max_hp = js.at("max_hp").get<int>();
      s.damage = js.at("damage").get<int>();
      s.range = js.at("range").get<int>();
      s.attack_cooldown = js.at("attack_cooldown").get<int>();
      s.vision = js.at("vision").get<int>();
      s.mineral_cost = js.at("mineral_cost").get<int>();
      s.vespene_cost = js.at("vespene_cost").get<int>();
      s.build_time = js.at("build_time").get<int>();
      s.supply = js.at("supply").get<int>();
      s.building = js.at("building").get<bool>();
      d.stats[r][t] = s;
    }
  }
  d.patch_minerals = j.at("patch_minerals").get<int>();
  d.geyser_vespene = j.at("geyser_vespene").get<int>();
  d.patches_per_base = j.at("patches_per_base").get<int>();
  d.start_workers = j.at("start_workers").get<int>();
  d.start_minerals = j.at("start_minerals").get<int>();
  d.start_vespene = j.at("start_vespene").get<int>();
  d.supply_per_base = j.at("supply_per_base").get<int>();
  d.supply_cap = j.at("supply_cap").get<int>();
  d.worker_carry_minerals = j.at("worker_carry_minerals").get<int>();
  d.worker_carry_vespene = j.at("worker_carry_vespene").get<int>();
  d.production_queue_cap = j.at("production_queue_cap").get<int>();
  d.selection_cap = j.at("selection_cap").get<int>();
  return d;
} catch (const SchemaError&) {
  throw;
} catch (const std::exception& e) {
  throw SchemaError(std::string("bad world defs: ") + e.what());
}

namespace {

int chebyshev(Point2i a, Point2i b) { return std::max(std::abs(a.r - b.r), std::abs(a.c - b.c)); }

}  // namespace

World::World(const WorldConfig& cfg, const WorldDefs& defs) : cfg_(cfg), defs_(defs) {
  if (cfg_.screen_size % cfg_.camera_size != 0)
    throw ConfigError("screen size must be a multiple of camera size");
  if (cfg_.world_size % cfg_.minimap_size != 0)
    throw ConfigError("world size must be a multiple of minimap size");
  if (cfg_.camera_size > cfg_.world_size)
    throw ConfigError("camera larger than world");
  occupancy_.assign(size_t(cfg_.world_size) * cfg_.world_size, -1);
  for (auto& p : players_) p.seen.assign(occupancy_.size(), 0);
}

void World::init(uint64_t seed, Race p0_race, Race p1_race) {
  initializing_ = true;
  build_log_[0].clear();
  build_log_[1].clear();
  RngStream rng(derive_seed(seed, {fnv1a64("map")}));
  const int n = cfg_.world_size;
  players_[0].race = p0_race;
  players_[1].race = p1_race;
  players_[0].minerals = players_[1].minerals = defs_.start_minerals;
  players_[0].vespene = players_[1].vespene = defs_.start_vespene;

  const int margin = std::max(4, n / 8);
  Point2i base0{margin + int(rng.uniform_int(0, 2)), margin + int(rng.uniform_int(0, 2))};
  Point2i base1{n - 1 - base0.r, n - 1 - base0.c};
  const Point2i bases[2] = {base0, base1};

  for (int pid = 0; pid < 2; ++pid) {
    Point2i b = bases[pid];
    players_[pid].start_base = b;
    spawn(pid, UnitType::kBase, b);
    // resources in a fixed pattern mirrored for fairness
    const int dr[] = {-3, 0, 3, -3, 3};
    const int dc[] = {-3, -4, -3, 3, 3};
    for (int i = 0; i < defs_.patches_per_base; ++i) {
      Point2i p{b.r + (pid == 0 ? dr[i] : -dr[i]), b.c + (pid == 0 ? dc[i] : -dc[i])};
      int id = spawn(2, UnitType::kMinerals, free_cell_near(p));
      units_[size_t(id_index(id))].resources_left = defs_.patch_minerals;
    }
    Point2i g{b.r + (pid == 0 ? 4 : -4), b.c + (pid == 0 ? 0 : 0)};
    int gid = spawn(2, UnitType::kGeyser, free_cell_near(g));
    units_[size_t(id_index(gid))].resources_left = defs_.geyser_vespene;
    for (int i = 0; i < defs_.start_workers; ++i) {
      Point2i w{b.r + (pid == 0 ? 2 : -2), b.c - defs_.start_workers / 2 + i};
      spawn(pid, UnitType::kWorker, free_cell_near(w));
    }
    players_[pid].camera = clamp_camera({b.r - cfg_.camera_size / 2, b.c - cfg_.camera_size / 2});
  }
  initializing_ = false;
  tick_ = 0;
  last_progress_tick_ = 0;
  done_ = false;
  draw_ = false;
  result_ = 0;
  for (auto& p : players_) {
    p.step_events = RewardBreakdown{};
    p.kills_value = p.lost_value = 0;
  }
}

int World::id_index(int id) const {
  for (size_t i = 0; i < units_.size(); ++i)
    if (units_[i].id == id) return int(i);
  return -1;
}

const Unit* World::unit_by_id(int id) const {
  int idx = id_index(id);
  return idx < 0 ? nullptr : &units_[size_t(idx)];
}

const Unit* World::unit_at(Point2i cell) const {
  if (!in_grid(cell)) return nullptr;
  int id = occ(cell);
  return id < 0 ? nullptr : unit_by_id(id);
}

int World::spawn(int owner, UnitType type, Point2i pos, bool completed) {
  pos = free_cell_near(pos);
  Unit u;
  u.id = next_id_++;
  u.owner = owner;
  u.type = type;
  u.race = owner < 2 ? players_[owner].race : Race::kAlpha;
  u.pos = pos;
  const UnitStats& s = defs_.stats[int(u.race)][int(type)];
  u.hp = s.max_hp;
  u.build_progress = completed ? s.build_time : 0;
  units_.push_back(u);
  set_occ(pos, u.id);
  if (completed && !initializing_ && owner < 2) build_log_[size_t(owner)].push_back(int32_t(type));
  return u.id;
}

Point2i World::free_cell_near(Point2i origin) const {
  origin.r = std::clamp(origin.r, 0, cfg_.world_size - 1);
  origin.c = std::clamp(origin.c, 0, cfg_.world_size - 1);
  if (occ(origin) < 0) return origin;
  for (int radius = 1; radius < cfg_.world_size; ++radius) {
    for (int dr = -radius; dr <= radius; ++dr) {
      for (int dc = -radius; dc <= radius; ++dc) {
        if (std::max(std::abs(dr), std::abs(dc)) != radius) continue;
        Point2i p{origin.r + dr, origin.c + dc};
        if (in_grid(p) && occ(p) < 0) return p;
      }
    }
  }
  throw TrainError("world is full");
}

int World::supply_used(int pid) const {
  int total = 0;
  for (const Unit& u : units_) {
    if (u.owner != pid) continue;
    total += stats_of(u).supply;
    for (const ProductionItem& it : u.production)
      total += defs_.stats[int(u.race)][int(it.type)].supply;
  }
  return total;
}

int World::supply_cap(int pid) const {
  int bases = count_units(pid, UnitType::kBase);
  return std::min(defs_.supply_cap, bases * defs_.supply_per_base);
}

int World::count_units(int pid, UnitType t) const {
  int n = 0;
  for (const Unit& u : units_)
    if (u.owner == pid && u.type == t && u.build_progress >= stats_of(u).build_time) ++n;
  return n;
}

int World::count_buildings(int pid) const {
  int n = 0;
  for (const Unit& u : units_)
    if (u.owner == pid && u.is_building(defs_)) ++n;
  return n;
}

int World::count_idle_workers(int pid) const {
  int n = 0;
  for (const Unit& u : units_)
    if (u.owner == pid && u.type == UnitType::kWorker && u.commands.empty()) ++n;
  return n;
}

Point2i World::screen_to_world(int pid, Point2i screen_pt) const {
  int f = cfg_.screen_size / cfg_.camera_size;
  const Point2i cam = players_[pid].camera;
  return {cam.r + screen_pt.r / f, cam.c + screen_pt.c / f};
}

Point2i World::minimap_to_world(Point2i minimap_pt) const {
  int g = cfg_.world_size / cfg_.minimap_size;
  return {minimap_pt.r * g + g / 2, minimap_pt.c * g + g / 2};
}

Point2i World::clamp_camera(Point2i top_left) const {
  int hi = cfg_.world_size - cfg_.camera_size;
  return {std::clamp(top_left.r, 0, hi), std::clamp(top_left.c, 0, hi)};
}

std::vector<uint8_t> World::visibility(int pid) const {
  std::vector<uint8_t> vis(occupancy_.size());
  const int n = cfg_.world_size;
  for (size_t i = 0; i < vis.size(); ++i) vis[i] = players_[pid].seen[i] ? 1 : 0;
  for (const Unit& u : units_) {
    if (u.owner != pid) continue;
    int r = stats_of(u).vision;
    for (int dr = -r; dr <= r; ++dr) {
      for (int dc = -r; dc <= r; ++dc) {
        if (dr * dr + dc * dc > r * r) continue;
        Point2i p{u.pos.r + dr, u.pos.c + dc};
        if (in_grid(p)) vis[size_t(p.r) * n + p.c] = 2;
      }
    }
  }
  return vis;
}

std::vector<uint8_t> World::available_mask(int pid, const ActionSchema& schema) const {
  std::vector<uint8_t> mask(size_t(schema.num_actions()), 0);
  const PlayerState& pl = players_[pid];

  bool any_selected_mobile = false, any_selected_worker = false;
  bool sel_base = false, sel_barracks = false;
  for (int id : pl.selection) {
    const Unit* u = unit_by_id(id);
    if (!u || u->owner != pid) continue;
    bool complete = u->build_progress >= stats_of(*u).build_time;
    if (!u->is_building(defs_) && complete) any_selected_mobile = true;
    if (u->type == UnitType::kWorker && complete) any_selected_worker = true;
    if (u->type == UnitType::kBase && complete &&
        int(u->production.size()) < defs_.production_queue_cap)
      sel_base = true;
    if (u->type == UnitType::kBarracks && complete &&
        int(u->production.size()) < defs_.production_queue_cap)
      sel_barracks = true;
  }
  bool any_soldier = count_units(pid, UnitType::kSoldier) > 0;
  const Race race = pl.race;
  auto cost = [&](UnitType t) { return defs_.stats[int(race)][int(t)]; };
  bool supply_ok = supply_used(pid) < supply_cap(pid);
  auto afford = [&](UnitType t) {
    return pl.minerals >= cost(t).mineral_cost && pl.vespene >= cost(t).vespene_cost;
  };

  auto enable = [&](const char* name, bool on) {
    int id = schema.find_action(name);
    if (id >= 0) mask[size_t(id)] = on ? 1 : 0;
  };
  enable("no_op", true);
  enable("move_camera", true);
  enable("select_point", true);
  enable("select_rect", true);
  enable("select_army", any_soldier);
  enable("select_control_group", true);
  enable("move_screen", any_selected_mobile);
  enable("move_minimap", any_selected_mobile);
  enable("attack_screen", any_selected_mobile);
  enable("attack_minimap", any_selected_mobile);
  enable("gather_screen", any_selected_worker);
  enable("stop", any_selected_mobile);
  enable("build_barracks", any_selected_worker && afford(UnitType::kBarracks));
  enable("build_base", any_selected_worker && afford(UnitType::kBase));
  enable("train_worker", sel_base && afford(UnitType::kWorker) && supply_ok);
  enable("train_soldier", sel_barracks && afford(UnitType::kSoldier) && supply_ok);
  return mask;
}

void World::select_units(int pid, std::vector<int> ids, int modifier) {
  PlayerState& pl = players_[pid];
  if (modifier == 0) pl.selection.clear();
  for (int id : ids) {
    if (int(pl.selection.size()) >= defs_.selection_cap) break;
    if (std::find(pl.selection.begin(), pl.selection.end(), id) == pl.selection.end())
      pl.selection.push_back(id);
  }
}

void World::apply_action(int pid, const HierarchicalAction& a, const ActionSchema& schema) {
  if (done_) return;
  PlayerState& pl = players_[pid];
  const std::string& name = schema.action(a.action_id).name;
  const Race race = pl.race;

  auto selected_units = [&]() {
    std::vector<Unit*> out;
    for (int id : pl.selection) {
      int idx = id_index(id);
      if (idx >= 0 && units_[size_t(idx)].owner == pid) out.push_back(&units_[size_t(idx)]);
    }
    return out;
  };
  auto issue = [&](Unit* u, Command cmd, bool queued) {
    if (u->is_building(defs_)) return;
    if (u->build_progress < stats_of(*u).build_time) return;
    if (!queued) u->commands.clear();
    u->commands.push_back(cmd);
    u->target_unit = -1;
  };

  if (name == "no_op") {
    return;
  } else if (name == "move_camera") {
    Point2i w = minimap_to_world(*a.minimap);
    pl.camera = clamp_camera({w.r - cfg_.camera_size / 2, w.c - cfg_.camera_size / 2});
  } else if (name == "select_point") {
    Point2i w = screen_to_world(pid, *a.screen1);
    const Unit* u = unit_at(w);
    if (u && u->owner == pid)
      select_units(pid, {u->id}, *a.select_modifier);
    else if (*a.select_modifier == 0)
      pl.selection.clear();
  } else if (name == "select_rect") {
    Point2i w1 = screen_to_world(pid, *a.screen1);
    Point2i w2 = screen_to_world(pid, *a.screen2);
    Point2i lo{std::min(w1.r, w2.r), std::min(w1.c, w2.c)};
    Point2i hi{std::max(w1.r, w2.r), std::max(w1.c, w2.c)};
    std::vector<int> ids;
    for (const Unit& u : units_)
      if (u.owner == pid && u.pos.r >= lo.r && u.pos.r <= hi.r && u.pos.c >= lo.c &&
          u.pos.c <= hi.c)
        ids.push_back(u.id);
    select_units(pid, ids, *a.select_modifier);
  } else if (name == "select_army") {
    std::vector<int> ids;
    for (const Unit& u : units_)
      if (u.owner == pid && u.type == UnitType::kSoldier &&
          u.build_progress >= stats_of(u).build_time)
        ids.push_back(u.id);
    if (!ids.empty()) select_units(pid, ids, 0);
  } else if (name == "select_control_group") {
    int g = *a.control_group_id;
    auto& group = pl.groups[size_t(g)];
    group.erase(std::remove_if(group.begin(), group.end(),
                               [&](int id) { return id_index(id) < 0; }),
                group.end());
    switch (*a.control_group_op) {
      case int(ControlGroupOp::kRecall):
        pl.selection = group;
        break;
      case int(ControlGroupOp::kSet):
        group = pl.selection;
        pl.group_first_type[size_t(g)] = 0;
        if (!group.empty()) {
          const Unit* u = unit_by_id(group.front());
          pl.group_first_type[size_t(g)] = u ? int(u->type) : 0;
        }
        break;
      case int(ControlGroupOp::kAppend):
        for (int id : pl.selection)
          if (std::find(group.begin(), group.end(), id) == group.end()) group.push_back(id);
        if (pl.group_first_type[size_t(g)] == 0 && !group.empty()) {
          const Unit* u = unit_by_id(group.front());
          pl.group_first_type[size_t(g)] = u ? int(u->type) : 0;
        }
        break;
    }
  } else if (name == "move_screen" || name == "move_minimap" || name == "attack_screen" ||
             name == "attack_minimap") {
    bool attack = name[0] == 'a';
    Point2i w = a.screen1 ? screen_to_world(pid, *a.screen1) : minimap_to_world(*a.minimap);
    Command cmd;
    cmd.kind = attack ? CommandKind::kAttackMove : CommandKind::kMove;
    cmd.target = w;
    for (Unit* u : selected_units()) issue(u, cmd, *a.queued == 1);
  } else if (name == "gather_screen") {
    Point2i w = screen_to_world(pid, *a.screen1);
    const Unit* res = unit_at(w);
    if (!res || !res->is_resource()) {
      // snap to a nearby resource so slightly-off clicks still work
      Unit* near = nearest_resource(w, 3);
      res = near;
    }
    if (res) {
      Command cmd;
      cmd.kind = CommandKind::kGather;
      cmd.target = res->pos;
      cmd.target_unit = res->id;
      for (Unit* u : selected_units())
        if (u->type == UnitType::kWorker) issue(u, cmd, *a.queued == 1);
    }
  } else if (name == "build_barracks" || name == "build_base") {
    UnitType bt = name == "build_base" ? UnitType::kBase : UnitType::kBarracks;
    const UnitStats& s = defs_.stats[int(race)][int(bt)];
    if (pl.minerals < s.mineral_cost || pl.vespene < s.vespene_cost) return;
    Point2i w = screen_to_world(pid, *a.screen1);
    for (Unit* u : selected_units()) {
      if (u->type != UnitType::kWorker) continue;
      Command cmd;
      cmd.kind = CommandKind::kBuild;
      cmd.target = w;
      cmd.build_type = bt;
      issue(u, cmd, *a.queued == 1);
      break;  // one builder
    }
  } else if (name == "train_worker" || name == "train_soldier") {
    UnitType tt = name == "train_worker" ? UnitType::kWorker : UnitType::kSoldier;
    UnitType producer = name == "train_worker" ? UnitType::kBase : UnitType::kBarracks;
    const UnitStats& s = defs_.stats[int(race)][int(tt)];
    if (pl.minerals < s.mineral_cost || pl.vespene < s.vespene_cost) return;
    if (supply_used(pid) >= supply_cap(pid)) return;
    for (Unit* u : selected_units()) {
      if (u->type != producer) continue;
      if (u->build_progress < stats_of(*u).build_time) continue;
      if (int(u->production.size()) >= defs_.production_queue_cap) continue;
      pl.minerals -= s.mineral_cost;
      pl.vespene -= s.vespene_cost;
      u->production.push_back({tt, 0});
      break;
    }
  } else if (name == "stop") {
    for (Unit* u : selected_units()) {
      u->commands.clear();
      u->target_unit = -1;
    }
  }
}

void World::advance(int n) {
  for (int i = 0; i < n && !done_; ++i) tick_once();
}

void World::tick_once() {
  // iterate by id order over a snapshot of ids so spawns this tick wait a tick
  std::vector<int> ids;
  ids.reserve(units_.size());
  for (const Unit& u : units_) ids.push_back(u.id);
  for (int id : ids) {
    int idx = id_index(id);
    if (idx < 0) continue;
    step_unit(units_[size_t(idx)]);
  }
  remove_dead();
  ++tick_;
  // update fog-of-war memory
  for (int pid = 0; pid < 2; ++pid) {
    auto vis = visibility(pid);
    auto& seen = players_[pid].seen;
    for (size_t i = 0; i < vis.size(); ++i)
      if (vis[i] == 2) seen[i] = 1;
  }
  check_termination();
}

void World::step_unit(Unit& u) {
  if (u.owner == 2) return;
  const UnitStats& s = stats_of(u);
  if (u.cooldown > 0) --u.cooldown;

  // construction progress handled by the building itself once started
  if (u.is_building(defs_)) {
    if (u.build_progress < s.build_time) return;  // worker drives construction
    if (!u.production.empty()) {
      ProductionItem& it = u.production.front();
      ++it.progress;
      const UnitStats& ts = defs_.stats[int(u.race)][int(it.type)];
      if (it.progress >= ts.build_time) {
        spawn(u.owner, it.type, free_cell_near({u.pos.r + 1, u.pos.c}));
        u.production.erase(u.production.begin());
        note_progress();
      }
    }
    return;
  }
  if (u.build_progress < s.build_time) return;

  if (u.commands.empty()) {
    // idle defense: soldiers engage anything in vision, workers only in range
    int radius = u.type == UnitType::kSoldier ? s.vision : s.range;
    int enemy = find_enemy_in_radius(u, radius);
    if (enemy >= 0) {
      Unit& victim = units_[size_t(id_index(enemy))];
      if (chebyshev(u.pos, victim.pos) <= s.range)
        attack_if_ready(u, victim);
      else if (u.type == UnitType::kSoldier)
        move_toward(u, victim.pos);
    }
    return;
  }

  Command& cmd = u.commands.front();
  switch (cmd.kind) {
    case CommandKind::kMove:
      if (u.pos == cmd.target || chebyshev(u.pos, cmd.target) == 0) {
        u.commands.erase(u.commands.begin());
      } else {
        Point2i before = u.pos;
        move_toward(u, cmd.target);
        if (u.pos == before && chebyshev(u.pos, cmd.target) <= 1)
          u.commands.erase(u.commands.begin());  // destination blocked, close enough
      }
      break;
    case CommandKind::kAttackMove: {
      int enemy = u.target_unit >= 0 && id_index(u.target_unit) >= 0
                      ? u.target_unit
                      : find_enemy_in_radius(u, s.vision);
      if (enemy >= 0) {
        u.target_unit = enemy;
        Unit& victim = units_[size_t(id_index(enemy))];
        if (chebyshev(u.pos, victim.pos) <= s.range)
          attack_if_ready(u, victim);
        else
          move_toward(u, victim.pos);
      } else {
        u.target_unit = -1;
        if (chebyshev(u.pos, cmd.target) <= 1)
          u.commands.erase(u.commands.begin());
        else
          move_toward(u, cmd.target);
      }
      break;
    }
    case CommandKind::kGather:
      step_worker(u, cmd);
      break;
    case CommandKind::kBuild: {
      if (chebyshev(u.pos, cmd.target) > 1) {
        Point2i before = u.pos;
        move_toward(u, cmd.target);
        if (u.pos == before && chebyshev(u.pos, cmd.target) > 1) {
          // path fully blocked; give up rather than wedge forever
          u.commands.erase(u.commands.begin());
        }
        break;
      }
      const Unit* site = unit_at(cmd.target);
      if (site && site->id != u.id) {
        if (site->owner == u.owner && site->type == cmd.build_type &&
            site->build_progress < defs_.stats[int(site->race)][int(site->type)].build_time) {
          // resume construction
          int idx = id_index(site->id);
          Unit& b = units_[size_t(idx)];
          ++b.build_progress;
          if (b.build_progress >= defs_.stats[int(b.race)][int(b.type)].build_time) {
            build_log_[size_t(b.owner)].push_back(int32_t(b.type));
            u.commands.erase(u.commands.begin());
            note_progress();
          }
        } else {
          u.commands.erase(u.commands.begin());  // spot taken
        }
        break;
      }
      const UnitStats& bs = defs_.stats[int(u.race)][int(cmd.build_type)];
      PlayerState& pl = players_[size_t(u.owner)];
      if (pl.minerals < bs.mineral_cost || pl.vespene < bs.vespene_cost) {
        u.commands.erase(u.commands.begin());
        break;
      }
      pl.minerals -= bs.mineral_cost;
      pl.vespene -= bs.vespene_cost;
      int bid = spawn(u.owner, cmd.build_type, cmd.target, /*completed=*/false);
      (void)bid;
      note_progress();
      break;
    }
  }
}

void World::step_worker(Unit& u, Command& cmd) {
  const UnitStats& s = stats_of(u);
  PlayerState& pl = players_[size_t(u.owner)];
  bool full = u.carry_minerals >= defs_.worker_carry_minerals ||
              u.carry_vespene >= defs_.worker_carry_vespene;
  if (full || (u.carry_minerals + u.carry_vespene > 0 && id_index(cmd.target_unit) < 0)) {
    Unit* base = nearest_own(u.owner, UnitType::kBase, u.pos, /*completed_only=*/true);
    if (!base) return;  // nowhere to return; wait
    if (chebyshev(u.pos, base->pos) <= 1) {
      pl.minerals += u.carry_minerals;
      pl.vespene += u.carry_vespene;
      pl.step_events.minerals_collected += u.carry_minerals;
      pl.step_events.vespene_collected += u.carry_vespene;
      u.carry_minerals = u.carry_vespene = 0;
      note_progress();
    } else {
      move_toward(u, base->pos);
    }
    return;
  }
  int ridx = id_index(cmd.target_unit);
  if (ridx < 0) {
    // patch mined out; retarget the closest remaining resource
    Unit* res = nearest_resource(u.pos, cfg_.world_size);
    if (!res) {
      u.commands.erase(u.commands.begin());
      return;
    }
    cmd.target_unit = res->id;
    cmd.target = res->pos;
    return;
  }
  Unit& res = units_[size_t(ridx)];
  if (chebyshev(u.pos, res.pos) <= 1) {
    if (res.resources_left > 0) {
      res.resources_left -= 1;
      if (res.type == UnitType::kMinerals)
        u.carry_minerals += 1;
      else
        u.carry_vespene += 1;
      if (res.resources_left <= 0) res.hp = 0;  // mined out
    }
  } else {
    move_toward(u, res.pos);
  }
  (void)s;
}

void World::move_toward(Unit& u, Point2i target) {
  int dr = target.r == u.pos.r ? 0 : (target.r > u.pos.r ? 1 : -1);
  int dc = target.c == u.pos.c ? 0 : (target.c > u.pos.c ? 1 : -1);
  if (try_move(u, {u.pos.r + dr, u.pos.c + dc})) return;
  if (dr != 0 && try_move(u, {u.pos.r + dr, u.pos.c})) return;
  if (dc != 0 && try_move(u, {u.pos.r, u.pos.c + dc})) return;
  // sidestep perpendicular to the blocked axis, biased by unit id for variety
  int side = (u.id % 2 == 0) ? 1 : -1;
  if (dr == 0 && dc != 0) {
    if (try_move(u, {u.pos.r + side, u.pos.c + dc})) return;
    if (try_move(u, {u.pos.r - side, u.pos.c + dc})) return;
    if (try_move(u, {u.pos.r + side, u.pos.c})) return;
    if (try_move(u, {u.pos.r - side, u.pos.c})) return;
  } else if (dc == 0 && dr != 0) {
    if (try_move(u, {u.pos.r + dr, u.pos.c + side})) return;
    if (try_move(u, {u.pos.r + dr, u.pos.c - side})) return;
    if (try_move(u, {u.pos.r, u.pos.c + side})) return;
    if (try_move(u, {u.pos.r, u.pos.c - side})) return;
  }
}

bool World::try_move(Unit& u, Point2i to) {
  if (!in_grid(to) || (to.r == u.pos.r && to.c == u.pos.c)) return false;
  if (occ(to) >= 0) return false;
  set_occ(u.pos, -1);
  set_occ(to, u.id);
  u.pos = to;
  return true;
}

bool World::attack_if_ready(Unit& u, Unit& victim) {
  if (u.cooldown > 0) return false;
  const UnitStats& s = stats_of(u);
  u.cooldown = s.attack_cooldown;
  deal_damage(u.owner, victim.id, s.damage);
  return true;
}

void World::deal_damage(int attacker_owner, int victim_id, int amount) {
  int idx = id_index(victim_id);
  if (idx < 0) return;
  Unit& v = units_[size_t(idx)];
  v.hp -= amount;
  if (v.hp <= 0 && v.owner < 2) {
    const UnitStats& vs = stats_of(v);
    double value = vs.total_cost();
    if (attacker_owner >= 0 && attacker_owner < 2 && attacker_owner != v.owner) {
      PlayerState& killer = players_[size_t(attacker_owner)];
      killer.kills_value += value;
      if (v.is_building(defs_))
        killer.step_events.kill_building_value += value;
      else
        killer.step_events.kill_unit_value += value;
    }
    players_[size_t(v.owner)].lost_value += value;
    note_progress();
  }
}

void World::deposit(int pid, int minerals, int vespene) {
  players_[size_t(pid)].minerals += minerals;
  players_[size_t(pid)].vespene += vespene;
  players_[size_t(pid)].step_events.minerals_collected += minerals;
  players_[size_t(pid)].step_events.vespene_collected += vespene;
}

int World::find_enemy_in_radius(const Unit& u, int radius) const {
  int best = -1, best_d = radius + 1;
  for (const Unit& v : units_) {
    if (v.owner == u.owner || v.owner == 2) continue;
    if (v.hp <= 0) continue;
    int d = chebyshev(u.pos, v.pos);
    // prefer combat units over buildings at equal distance
    if (d < best_d || (d == best_d && best >= 0)) {
      if (d > radius) continue;
      if (d < best_d) {
        best = v.id;
        best_d = d;
      } else {
        const Unit* cur = unit_by_id(best);
        bool cur_building = cur && cur->is_building(defs_);
        if (cur_building && !v.is_building(defs_)) best = v.id;
      }
    }
  }
  return best;
}

Unit* World::nearest_own(int pid, UnitType type, Point2i from, bool completed_only) {
  Unit* best = nullptr;
  int best_d = 1 << 30;
  for (Unit& u : units_) {
    if (u.owner != pid || u.type != type) continue;
    if (completed_only && u.build_progress < stats_of(u).build_time) continue;
    int d = chebyshev(from, u.pos);
    if (d < best_d) {
      best = &u;
      best_d = d;
    }
  }
  return best;
}

Unit* World::nearest_resource(Point2i from, int max_dist) {
  Unit* best = nullptr;
  int best_d = max_dist + 1;
  for (Unit& u : units_) {
    if (!u.is_resource() || u.resources_left <= 0) continue;
    int d = chebyshev(from, u.pos);
    if (d < best_d) {
      best = &u;
      best_d = d;
    }
  }
  return best;
}

void World::remove_dead() {
  for (auto it = units_.begin(); it != units_.end();) {
    if (it->hp <= 0) {
      set_occ(it->pos, -1);
      int dead = it->id;
      for (int pid = 0; pid < 2; ++pid) {
        auto& sel = players_[pid].selection;
        sel.erase(std::remove(sel.begin(), sel.end(), dead), sel.end());
        for (auto& g : players_[pid].groups)
          g.erase(std::remove(g.begin(), g.end(), dead), g.end());
      }
      it = units_.erase(it);
    } else {
      ++it;
    }
  }
}

void World::check_termination() {
  if (done_) return;
  int b0 = count_buildings(0), b1 = count_buildings(1);
  if (b0 == 0 || b1 == 0) {
    done_ = true;
    result_ = (b0 == 0 && b1 == 0) ? 0 : (b1 == 0 ? 1 : -1);
    return;
  }
  if (tick_ >= cfg_.max_ticks || tick_ - last_progress_tick_ >= cfg_.draw_ticks) {
    done_ = true;
    draw_ = true;
    result_ = 0;
  }
}

uint64_t World::state_hash() const {
  uint64_t h = fnv1a64("world", 5);
  auto mix = [&h](int64_t v) {
    h ^= uint64_t(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  mix(tick_);
  mix(int64_t(units_.size()));
  for (const Unit& u : units_) {
    mix(u.id);
    mix(u.owner);
    mix(int(u.type));
    mix(u.pos.r * 1024 + u.pos.c);
    mix(u.hp);
    mix(u.build_progress);
    mix(u.cooldown);
    mix(u.carry_minerals * 100 + u.carry_vespene);
    mix(u.resources_left);
    mix(int64_t(u.commands.size()));
    for (const Command& c : u.commands) {
      mix(int(c.kind));
      mix(c.target.r * 1024 + c.target.c);
      mix(int(c.build_type));
    }
    for (const ProductionItem& p : u.production) {
      mix(int(p.type));
      mix(p.progress);
    }
  }
  for (const PlayerState& p : players_) {
    mix(p.minerals);
    mix(p.vespene);
    mix(p.camera.r * 1024 + p.camera.c);
    mix(int64_t(p.selection.size()));
    for (int id : p.selection) mix(id);
    for (const auto& g : p.groups) {
      mix(int64_t(g.size()));
      for (int id : g) mix(id);
    }
  }
  mix(done_ ? 1 : 0);
  mix(result_);
  return h;
}

}  // namespace startrain::env
