#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "startrain/schema.hpp"

namespace startrain::env {

enum class UnitType : int {
  kNone = 0,
  kBase = 1,
  kBarracks = 2,
  kWorker = 3,
  kSoldier = 4,
  kMinerals = 5,
  kGeyser = 6,
};
constexpr int kNumUnitTypes = 7;
const char* unit_type_name(UnitType t);

enum class Race : int { kAlpha = 0, kBeta = 1, kGamma = 2 };
const char* race_name(Race r);
Race race_from_name(const std::string& name);

struct UnitStats {
  int max_hp = 1;
  int damage = 0;
  int range = 1;
  int attack_cooldown = 5;
  int vision = 4;
  int mineral_cost = 0;
  int vespene_cost = 0;
  int build_time = 1;
  int supply = 0;
  bool building = false;

  int total_cost() const { return mineral_cost + vespene_cost; }
};

// Map + unit content. Serializable so maps/balance can be swapped without
// recompiling.
struct WorldDefs {
  int version = 1;
  // stats[race][type]; neutral types ignore the race index
  std::array<std::array<UnitStats, kNumUnitTypes>, 3> stats{};
  int patch_minerals = 800;
  int geyser_vespene = 600;
  int patches_per_base = 3;
  int start_workers = 4;
  int start_minerals = 100;
  int start_vespene = 0;
  int supply_per_base = 10;
  int supply_cap = 40;
  int worker_carry_minerals = 8;
  int worker_carry_vespene = 4;
  int production_queue_cap = 5;
  int selection_cap = 32;

  static WorldDefs builtin();
  std::string to_json() const;
  static WorldDefs from_json(const std::string& text);
};

enum class CommandKind { kMove, kAttackMove, kGather, kBuild };

struct Command {
  CommandKind kind = CommandKind::kMove;
  Point2i target;         // world cell
  int target_unit = -1;   // gather target
  UnitType build_type = UnitType::kNone;
};

struct ProductionItem {
  UnitType type = UnitType::kNone;
  int progress = 0;
};

struct Unit {
  int id = -1;
  int owner = 2;  // 0, 1, or 2 for neutral
  UnitType type = UnitType::kNone;
  Race race = Race::kAlpha;
  Point2i pos;
  int hp = 1;
  int build_progress = 0;  // < build_time while under construction
  int cooldown = 0;
  int carry_minerals = 0;
  int carry_vespene = 0;
  int resources_left = 0;  // patches and geysers
  int target_unit = -1;
  std::vector<Command> commands;
  std::vector<ProductionItem> production;

  bool is_building(const WorldDefs& d) const { return d.stats[0][int(type)].building; }
  bool is_resource() const { return type == UnitType::kMinerals || type == UnitType::kGeyser; }
};

struct PlayerState {
  Race race = Race::kAlpha;
  int minerals = 0;
  int vespene = 0;
  Point2i camera;  // top-left world cell of the camera rectangle
  std::vector<int> selection;
  std::array<std::vector<int>, kNumControlGroups> groups;
  std::array<int, kNumControlGroups> group_first_type{};
  double kills_value = 0;
  double lost_value = 0;
  std::vector<uint8_t> seen;         // ever-visible world cells
  RewardBreakdown step_events;       // accumulates within the current step window
  Point2i start_base;                // initial base location (scripts use it)
};

struct WorldConfig {
  int world_size = 64;
  int camera_size = 32;
  int screen_size = 64;
  int minimap_size = 64;
  int draw_ticks = 500;
  int max_ticks = 5000;
};

// Deterministic two-player grid RTS. All randomness comes from the reset
// seed (map generation only); advancing is a pure function of state.
class World {
 public:
  World(const WorldConfig& cfg, const WorldDefs& defs);

  void init(uint64_t seed, Race p0_race, Race p1_race);

  // Applies one interface action for a player at the current tick.
  void apply_action(int pid, const HierarchicalAction& a, const ActionSchema& schema);
  // Simulates exactly n ticks (stops early at termination).
  void advance(int n);

  bool done() const { return done_; }
  int result() const { return result_; }  // from player 0's perspective
  bool is_draw() const { return done_ && draw_; }
  int tick() const { return tick_; }

  const WorldConfig& config() const { return cfg_; }
  const WorldDefs& defs() const { return defs_; }
  const std::vector<Unit>& units() const { return units_; }
  const Unit* unit_by_id(int id) const;
  const Unit* unit_at(Point2i cell) const;
  PlayerState& player(int pid) { return players_[pid]; }
  const PlayerState& player(int pid) const { return players_[pid]; }

  std::vector<uint8_t> visibility(int pid) const;  // 0 hidden, 1 seen, 2 visible
  std::vector<uint8_t> available_mask(int pid, const ActionSchema& schema) const;

  // Unit types completed by each player, in completion order (starting units
  // excluded). Feeds build-order extraction.
  const std::vector<int32_t>& build_log(int pid) const { return build_log_[size_t(pid)]; }

  int supply_used(int pid) const;
  int supply_cap(int pid) const;
  int count_units(int pid, UnitType t) const;        // completed only
  int count_buildings(int pid) const;                // includes unfinished
  int count_idle_workers(int pid) const;

  Point2i screen_to_world(int pid, Point2i screen_pt) const;
  Point2i minimap_to_world(Point2i minimap_pt) const;
  Point2i clamp_camera(Point2i top_left) const;

  // Test hooks; also used by map setup.
  int spawn(int owner, UnitType type, Point2i pos, bool completed = true);
  void deal_damage(int attacker_owner, int victim_id, int amount);
  void deposit(int pid, int minerals, int vespene);
  void force_camera(int pid, Point2i top_left) { players_[pid].camera = clamp_camera(top_left); }

  uint64_t state_hash() const;

 private:
  int id_index(int id) const;
  void tick_once();
  void step_unit(Unit& u);
  void step_worker(Unit& u, Command& cmd);
  void move_toward(Unit& u, Point2i target);
  bool try_move(Unit& u, Point2i to);
  bool attack_if_ready(Unit& u, Unit& victim);
  int find_enemy_in_radius(const Unit& u, int radius) const;
  Unit* nearest_own(int pid, UnitType type, Point2i from, bool completed_only);
  Unit* nearest_resource(Point2i from, int max_dist);
  void remove_dead();
  void note_progress() { last_progress_tick_ = tick_; }
  void check_termination();
  void select_units(int pid, std::vector<int> ids, int modifier);
  Point2i free_cell_near(Point2i origin) const;
  bool in_grid(Point2i p) const {
    return p.r >= 0 && p.c >= 0 && p.r < cfg_.world_size && p.c < cfg_.world_size;
  }
  int occ(Point2i p) const { return occupancy_[p.r * cfg_.world_size + p.c]; }
  void set_occ(Point2i p, int id) { occupancy_[p.r * cfg_.world_size + p.c] = id; }
  const UnitStats& stats_of(const Unit& u) const { return defs_.stats[int(u.race)][int(u.type)]; }

  WorldConfig cfg_;
  WorldDefs defs_;
  bool initializing_ = false;
  std::array<std::vector<int32_t>, 2> build_log_;
  std::vector<Unit> units_;
  std::vector<int32_t> occupancy_;
  std::array<PlayerState, 2> players_;
  int next_id_ = 0;
  int tick_ = 0;
  int last_progress_tick_ = 0;
  bool done_ = false;
  bool draw_ = false;
  int result_ = 0;
};

}  // namespace startrain::env
