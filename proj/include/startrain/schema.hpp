#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "startrain/common.hpp"

namespace startrain {

// Parameters an action may require. Delay is required by every action.
enum class Param {
  kDelay = 0,
  kQueued,
  kScreen1,
  kScreen2,
  kMinimap,
  kControlGroupId,
  kControlGroupOp,
  kSelectModifier,
};
constexpr int kNumParams = 8;

const char* param_name(Param p);
std::optional<Param> param_from_name(const std::string& name);

enum class ControlGroupOp { kRecall = 0, kSet = 1, kAppend = 2 };
constexpr int kNumControlGroupOps = 3;
constexpr int kNumControlGroups = 10;
constexpr int kNumSelectModifiers = 2;  // replace, add

struct ActionDef {
  std::string name;
  std::vector<Param> params;  // always starts with kDelay

  bool needs(Param p) const;
};

struct HierarchicalAction {
  int action_id = 0;
  int delay_bucket = 0;
  std::optional<int> queued;            // 0/1
  std::optional<Point2i> screen1;
  std::optional<Point2i> screen2;
  std::optional<Point2i> minimap;
  std::optional<int> control_group_id;  // 0..9
  std::optional<int> control_group_op;  // ControlGroupOp
  std::optional<int> select_modifier;   // 0 replace, 1 add

  bool has(Param p) const;
  bool operator==(const HierarchicalAction&) const = default;
};

enum class LayerKind { kCategorical, kNumeric };

struct FeatureLayer {
  std::string name;
  LayerKind kind = LayerKind::kNumeric;
  int cardinality = 2;   // categorical only; 2 means binary (passed through)
  double max_value = 1;  // numeric only

  bool binary() const { return kind == LayerKind::kCategorical && cardinality == 2; }
};

// Column layout of a variable-length item list input.
struct ItemListSpec {
  std::string name;
  std::vector<FeatureLayer> columns;
  int width() const { return static_cast<int>(columns.size()); }
};

constexpr int kItemListCap = 32;   // rows beyond this are ignored
constexpr int kBuildOrderLen = 20;
constexpr int kMmrBuckets = 6;
constexpr int kNumPlayerScalars = 11;

struct FeatureSpec {
  int screen_size = 64;
  int minimap_size = 64;
  std::vector<FeatureLayer> screen;
  std::vector<FeatureLayer> minimap;
  std::vector<ItemListSpec> lists;  // cargo, multi_select, production_queue, single_select
  std::array<double, kNumPlayerScalars> player_max{};
  int num_unit_types = 7;  // build_order / control-group type ids, 0 = null
  double hour_ticks = 28800;
};

// The delay head's codomain: a strictly increasing table of tick counts.
struct DelayBuckets {
  std::vector<int> ticks;

  static DelayBuckets geometric(int count, int max_ticks);
  int count() const { return static_cast<int>(ticks.size()); }
  int ticks_of(int bucket) const;
  // Largest bucket whose tick count <= raw (raw clamped to [1, max]).
  int bucket_of(int64_t raw_ticks) const;
};

struct ActionSchema {
  int version = 1;
  std::vector<ActionDef> actions;
  FeatureSpec features;
  DelayBuckets delay;

  int num_actions() const { return static_cast<int>(actions.size()); }
  int find_action(const std::string& name) const;  // -1 when absent
  const ActionDef& action(int id) const;           // SchemaError on bad id

  std::string to_json() const;  // canonical form, bit-exact round trip
  static ActionSchema from_json(const std::string& text);
  uint64_t hash() const { return fnv1a64(to_json()); }
};

// Returns the static parameter list for an action. Throws SchemaError on
// an unknown id.
std::vector<Param> required_params(const ActionSchema& schema, int action_id);

enum class Violation { kUnavailable, kMissingParam, kExtraParam, kOutOfGrid };
const char* violation_name(Violation v);

// Structural + mask validation. Never throws; all problems are returned.
std::vector<Violation> validate_action(const ActionSchema& schema, const HierarchicalAction& action,
                                       const std::vector<uint8_t>& available_mask);

struct ItemList {
  int n = 0;                       // true row count before truncation
  std::vector<int32_t> rows;       // min(n, cap) * width, row-major

  int stored_rows(int width) const { return width ? static_cast<int>(rows.size()) / width : 0; }
  bool operator==(const ItemList&) const = default;
};

struct FeatureObservation {
  std::vector<int32_t> screen;    // layer-major, C_s * H * H
  std::vector<int32_t> minimap;   // C_m * M * M
  ItemList cargo, multi_select, production_queue, single_select;
  std::array<int32_t, kNumControlGroups * 2> control_groups{};
  std::array<int32_t, kNumControlGroups * 2> control_groups_hint{};
  std::array<double, kNumPlayerScalars> player{};
  double game_loop = 0;  // 1.0 after one in-game hour
  std::vector<uint8_t> available_actions;
  int32_t prev_action = 0;  // last non-no-op action id
  std::array<int32_t, kBuildOrderLen> build_order{};  // 0 = null id
  int32_t mmr_bucket = 0;
  Point2i prev_screen_point{-1, -1};
  Point2i prev_minimap_point{-1, -1};

  bool operator==(const FeatureObservation&) const = default;
  uint64_t content_hash() const;
};

struct RewardBreakdown {
  double game_result = 0;  // -1, 0, 1 at termination; 0 otherwise
  double kill_unit_value = 0;
  double kill_building_value = 0;
  double minerals_collected = 0;
  double vespene_collected = 0;

  static constexpr double kKillUnitCoef = 0.00003;
  static constexpr double kKillBuildingCoef = 0.0001;
  static constexpr double kMineralsCoef = 0.00001;
  static constexpr double kVespeneCoef = 0.00003;
  static constexpr int kNumComponents = 5;

  std::array<double, kNumComponents> raw() const {
    return {game_result, kill_unit_value, kill_building_value, minerals_collected, vespene_collected};
  }
  std::array<double, kNumComponents> shaped() const {
    return {game_result, kill_unit_value * kKillUnitCoef, kill_building_value * kKillBuildingCoef,
            minerals_collected * kMineralsCoef, vespene_collected * kVespeneCoef};
  }
  double total() const {
    double t = 0;
    for (double x : shaped()) t += x;
    return t;
  }
  RewardBreakdown& operator+=(const RewardBreakdown& o);
};

const std::array<std::string, RewardBreakdown::kNumComponents>& reward_component_names();

// The bundled MiniRTS schema: 16 actions over a configurable grid.
struct MiniRtsSchemaConfig {
  int screen_size = 64;
  int minimap_size = 64;
  int delay_buckets = 128;
  int max_delay_ticks = 128;
  double hour_ticks = 28800;
};
ActionSchema make_minirts_schema(const MiniRtsSchemaConfig& cfg = {});

// Well-known MiniRTS action ids (stable in the bundled schema).
namespace act {
constexpr int kNoOp = 0;
constexpr int kMoveCamera = 1;
constexpr int kSelectPoint = 2;
constexpr int kSelectRect = 3;
constexpr int kSelectArmy = 4;
constexpr int kSelectControlGroup = 5;
constexpr int kMoveScreen = 6;
constexpr int kMoveMinimap = 7;
constexpr int kAttackScreen = 8;
constexpr int kAttackMinimap = 9;
constexpr int kGatherScreen = 10;
constexpr int kBuildBarracks = 11;
constexpr int kBuildBase = 12;
constexpr int kTrainWorker = 13;
constexpr int kTrainSoldier = 14;
constexpr int kStop = 15;
constexpr int kCount = 16;
}  // namespace act

}  // namespace startrain
