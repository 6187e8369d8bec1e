#include "startrain/schema.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace startrain {

using json = nlohmann::ordered_json;

namespace {
const char* kParamNames[kNumParams] = {"delay",   "queued",           "screen1",
                                       "screen2", "minimap",          "control_group_id",
                                       "control_group_op", "select_modifier"};
}  // namespace

const char* param_name(Param p) { return kParamNames[static_cast<int>(p)]; }

std::optional<Param> param_from_name(const std::string& name) {
  for (int i = 0; i < kNumParams; ++i)
    if (name == kParamNames[i]) return static_cast<Param>(i);
  return std::nullopt;
}

bool ActionDef::needs(Param p) const {
  return std::find(params.begin(), params.end(), p) != params.end();
}

bool HierarchicalAction::has(Param p) const {
  switch (p) {
    case Param::kDelay: return true;
    case Param::kQueued: return queued.has_value();
    case Param::kScreen1: return screen1.has_value();
    case Param::kScreen2: return screen2.has_value();
    case Param::kMinimap: return minimap.has_value();
    case Param::kControlGroupId: return control_group_id.has_value();
    case Param::kControlGroupOp: return control_group_op.has_value();
    case Param::kSelectModifier: return select_modifier.has_value();
  }
  return false;
}

DelayBuckets DelayBuckets::geometric(int count, int max_ticks) {
  if (count < 1 || max_ticks < 1) throw SchemaError("delay buckets need count >= 1, max >= 1");
  DelayBuckets b;
  b.ticks.resize(count);
  b.ticks[0] = 1;
  for (int i = 1; i < count; ++i) {
    double g = std::pow(static_cast<double>(max_ticks), static_cast<double>(i) / (count - 1));
    b.ticks[i] = std::max(b.ticks[i - 1] + 1, static_cast<int>(std::llround(g)));
  }
  return b;
}

int DelayBuckets::ticks_of(int bucket) const {
  if (bucket < 0 || bucket >= count()) throw SchemaError("delay bucket out of range");
  return ticks[bucket];
}

int DelayBuckets::bucket_of(int64_t raw_ticks) const {
  if (raw_ticks < 1) raw_ticks = 1;
  auto it = std::upper_bound(ticks.begin(), ticks.end(), static_cast<int>(std::min<int64_t>(raw_ticks, ticks.back())));
  return static_cast<int>(std::distance(ticks.begin(), it)) - 1;
}

int ActionSchema::find_action(const std::string& name) const {
  for (int i = 0; i < num_actions(); ++i)
    if (actions[i].name == name) return i;
  return -1;
}

const ActionDef& ActionSchema::action(int id) const {
  if (id < 0 || id >= num_actions()) throw SchemaError("unknown action id " + std::to_string(id));
  return actions[id];
}

std::vector<Param> required_params(const ActionSchema& schema, int action_id) {
  return schema.action(action_id).params;
}

const char* violation_name(Violation v) {
  switch (v) {
    case Violation::kUnavailable: return "unavailable";
    case Violation::kMissingParam: return "missing_param";
    case Violation::kExtraParam: return "extra_param";
    case Violation::kOutOfGrid: return "out_of_grid";
  }
  return "?";
}

std::vector<Violation> validate_action(const ActionSchema& schema, const HierarchicalAction& a,
                                       const std::vector<uint8_t>& mask) {
  std::vector<Violation> v;
  if (a.action_id < 0 || a.action_id >= schema.num_actions() ||
      a.action_id >= static_cast<int>(mask.size())) {
    v.push_back(Violation::kUnavailable);
    return v;
  }
  if (!mask[a.action_id]) v.push_back(Violation::kUnavailable);

  const ActionDef& def = schema.actions[a.action_id];
  for (int i = 0; i < kNumParams; ++i) {
    Param p = static_cast<Param>(i);
    bool required = def.needs(p);
    bool present = a.has(p);
    if (required && !present) v.push_back(Violation::kMissingParam);
    if (!required && present && p != Param::kDelay) v.push_back(Violation::kExtraParam);
  }

  auto check_point = [&](const std::optional<Point2i>& pt, int size) {
    if (pt && (pt->r < 0 || pt->c < 0 || pt->r >= size || pt->c >= size))
      v.push_back(Violation::kOutOfGrid);
  };
  check_point(a.screen1, schema.features.screen_size);
  check_point(a.screen2, schema.features.screen_size);
  check_point(a.minimap, schema.features.minimap_size);
  if (a.delay_bucket < 0 || a.delay_bucket >= schema.delay.count()) v.push_back(Violation::kOutOfGrid);
  if (a.queued && (*a.queued < 0 || *a.queued > 1)) v.push_back(Violation::kOutOfGrid);
  if (a.control_group_id && (*a.control_group_id < 0 || *a.control_group_id >= kNumControlGroups))
    v.push_back(Violation::kOutOfGrid);
  if (a.control_group_op && (*a.control_group_op < 0 || *a.control_group_op >= kNumControlGroupOps))
    v.push_back(Violation::kOutOfGrid);
  if (a.select_modifier && (*a.select_modifier < 0 || *a.select_modifier >= kNumSelectModifiers))
    v.push_back(Violation::kOutOfGrid);
  return v;
}

namespace {

json layer_to_json(const FeatureLayer& l) {
  json j;
  j["name"] = l.name;
  if (l.kind == LayerKind::kCategorical) {
    j["kind"] = "categorical";
    j["cardinality"] = l.cardinality;
  } else {
    j["kind"] = "numeric";
    j["max"] = l.max_value;
  }
  return j;
}

FeatureLayer layer_from_json(const json& j) {
  FeatureLayer l;
  l.name = j.at("name").get<std::string>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "categorical") {
    l.kind = LayerKind::kCategorical;
    l.cardinality = j.at("cardinality").get<int>();
  } else if (kind == "numeric") {
    l.kind = LayerKind::kNumeric;
    l.max_value = j.at("max").get<double>();
  } else {
    throw SchemaError("unknown layer kind: " + kind);
  }
  return l;
}

}  // namespace

std::string ActionSchema::to_json() const {
  json j;
  j["version"] = version;
  json acts = json::array();
  for (const auto& a : actions) {
    json ja;
    ja["name"] = a.name;
    json ps = json::array();
    for (Param p : a.params) ps.push_back(param_name(p));
    ja["params"] = ps;
    acts.push_back(ja);
  }
  j["actions"] = acts;

  json f;
  f["screen_size"] = features.screen_size;
  f["minimap_size"] = features.minimap_size;
  json sl = json::array(), ml = json::array();
  for (const auto& l : features.screen) sl.push_back(layer_to_json(l));
  for (const auto& l : features.minimap) ml.push_back(layer_to_json(l));
  f["screen"] = sl;
  f["minimap"] = ml;
  json lists = json::array();
  for (const auto& ls : features.lists) {
    json jl;
    jl["name"] = ls.name;
    json cols = json::array();
    for (const auto& c : ls.columns) cols.push_back(layer_to_json(c));
    jl["columns"] = cols;
    lists.push_back(jl);
  }
  f["lists"] = lists;
  f["player_max"] = features.player_max;
  f["num_unit_types"] = features.num_unit_types;
  f["hour_ticks"] = features.hour_ticks;
  j["features"] = f;
  j["delay_ticks"] = delay.ticks;
  return j.dump(1);
}

ActionSchema ActionSchema::from_json(const std::string& text) try {
  json j = json::parse(text);
  ActionSchema s;
  s.version = j.at("version").get<int>();
  if (s.version != 1) throw SchemaError("unsupported schema version " + std::to_string(s.version));
  for (const auto& ja : j.at("actions")) {
    ActionDef d;
    d.name = ja.at("name").get<std::string>();
    for (const auto& jp : ja.at("params")) {
      auto p = param_from_name(jp.get<std::string>());
      if (!p) throw SchemaError("unknown param name: " + jp.get<std::string>());
      d.params.push_back(*p);
    }
    if (d.params.empty() || d.params[0] != Param::kDelay)
      throw SchemaError("action " + d.name + " must list delay first");
    s.actions.push_back(std::move(d));
  }
  const json& f = j.at("features");
  s.features.screen_size = f.at("screen_size").get<int>();
  s.features.minimap_size = f.at("minimap_size").get<int>();
  for (const auto& jl : f.at("screen")) s.features.screen.push_back(layer_from_json(jl));
  for (const auto& jl : f.at("minimap")) s.features.minimap.push_back(layer_from_json(jl));
  for (const auto& jl : f.at("lists")) {
    ItemListSpec ls;
    ls.name = jl.at("name").get<std::string>();
    for (const auto& jc : jl.at("columns")) ls.columns.push_back(layer_from_json(jc));
    s.features.lists.push_back(std::move(ls));
  }
  auto pm = f.at("player_max").get<std::vector<double>>();
  if (pm.size() != kNumPlayerScalars) throw SchemaError("player_max must have 11 entries");
  std::copy(pm.begin(), pm.end(), s.features.player_max.begin());
  s.features.num_unit_types = f.at("num_unit_types").get<int>();
  s.features.hour_ticks = f.at("hour_ticks").get<double>();
  s.delay.ticks = j.at("delay_ticks").get<std::vector<int>>();
  for (size_t i = 1; i < s.delay.ticks.size(); ++i)
    if (s.delay.ticks[i] <= s.delay.ticks[i - 1]) throw SchemaError("delay ticks must increase");
  if (s.delay.ticks.empty() || s.delay.ticks[0] < 1) throw SchemaError("bad delay ticks");
  return s;
} catch (const SchemaError&) {
  throw;
} catch (const std::exception& e) {
  throw SchemaError(std::string("schema parse error: ") + e.what());
}

RewardBreakdown& RewardBreakdown::operator+=(const RewardBreakdown& o) {
  game_result += o.game_result;
  kill_unit_value += o.kill_unit_value;
  kill_building_value += o.kill_building_value;
  minerals_collected += o.minerals_collected;
  vespene_collected += o.vespene_collected;
  return *this;
}

const std::array<std::string, RewardBreakdown::kNumComponents>& reward_component_names() {
  static const std::array<std::string, RewardBreakdown::kNumComponents> names = {
      "result", "kill_unit", "kill_building", "minerals", "vespene"};
  return names;
}

uint64_t FeatureObservation::content_hash() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) { h = fnv1a64(p, n, h); };
  auto mix_vec32 = [&](const std::vector<int32_t>& v) { mix(v.data(), v.size() * 4); };
  mix_vec32(screen);
  mix_vec32(minimap);
  for (const ItemList* l : {&cargo, &multi_select, &production_queue, &single_select}) {
    mix(&l->n, sizeof(l->n));
    mix(l->rows.data(), l->rows.size() * 4);
  }
  mix(control_groups.data(), control_groups.size() * 4);
  mix(control_groups_hint.data(), control_groups_hint.size() * 4);
  mix(player.data(), player.size() * 8);
  mix(&game_loop, 8);
  mix(available_actions.data(), available_actions.size());
  mix(&prev_action, 4);
  mix(build_order.data(), build_order.size() * 4);
  mix(&mmr_bucket, 4);
  mix(&prev_screen_point, sizeof(prev_screen_point));
  mix(&prev_minimap_point, sizeof(prev_minimap_point));
  return h;
}

ActionSchema make_minirts_schema(const MiniRtsSchemaConfig& cfg) {
  ActionSchema s;
  using P = Param;
  auto def = [&](const std::string& name, std::vector<Param> params) {
    s.actions.push_back(ActionDef{name, std::move(params)});
  };
  def("no_op", {P::kDelay});
  def("move_camera", {P::kDelay, P::kMinimap});
  def("select_point", {P::kDelay, P::kQueued, P::kScreen1, P::kSelectModifier});
  def("select_rect", {P::kDelay, P::kQueued, P::kScreen1, P::kScreen2, P::kSelectModifier});
  def("select_army", {P::kDelay, P::kQueued});
  def("select_control_group", {P::kDelay, P::kControlGroupId, P::kControlGroupOp});
  def("move_screen", {P::kDelay, P::kQueued, P::kScreen1});
  def("move_minimap", {P::kDelay, P::kQueued, P::kMinimap});
  def("attack_screen", {P::kDelay, P::kQueued, P::kScreen1});
  def("attack_minimap", {P::kDelay, P::kQueued, P::kMinimap});
  def("gather_screen", {P::kDelay, P::kQueued, P::kScreen1});
  def("build_barracks", {P::kDelay, P::kQueued, P::kScreen1});
  def("build_base", {P::kDelay, P::kQueued, P::kScreen1});
  def("train_worker", {P::kDelay, P::kQueued});
  def("train_soldier", {P::kDelay, P::kQueued});
  def("stop", {P::kDelay, P::kQueued});

  FeatureSpec& f = s.features;
  f.screen_size = cfg.screen_size;
  f.minimap_size = cfg.minimap_size;
  f.num_unit_types = 7;  // null, base, barracks, worker, soldier, minerals, geyser
  f.hour_ticks = cfg.hour_ticks;
  auto cat = [](const std::string& n, int card) {
    return FeatureLayer{n, LayerKind::kCategorical, card, 1};
  };
  auto num = [](const std::string& n, double mx) {
    return FeatureLayer{n, LayerKind::kNumeric, 2, mx};
  };
  f.screen = {cat("visibility", 3),         cat("player_relative", 4),
              cat("unit_type", 7),          cat("selected", 2),
              num("hit_points", 400),       num("hit_points_ratio", 255),
              num("unit_density", 4),       num("build_progress", 100),
              num("resources", 800)};
  f.minimap = {cat("visibility", 3), cat("player_relative", 4), cat("selected", 2),
               cat("camera", 2), num("unit_density", 4)};
  std::vector<FeatureLayer> unit_cols = {cat("unit_type", 7), cat("alliance", 4),
                                         num("health", 400),  num("max_health", 400),
                                         num("x", 128),       num("y", 128),
                                         num("progress", 100)};
  f.lists = {ItemListSpec{"cargo", unit_cols},
             ItemListSpec{"multi_select", unit_cols},
             ItemListSpec{"production_queue", {cat("unit_type", 7), num("progress", 100)}},
             ItemListSpec{"single_select", unit_cols}};
  f.player_max = {10000, 10000, 40, 40, 40, 40, 40, 20, 20000, 20000, 10};

  s.delay = DelayBuckets::geometric(cfg.delay_buckets, cfg.max_delay_ticks);
  return s;
}

}  // namespace startrain
