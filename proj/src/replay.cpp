#include "startrain/replay.hpp"

#include <sstream>

#include <json.hpp>

#include "startrain/common.hpp"

namespace startrain {

using ordered_json = nlohmann::ordered_json;
using env::ReplayEvent;

namespace {

ordered_json action_to_json(const HierarchicalAction& a) {
  ordered_json j;
  j["id"] = a.action_id;
  j["delay"] = a.delay_bucket;
  if (a.queued) j["queued"] = *a.queued;
  if (a.screen1) j["screen1"] = {a.screen1->r, a.screen1->c};
  if (a.screen2) j["screen2"] = {a.screen2->r, a.screen2->c};
  if (a.minimap) j["minimap"] = {a.minimap->r, a.minimap->c};
  if (a.control_group_id) j["cg_id"] = *a.control_group_id;
  if (a.control_group_op) j["cg_op"] = *a.control_group_op;
  if (a.select_modifier) j["modifier"] = *a.select_modifier;
  return j;
}

HierarchicalAction action_from_json(const ordered_json& j) {
  HierarchicalAction a;
  a.action_id = j.at("id").get<int>();
  a.delay_bucket = j.at("delay").get<int>();
  if (j.contains("queued")) a.queued = j.at("queued").get<int>();
  auto pt = [&](const char* key) -> std::optional<Point2i> {
    if (!j.contains(key)) return std::nullopt;
    const auto& v = j.at(key);
    return Point2i{v.at(0).get<int>(), v.at(1).get<int>()};
  };
  a.screen1 = pt("screen1");
  a.screen2 = pt("screen2");
  a.minimap = pt("minimap");
  if (j.contains("cg_id")) a.control_group_id = j.at("cg_id").get<int>();
  if (j.contains("cg_op")) a.control_group_op = j.at("cg_op").get<int>();
  if (j.contains("modifier")) a.select_modifier = j.at("modifier").get<int>();
  return a;
}

}  // namespace

std::string ReplayLog::to_jsonl() const {
  std::ostringstream out;
  ordered_json h;
  h["kind"] = "header";
  h["version"] = 1;
  h["seed"] = meta.seed;
  h["map"] = meta.map_name;
  h["opponent_level"] = meta.opponent_level;
  h["player_race"] = meta.player_race;
  h["opponent_race"] = meta.opponent_race;
  h["player_mmr"] = meta.player_mmr;
  h["opponent_mmr"] = meta.opponent_mmr;
  h["schema_hash"] = hex64(meta.schema_hash);
  out << h.dump() << "\n";
  for (const ReplayEvent& e : events) {
    ordered_json je;
    je["kind"] = "event";
    je["t"] = e.tick;
    je["a"] = action_to_json(e.action);
    out << je.dump() << "\n";
  }
  ordered_json f;
  f["kind"] = "footer";
  f["result"] = meta.result;
  f["end_tick"] = meta.end_tick;
  f["state_hash"] = hex64(meta.end_state_hash);
  out << f.dump() << "\n";
  return out.str();
}

ReplayLog ReplayLog::from_jsonl(const std::string& text) try {
  ReplayLog log;
  std::istringstream in(text);
  std::string line;
  bool have_header = false, have_footer = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw SchemaError(std::string("bad replay line: ") + e.what());
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "header") {
      if (have_header) throw SchemaError("duplicate replay header");
      if (j.at("version").get<int>() != 1) throw SchemaError("unsupported replay version");
      have_header = true;
      log.meta.seed = j.at("seed").get<uint64_t>();
      log.meta.map_name = j.at("map").get<std::string>();
      log.meta.opponent_level = j.at("opponent_level").get<std::string>();
      log.meta.player_race = j.at("player_race").get<std::string>();
      log.meta.opponent_race = j.at("opponent_race").get<std::string>();
      log.meta.player_mmr = j.at("player_mmr").get<int>();
      log.meta.opponent_mmr = j.at("opponent_mmr").get<int>();
      log.meta.schema_hash = std::stoull(j.at("schema_hash").get<std::string>(), nullptr, 16);
    } else if (kind == "event") {
      if (!have_header || have_footer) throw SchemaError("replay event outside header/footer");
      ReplayEvent e;
      e.tick = j.at("t").get<int>();
      e.action = action_from_json(j.at("a"));
      if (!log.events.empty() && e.tick < log.events.back().tick)
        throw SchemaError("replay events out of order");
      log.events.push_back(e);
    } else if (kind == "footer") {
      if (!have_header || have_footer) throw SchemaError("unexpected replay footer");
      have_footer = true;
      log.meta.result = j.at("result").get<int>();
      log.meta.end_tick = j.at("end_tick").get<int>();
      log.meta.end_state_hash = std::stoull(j.at("state_hash").get<std::string>(), nullptr, 16);
    } else {
      throw SchemaError("unknown replay line kind: " + kind);
    }
  }
  if (!have_header) throw SchemaError("replay missing header");
  if (!have_footer) throw SchemaError("replay missing footer (truncated?)");
  return log;
} catch (const SchemaError&) {
  throw;
} catch (const std::exception& e) {
  throw SchemaError(std::string("bad replay log: ") + e.what());
}

std::optional<std::string> filter_reason(const ReplayMeta& meta, const FilterConfig& cfg) {
  if (meta.player_race != cfg.race) return "race mismatch: " + meta.player_race;
  if (meta.player_mmr <= cfg.min_mmr)
    return "mmr " + std::to_string(meta.player_mmr) + " <= " + std::to_string(cfg.min_mmr);
  if (meta.map_name != cfg.map_name) return "map mismatch: " + meta.map_name;
  if (meta.end_tick <= cfg.min_ticks)
    return "too short: " + std::to_string(meta.end_tick) + " ticks";
  return std::nullopt;
}

std::vector<ReplayEvent> strip_noops(const std::vector<ReplayEvent>& events,
                                     const ActionSchema& schema) {
  const int noop = schema.find_action("no_op");
  std::vector<ReplayEvent> out;
  out.reserve(events.size());
  for (const ReplayEvent& e : events)
    if (e.action.action_id != noop) out.push_back(e);
  return out;
}

std::vector<ReplayEvent> collapse_camera_chains(const std::vector<ReplayEvent>& events,
                                                const ActionSchema& schema) {
  const int camera = schema.find_action("move_camera");
  std::vector<ReplayEvent> out;
  out.reserve(events.size());
  size_t i = 0;
  while (i < events.size()) {
    if (events[i].action.action_id != camera) {
      out.push_back(events[i]);
      ++i;
      continue;
    }
    size_t j = i;
    while (j + 1 < events.size() && events[j + 1].action.action_id == camera) ++j;
    ReplayEvent merged = events[j];   // final camera target wins
    merged.tick = events[i].tick;     // at the chain's first tick
    out.push_back(merged);
    i = j + 1;
  }
  return out;
}

std::vector<TargetStep> build_targets(const std::vector<ReplayEvent>& events,
                                      const ActionSchema& schema, int end_tick) {
  std::vector<ReplayEvent> kept = collapse_camera_chains(strip_noops(events, schema), schema);
  std::vector<TargetStep> out;
  out.reserve(kept.size());
  for (size_t i = 0; i < kept.size(); ++i) {
    TargetStep t;
    t.tick = kept[i].tick;
    int next = i + 1 < kept.size() ? kept[i + 1].tick : end_tick;
    t.raw_delay = std::max(1, next - kept[i].tick);
    t.action = kept[i].action;
    t.action.delay_bucket = schema.delay.bucket_of(t.raw_delay);
    out.push_back(t);
  }
  return out;
}

int mmr_to_bucket(int mmr) {
  static const int thresholds[] = {2500, 3000, 3500, 4000, 4500};
  int b = 0;
  for (int t : thresholds)
    if (mmr >= t) ++b;
  return b;  // 0..kMmrBuckets-1
}

std::array<int32_t, kBuildOrderLen> extract_build_order(const std::vector<int32_t>& build_log) {
  std::array<int32_t, kBuildOrderLen> out{};
  for (size_t i = 0; i < out.size() && i < build_log.size(); ++i) out[i] = build_log[i];
  return out;
}

ResimResult resimulate(const ReplayLog& log, const ActionSchema& schema,
                       const env::EnvConfig& cfg) {
  if (log.meta.schema_hash != schema.hash())
    throw SchemaError("replay was recorded under a different action schema");
  ResimResult res;
  std::vector<TargetStep> targets = build_targets(log.events, schema, log.meta.end_tick);

  auto run = [&](bool render) {
    env::MiniRtsEnv e(schema, cfg);
    e.reset(log.meta.seed, env::opponent_level_from_name(log.meta.opponent_level),
            env::race_from_name(log.meta.player_race),
            env::race_from_name(log.meta.opponent_race));
    if (render) {
      env::Conditioning cond;
      cond.build_order = res.build_order;
      cond.mmr_bucket = mmr_to_bucket(log.meta.player_mmr);
      cond.cg_hint = res.cg_hint;
      e.set_conditioning(cond);
    }
    for (const TargetStep& t : targets) {
      if (e.done()) break;
      e.advance_ticks(t.tick - e.tick());
      if (e.done()) break;
      if (render) {
        ResimFrame f;
        f.obs = e.observe();
        f.target = t.action;
        f.raw_delay = t.raw_delay;
        res.frames.push_back(std::move(f));
      }
      e.apply_agent_action(t.action);
    }
    if (!e.done()) e.advance_ticks(log.meta.end_tick - e.tick());
    if (!render) {
      res.final_hash = e.state_hash();
      res.final_tick = e.tick();
      res.hash_ok = res.final_hash == log.meta.end_state_hash;
      res.build_order = extract_build_order(e.world().build_log(0));
      const env::PlayerState& pl = e.world().player(0);
      for (int g = 0; g < kNumControlGroups; ++g) {
        res.cg_hint[size_t(g)][0] = pl.group_first_type[size_t(g)];
        res.cg_hint[size_t(g)][1] = int32_t(pl.groups[size_t(g)].size());
      }
    }
  };
  run(/*render=*/false);
  run(/*render=*/true);
  return res;
}

}  // namespace startrain
