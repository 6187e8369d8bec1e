#pragma once

#include <optional>
#include <string>
#include <vector>

#include "startrain/env.hpp"
#include "startrain/schema.hpp"

namespace startrain {

struct ReplayMeta {
  uint64_t seed = 0;
  std::string map_name;
  std::string opponent_level = "easy";
  std::string player_race = "alpha";
  std::string opponent_race = "beta";
  int player_mmr = 0;
  int opponent_mmr = 0;
  int result = 0;  // player-0 perspective
  int end_tick = 0;
  uint64_t end_state_hash = 0;
  uint64_t schema_hash = 0;
};

// An action log for one game: a header, every player-0 interface action in
// tick order (no-ops included), and a footer with the outcome. Stored as
// JSON lines so logs stream and truncation is detectable.
struct ReplayLog {
  ReplayMeta meta;
  std::vector<env::ReplayEvent> events;

  std::string to_jsonl() const;
  static ReplayLog from_jsonl(const std::string& text);  // SchemaError on damage
};

struct FilterConfig {
  int min_mmr = 2500;            // strictly greater passes
  std::string map_name = "mini_acropolis_64";
  int min_ticks = 480;           // 60s at 8 ticks/s
  std::string race = "alpha";    // imitated player's race
};

// Empty optional = keep; otherwise the reason the replay was dropped.
std::optional<std::string> filter_reason(const ReplayMeta& meta, const FilterConfig& cfg);

// Drops every no-op event; world effects are unchanged because no-ops do
// nothing to the simulation.
std::vector<env::ReplayEvent> strip_noops(const std::vector<env::ReplayEvent>& events,
                                          const ActionSchema& schema);

// Rewrites each run of consecutive camera moves as one event carrying the
// final camera target, stamped with the run's first tick.
std::vector<env::ReplayEvent> collapse_camera_chains(const std::vector<env::ReplayEvent>& events,
                                                     const ActionSchema& schema);

// Supervised targets: stripped + collapsed events with the delay head's
// bucket recomputed from the gap to the next target (or to game end).
struct TargetStep {
  int tick = 0;
  int raw_delay = 0;  // actual ticks until the next target / game end
  HierarchicalAction action;
};
std::vector<TargetStep> build_targets(const std::vector<env::ReplayEvent>& events,
                                      const ActionSchema& schema, int end_tick);

int mmr_to_bucket(int mmr);

std::array<int32_t, kBuildOrderLen> extract_build_order(const std::vector<int32_t>& build_log);

struct ResimFrame {
  FeatureObservation obs;
  HierarchicalAction target;
  int raw_delay = 0;
};

struct ResimResult {
  std::vector<ResimFrame> frames;
  bool hash_ok = false;
  uint64_t final_hash = 0;
  int final_tick = 0;
  std::array<int32_t, kBuildOrderLen> build_order{};
  std::array<std::array<int32_t, 2>, kNumControlGroups> cg_hint{};
};

// Re-runs the logged game from its seed and renders one observation per
// supervised target. Conditioning inputs (build order, MMR bucket, control
// group hint) come from a first pass over the whole game.
ResimResult resimulate(const ReplayLog& log, const ActionSchema& schema,
                       const env::EnvConfig& cfg);

}  // namespace startrain
