#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "startrain/schema.hpp"
#include "startrain/world.hpp"

namespace startrain::env {

enum class OpponentLevel : int { kVeryEasy = 0, kEasy = 1, kMedium = 2, kHard = 3 };
const char* opponent_level_name(OpponentLevel lvl);
OpponentLevel opponent_level_from_name(const std::string& name);
int opponent_army_cap(OpponentLevel lvl);

// One decision per call; emits only actions legal under the current mask.
// Decisions are a pure function of (world, pid, rng), so replaying the same
// seeds reproduces the same game.
class ScriptedPolicy {
 public:
  ScriptedPolicy(OpponentLevel level, const ActionSchema& schema);
  HierarchicalAction decide(const World& world, int pid, RngStream& rng) const;

 private:
  HierarchicalAction with_delay(HierarchicalAction a, const World& world, RngStream& rng) const;
  OpponentLevel level_;
  const ActionSchema* schema_;
  int target_workers_;
  int target_barracks_;
  int army_cap_;
  int attack_at_;
  int delay_lo_, delay_hi_;
};

struct EnvConfig {
  WorldConfig world;
  WorldDefs defs;
  int max_delay_ticks = 128;
};

struct Conditioning {
  std::array<int32_t, kBuildOrderLen> build_order{};   // 0 = none
  std::array<std::array<int32_t, 2>, kNumControlGroups> cg_hint{};
  int32_t mmr_bucket = kMmrBuckets - 1;
};

enum class StepStatus { kOk = 0, kRejected = 1 };

struct StepResult {
  StepStatus status = StepStatus::kOk;
  std::vector<Violation> violations;
  RewardBreakdown reward;
  bool done = false;
  int result = 0;     // +1 win, 0 draw, -1 loss (agent perspective)
  bool draw = false;  // includes tick-limit timeouts
  FeatureObservation obs;
};

struct ReplayEvent {
  int tick = 0;
  HierarchicalAction action;
};

// Player-0 interface around World: validates schema actions, advances by the
// chosen delay while the scripted opponent plays, and renders observations.
class MiniRtsEnv {
 public:
  MiniRtsEnv(const ActionSchema& schema, const EnvConfig& cfg);

  FeatureObservation reset(uint64_t seed, OpponentLevel opponent, Race agent_race,
                           Race opponent_race);
  StepResult step(const HierarchicalAction& a);

  // Lower-level controls shared by step() and replay re-simulation.
  void apply_agent_action(const HierarchicalAction& a);  // no validation, no advance
  void advance_ticks(int n);                             // opponent keeps acting
  FeatureObservation observe();                          // agent's view at current tick
  RewardBreakdown take_step_events();                    // drain accumulated rewards

  std::vector<Violation> validate(const HierarchicalAction& a) const;
  std::vector<uint8_t> available_mask() const;

  void set_conditioning(const Conditioning& c) { cond_ = c; }
  void set_recording(bool on) { recording_ = on; }
  const std::vector<ReplayEvent>& events() const { return events_; }

  bool done() const { return world_->done(); }
  int result() const { return world_->result(); }
  bool is_draw() const { return world_->is_draw(); }
  int tick() const { return world_->tick(); }
  const World& world() const { return *world_; }
  World& mutable_world() { return *world_; }
  const ActionSchema& schema() const { return schema_; }
  uint64_t state_hash() const { return world_->state_hash(); }

 private:
  void record_prev(const HierarchicalAction& a);
  void render_screen(FeatureObservation& obs, const std::vector<uint8_t>& vis) const;
  void render_minimap(FeatureObservation& obs, const std::vector<uint8_t>& vis) const;
  void fill_lists(FeatureObservation& obs) const;
  void fill_scalars(FeatureObservation& obs) const;

  ActionSchema schema_;
  EnvConfig cfg_;
  std::unique_ptr<World> world_;
  std::unique_ptr<ScriptedPolicy> opponent_;
  RngStream opp_rng_;
  int opp_next_tick_ = 0;
  Conditioning cond_;
  bool recording_ = false;
  std::vector<ReplayEvent> events_;
  int32_t prev_action_ = 0;
  Point2i prev_screen_{0, 0};
  Point2i prev_minimap_{0, 0};
  RewardBreakdown pending_result_;
  bool result_credited_ = false;
};

}  // namespace startrain::env
