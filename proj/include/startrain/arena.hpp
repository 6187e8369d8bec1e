#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "startrain/config.hpp"
#include "startrain/env.hpp"
#include "startrain/policy.hpp"

namespace startrain::arena {

enum class Outcome { kWin = 0, kLoss, kDraw, kTimeout };
const char* outcome_name(Outcome o);

// Draws and timeouts are recorded distinctly but both count as losses in
// win tables.
struct MatchResult {
  Outcome outcome = Outcome::kLoss;
  int ticks = 0;
  int agent_result = 0;  // +1 / 0 / -1
  std::array<double, RewardBreakdown::kNumComponents> reward_totals{};
  uint64_t seed = 0;
};

env::EnvConfig env_config_from(const RunConfig& cfg);

// Deterministic given (parameters, seed): one full game of the policy
// against a scripted opponent. Sampling at temperature 1 unless argmax.
MatchResult run_match(policy::PolicyNet& model, const env::EnvConfig& env_cfg,
                      env::OpponentLevel level, env::Race agent_race, env::Race opp_race, uint64_t seed,
                      bool argmax = false);

struct WinTable {
  std::vector<std::string> levels;
  std::vector<std::string> races;
  std::vector<std::vector<int>> wins;  // [level][race]
  int games_per_cell = 0;

  std::string to_csv() const;
  int total_wins() const;
};

// Per-cell seeds derive from base_seed, so tables reproduce bit-for-bit.
// Every finished match is passed to on_result (may be null).
WinTable win_table(policy::PolicyNet& model, const env::EnvConfig& env_cfg,
                   const std::vector<env::OpponentLevel>& levels, const std::vector<env::Race>& races,
                   env::Race agent_race, int games_per_cell, uint64_t base_seed,
                   const std::function<void(int, int, int, const MatchResult&)>& on_result);

std::string match_jsonl_line(const std::string& level, const std::string& race, int game,
                             const MatchResult& r);

}  // namespace startrain::arena
