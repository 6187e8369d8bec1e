#include "startrain/arena.hpp"

#include <json.hpp>

namespace startrain::arena {

using json = nlohmann::json;

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kWin: return "win";
    case Outcome::kLoss: return "loss";
    case Outcome::kDraw: return "draw";
    case Outcome::kTimeout: return "timeout";
  }
  return "?";
}

env::EnvConfig env_config_from(const RunConfig& cfg) {
  env::EnvConfig e;
  e.world.world_size = cfg.env.world_size;
  e.world.camera_size = cfg.env.camera_size;
  e.world.screen_size = cfg.env.screen_size;
  e.world.minimap_size = cfg.env.minimap_size;
  e.world.max_ticks = cfg.env.max_ticks;
  e.world.draw_ticks = cfg.env.draw_ticks;
  e.defs = cfg.env.world_defs.empty()
               ? env::WorldDefs::builtin()
               : env::WorldDefs::from_json(read_text_file(cfg.env.world_defs));
  e.max_delay_ticks = cfg.env.max_delay_ticks;
  return e;
}

MatchResult run_match(policy::PolicyNet& model, const env::EnvConfig& env_cfg,
                      env::OpponentLevel level, env::Race agent_race, env::Race opp_race, uint64_t seed,
                      bool argmax) {
  torch::NoGradGuard guard;
  env::MiniRtsEnv e(model->schema(), env_cfg);
  e.reset(derive_seed(seed, {fnv1a64("game")}), level, agent_race, opp_race);
  env::Conditioning cond;  // top MMR bucket, empty build order / hints
  e.set_conditioning(cond);

  RngStream rng(derive_seed(seed, {fnv1a64("agent")}));
  auto state = model->initial_state(1);
  FeatureObservation obs = e.observe();

  MatchResult m;
  m.seed = seed;
  while (!e.done()) {
    auto in = net::make_batch_input({&obs}, 1, 1, model->schema(), model->norm(), torch::kFloat32);
    auto s = model->sample(in, state, &rng, argmax);
    state = s.state;
    auto step = e.step(s.actions[0]);
    if (step.status != env::StepStatus::kOk)
      throw TrainError("sampled action rejected by environment");
    for (int k = 0; k < RewardBreakdown::kNumComponents; ++k)
      m.reward_totals[size_t(k)] += step.reward.shaped()[size_t(k)];
    obs = std::move(step.obs);
  }
  m.ticks = e.tick();
  m.agent_result = e.result();
  if (m.agent_result > 0)
    m.outcome = Outcome::kWin;
  else if (m.agent_result < 0)
    m.outcome = Outcome::kLoss;
  else
    m.outcome = m.ticks >= env_cfg.world.max_ticks ? Outcome::kTimeout : Outcome::kDraw;
  return m;
}

std::string WinTable::to_csv() const {
  std::string out = "level";
  for (const auto& r : races) out += "," + r;
  out += "\n";
  for (size_t i = 0; i < levels.size(); ++i) {
    out += levels[i];
    for (size_t j = 0; j < races.size(); ++j) out += "," + std::to_string(wins[i][j]);
    out += "\n";
  }
  return out;
}

int WinTable::total_wins() const {
  int t = 0;
  for (const auto& row : wins)
    for (int w : row) t += w;
  return t;
}

WinTable win_table(policy::PolicyNet& model, const env::EnvConfig& env_cfg,
                   const std::vector<env::OpponentLevel>& levels, const std::vector<env::Race>& races,
                   env::Race agent_race, int games_per_cell, uint64_t base_seed,
                   const std::function<void(int, int, int, const MatchResult&)>& on_result) {
  if (games_per_cell <= 0) throw ConfigError("eval.games must be positive");
  WinTable t;
  t.games_per_cell = games_per_cell;
  for (auto lvl : levels) t.levels.push_back(env::opponent_level_name(lvl));
  for (auto r : races) t.races.push_back(race_name(r));
  t.wins.assign(levels.size(), std::vector<int>(races.size(), 0));
  for (size_t i = 0; i < levels.size(); ++i) {
    for (size_t j = 0; j < races.size(); ++j) {
      for (int g = 0; g < games_per_cell; ++g) {
        uint64_t seed = derive_seed(base_seed, {fnv1a64("eval"), uint64_t(i), uint64_t(j),
                                                uint64_t(g)});
        auto m = run_match(model, env_cfg, levels[i], agent_race, races[j], seed);
        if (m.outcome == Outcome::kWin) ++t.wins[i][j];
        if (on_result) on_result(int(i), int(j), g, m);
      }
    }
  }
  return t;
}

std::string match_jsonl_line(const std::string& level, const std::string& race, int game,
                             const MatchResult& r) {
  json j;
  j["level"] = level;
  j["race"] = race;
  j["game"] = game;
  j["seed"] = r.seed;
  j["outcome"] = outcome_name(r.outcome);
  j["ticks"] = r.ticks;
  j["result"] = r.agent_result;
  json rt = json::array();
  for (double v : r.reward_totals) rt.push_back(v);
  j["reward_totals"] = rt;
  return j.dump();
}

}  // namespace startrain::arena
