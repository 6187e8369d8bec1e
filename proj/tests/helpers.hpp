#pragma once

// Shared fixtures: a small-but-complete config, scripted-vs-scripted game
// recording, and synthetic dataset construction. Everything here throws on
// failure so it can back both the unit suite and the acceptance binary.

#include <unistd.h>

#include <filesystem>
#include <stdexcept>
#include <string>

#include "startrain/arena.hpp"
#include "startrain/config.hpp"
#include "startrain/dataset.hpp"
#include "startrain/env.hpp"
#include "startrain/replay.hpp"

namespace testutil {

using namespace startrain;

// 16x16 world, 16px feature grids, narrow network. Small enough that a
// forward pass is milliseconds and a scripted game finishes in well under
// a second, large enough that every code path (conv pyramid, transformer,
// recurrence, every head) is exercised.
inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 7;
  cfg.torch_threads = 1;
  cfg.env.world_size = 16;
  cfg.env.camera_size = 8;
  cfg.env.screen_size = 16;
  cfg.env.minimap_size = 16;
  cfg.env.max_ticks = 2000;
  cfg.env.draw_ticks = 300;
  cfg.env.delay_buckets = 16;
  cfg.env.max_delay_ticks = 16;

  cfg.net.embed_width = 4;
  cfg.net.conv_ch1 = 8;
  cfg.net.conv_ch2 = 12;
  cfg.net.conv_ch3 = 16;
  cfg.net.film_blocks = 1;
  cfg.net.transformer_heads = 2;
  cfg.net.transformer_ff_mult = 2;
  cfg.net.pixel_lstm_width = 16;
  cfg.net.scalar_hidden = 16;
  cfg.net.scalar_out = 8;
  cfg.net.cg_row_width = 8;
  cfg.net.cg_key_width = 8;
  cfg.net.relational_summary_width = 32;
  cfg.net.core_width = 64;
  cfg.net.head_hidden = 32;
  cfg.net.spatial_mix_channels = 4;
  cfg.net.film_cond_hidden = 16;

  cfg.bc.micro_batch = 4;
  cfg.bc.effective_batch = 8;
  cfg.bc.seq_len = 8;
  cfg.bc.epochs = 1;
  cfg.bc.log_every = 1;
  cfg.bc.eval_cadence = 50;
  cfg.bc.eval_games = 2;

  cfg.ppo.num_envs = 4;
  cfg.ppo.trajectories_per_update = 4;
  cfg.ppo.micro_batch = 2;
  cfg.ppo.seq_len = 8;
  cfg.ppo.epochs = 2;
  cfg.ppo.updates = 2;

  cfg.eval.games = 2;
  return cfg;
}

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& stem) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Plays one scripted-vs-scripted game through the player-0 interface and
// returns the recorded action log, exactly as the replay generator does.
inline ReplayLog record_game(const RunConfig& cfg, uint64_t seed, env::OpponentLevel expert,
                             env::OpponentLevel opponent,
                             env::Race expert_race = env::Race::kAlpha,
                             env::Race opponent_race = env::Race::kBeta, int expert_mmr = 3600) {
  ActionSchema schema = cfg.make_schema();
  env::EnvConfig env_cfg = arena::env_config_from(cfg);
  env::MiniRtsEnv e(schema, env_cfg);
  e.reset(seed, opponent, expert_race, opponent_race);
  e.set_recording(true);
  env::ScriptedPolicy script(expert, schema);
  RngStream rng(derive_seed(seed, {fnv1a64("expert")}));
  while (!e.done()) {
    HierarchicalAction a = script.decide(e.world(), 0, rng);
    env::StepResult r = e.step(a);
    if (r.status != env::StepStatus::kOk)
      throw std::runtime_error("scripted expert emitted a rejected action");
  }
  ReplayLog log;
  log.meta.seed = seed;
  log.meta.map_name = cfg.env.map_name;
  log.meta.opponent_level = env::opponent_level_name(opponent);
  log.meta.player_race = env::race_name(expert_race);
  log.meta.opponent_race = env::race_name(opponent_race);
  log.meta.player_mmr = expert_mmr;
  log.meta.opponent_mmr = 3000;
  log.meta.result = e.result();
  log.meta.end_tick = e.tick();
  log.meta.end_state_hash = e.state_hash();
  log.meta.schema_hash = schema.hash();
  log.events = e.events();
  return log;
}

// Records `games` scripted games, re-simulates them, and writes a dataset.
inline void build_dataset(const RunConfig& cfg, const std::filesystem::path& out, int games,
                          uint64_t seed0, env::OpponentLevel expert, env::OpponentLevel opponent) {
  ActionSchema schema = cfg.make_schema();
  env::EnvConfig env_cfg = arena::env_config_from(cfg);
  DatasetWriter writer(schema, cfg.bc.seq_len);
  for (int g = 0; g < games; ++g) {
    ReplayLog log = record_game(cfg, seed0 + uint64_t(g), expert, opponent);
    ResimResult rr = resimulate(log, schema, env_cfg);
    if (!rr.hash_ok) throw std::runtime_error("re-simulation diverged from the recorded game");
    writer.add_game(rr.frames, log.meta);
  }
  writer.write(out);
}

}  // namespace testutil
