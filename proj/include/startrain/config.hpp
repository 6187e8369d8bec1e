#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "startrain/schema.hpp"

namespace startrain {

struct EnvSettings {
  int world_size = 64;
  int camera_size = 32;       // world cells visible on screen
  int screen_size = 64;       // feature resolution; multiple of camera_size
  int minimap_size = 64;      // divides world_size
  int max_ticks = 5000;
  int draw_ticks = 500;       // no-progress ticks before a draw
  double ticks_per_second = 8;
  int delay_buckets = 128;
  int max_delay_ticks = 128;
  std::string map_name = "mini_acropolis_64";
  std::string world_defs;     // path to world defs JSON; empty = builtin
  std::string agent_race = "alpha";
};

struct NetworkSettings {
  int embed_width = 8;        // categorical feature embedding width
  int conv_ch1 = 32;
  int conv_ch2 = 64;
  int conv_ch3 = 128;
  int film_blocks = 3;
  int transformer_heads = 2;
  int transformer_ff_mult = 2;
  int pixel_lstm_width = 128;
  int scalar_hidden = 64;
  int scalar_out = 32;        // per-source processed width
  int cg_row_width = 16;      // control-group bypass row encoding
  int cg_key_width = 32;
  int relational_summary_width = 256;
  int core_width = 512;
  int head_hidden = 256;
  int spatial_mix_channels = 16;  // lstm_output reshaped to (S/8, S/8, this)
  int film_cond_hidden = 64;
};

struct BCSettings {
  double lr = 0.001;
  int micro_batch = 16;
  int effective_batch = 32;
  int seq_len = 32;
  double epochs = 7;
  int log_every = 10;             // optimizer steps per metrics row
  int eval_cadence = 200;         // optimizer steps between model-selection evals
  int eval_games = 20;            // per opponent level during selection
  double heldout_frac = 0.1;
  int finetune_effective_batch = 512;
};

struct PPOSettings {
  double epsilon = 0.1;
  double gamma_approach1 = 0.995;
  double gamma_approach23 = 0.999;
  int num_envs = 24;
  int trajectories_per_update = 512;
  int micro_batch = 16;
  int seq_len = 32;
  int epochs = 3;
  double lr = 0.00025;
  double value_weight = 1.0;
  double entropy_weight = 0.001;
  double kl_weight = 0.1;
  double kl_bound = 0.5;         // monitoring bound for the frozen-policy KL
  double sl_weight = 1.0;        // approach 1 replay-loss weight
  bool advantage_norm = false;
  std::string objective = "min_form";  // or "clipped_only"
  int updates = 200;
  std::string opponents = "easy";
  double target_win_rate = -1;   // stop early when win-rate-last-100 reaches this; <0 = never
};

struct EvalSettings {
  int games = 100;
  std::string levels = "very_easy,easy,medium,hard";
  std::string races = "alpha,beta,gamma";
};

struct PreprocessSettings {
  double min_mmr = 2500;
  std::string map_name = "mini_acropolis_64";
  double min_length_seconds = 60;
  std::string race = "alpha";
};

struct GenReplaysSettings {
  int num_games = 100;
  std::string expert_levels = "medium,hard";
  std::string opponent_levels = "very_easy,easy,medium";
};

struct RunConfig {
  uint64_t seed = 1;
  std::string run_dir = "runs/run";
  int torch_threads = 1;

  EnvSettings env;
  NetworkSettings net;
  BCSettings bc;
  PPOSettings ppo;
  EvalSettings eval;
  PreprocessSettings pre;
  GenReplaysSettings gen;

  // Layering: defaults < config file < explicit overrides < env vars.
  void apply_file(const std::filesystem::path& p);
  void apply_line(const std::string& line);          // "key = value"
  void apply_override(const std::string& key, const std::string& value);
  void apply_env_vars();

  std::string resolved_text() const;  // canonical key = value dump
  ActionSchema make_schema() const;

  // Writes resolved config + schema/code hashes into the run directory.
  void write_run_dir() const;
};

std::vector<std::string> split_csv(const std::string& s);

}  // namespace startrain
