#include <CLI11.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "startrain/arena.hpp"
#include "startrain/bc.hpp"
#include "startrain/config.hpp"
#include "startrain/dataset.hpp"
#include "startrain/policy.hpp"
#include "startrain/ppo.hpp"
#include "startrain/replay.hpp"

namespace fs = std::filesystem;
using namespace startrain;

namespace {

struct Cli {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  bool dry_run = false;

  std::string data;
  std::string ckpt;
  std::string out;
  std::string replays;
  int approach = 0;
  // sugar for common config keys
  std::string seed, run_dir, levels, opponents;
  int games = -1;
};

RunConfig resolve(const Cli& cli) {
  RunConfig cfg;
  for (const auto& f : cli.config_files) cfg.apply_file(f);
  for (const auto& kv : cli.sets) cfg.apply_line(kv);
  if (!cli.seed.empty()) cfg.apply_override("run.seed", cli.seed);
  if (!cli.run_dir.empty()) cfg.apply_override("run.dir", cli.run_dir);
  if (!cli.levels.empty()) cfg.apply_override("eval.levels", cli.levels);
  if (!cli.opponents.empty()) cfg.apply_override("ppo.opponents", cli.opponents);
  if (cli.games >= 0) cfg.apply_override("eval.games", std::to_string(cli.games));
  cfg.apply_env_vars();
  return cfg;
}

policy::PolicyNet load_net(const RunConfig& cfg, const std::string& path) {
  auto info = policy::read_checkpoint_info(path);
  ActionSchema schema = cfg.make_schema();
  if (schema.hash() != info.schema_hash)
    throw TrainError("checkpoint schema does not match configured schema");
  policy::PolicyNet net(schema, info.settings, info.norm);
  policy::load_checkpoint(path, net);
  return net;
}

int cmd_preprocess(const RunConfig& cfg, const Cli& cli) {
  if (cli.replays.empty()) throw ConfigError("preprocess needs --replays DIR");
  const fs::path out =
      cli.out.empty() ? fs::path(cfg.run_dir) / "dataset.bin" : fs::path(cli.out);
  ActionSchema schema = cfg.make_schema();
  env::EnvConfig env_cfg = arena::env_config_from(cfg);

  FilterConfig filter;
  filter.min_mmr = int(cfg.pre.min_mmr);
  filter.map_name = cfg.pre.map_name;
  filter.min_ticks = int(cfg.pre.min_length_seconds * cfg.env.ticks_per_second);
  filter.race = cfg.pre.race;

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cli.replays))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DatasetError("no .jsonl replay logs in " + cli.replays);

  DatasetWriter writer(schema, cfg.bc.seq_len);
  int kept = 0, mismatched = 0;
  std::map<std::string, int> dropped;
  for (const fs::path& f : files) {
    ReplayLog log = ReplayLog::from_jsonl(read_text_file(f));
    if (auto reason = filter_reason(log.meta, filter)) {
      ++dropped[*reason];
      continue;
    }
    ResimResult rr = resimulate(log, schema, env_cfg);
    if (!rr.hash_ok) {
      std::cerr << "warning: " << f.filename().string()
                << " re-simulation diverged from the logged end state; dropped\n";
      ++mismatched;
      continue;
    }
    writer.add_game(rr.frames, log.meta);
    ++kept;
  }
  if (writer.num_frames() == 0) throw DatasetError("every replay was filtered out");
  fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
  writer.write(out);

  std::cout << "replays scanned: " << files.size() << "\n";
  std::cout << "kept: " << kept << " (" << writer.num_frames() << " frames, "
            << writer.num_sequences() << " sequences)\n";
  for (const auto& [reason, n] : dropped) std::cout << "dropped (" << reason << "): " << n << "\n";
  if (mismatched) std::cout << "dropped (resimulation mismatch): " << mismatched << "\n";
  std::cout << "dataset: " << out.string() << "\n";
  return 0;
}

int cmd_train_bc(const RunConfig& cfg, const Cli& cli) {
  if (cli.data.empty()) throw ConfigError("train-bc needs --data FILE");
  DatasetReader data((fs::path(cli.data)));
  const fs::path out = cli.out.empty() ? fs::path(cfg.run_dir) : fs::path(cli.out);
  auto res = bc::train_bc(cfg, data, out);
  std::cout << "steps: " << res.steps << "\n";
  std::cout << "held-out loss: " << res.heldout.loss << "  action accuracy: "
            << res.heldout.action_acc << "\n";
  std::cout << "checkpoint: " << res.final_checkpoint.string() << "\n";
  return 0;
}

int cmd_finetune_bc(const RunConfig& cfg, const Cli& cli) {
  if (cli.data.empty()) throw ConfigError("finetune-bc needs --data FILE");
  if (cli.ckpt.empty()) throw ConfigError("finetune-bc needs --ckpt FILE");
  DatasetReader data((fs::path(cli.data)));
  const fs::path out = cli.out.empty() ? fs::path(cfg.run_dir) : fs::path(cli.out);
  auto res = bc::finetune_bc(cfg, data, cli.ckpt, out);
  std::cout << "steps: " << res.steps << "\n";
  std::cout << "best checkpoint: " << res.best_checkpoint.string() << " ("
            << res.best_eval_wins << " selection wins)\n";
  return 0;
}

int cmd_train_rl(const RunConfig& cfg, const Cli& cli) {
  if (cli.ckpt.empty()) throw ConfigError("train-rl needs --ckpt FILE");
  if (cli.approach < 1 || cli.approach > 3)
    throw ConfigError("train-rl needs --approach 1|2|3");
  const fs::path out = cli.out.empty() ? fs::path(cfg.run_dir) : fs::path(cli.out);
  auto res = ppo::train_rl(cfg, cli.approach, cli.ckpt, cli.data, out);
  std::cout << "updates: " << res.updates_run << "\n";
  if (!res.win_rate_curve.empty())
    std::cout << "win-rate-last-100: " << res.win_rate_curve.back() << "\n";
  std::cout << "kl below bound: " << res.kl_below_bound_frac * 100 << "% of updates\n";
  std::cout << "checkpoint: " << res.final_checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const Cli& cli) {
  if (cli.ckpt.empty()) throw ConfigError("eval needs --ckpt FILE");
  const fs::path out = cli.out.empty() ? fs::path(cfg.run_dir) : fs::path(cli.out);
  fs::create_directories(out);
  policy::PolicyNet net = load_net(cfg, cli.ckpt);
  env::EnvConfig env_cfg = arena::env_config_from(cfg);

  std::vector<env::OpponentLevel> levels;
  for (const auto& s : split_csv(cfg.eval.levels))
    levels.push_back(env::opponent_level_from_name(s));
  std::vector<env::Race> races;
  for (const auto& s : split_csv(cfg.eval.races)) races.push_back(env::race_from_name(s));

  std::ofstream raw(out / "matches.jsonl", std::ios::trunc);
  auto table = arena::win_table(net, env_cfg, levels, races, env::race_from_name(cfg.env.agent_race),
                                cfg.eval.games, cfg.seed,
                                [&](int i, int j, int g, const arena::MatchResult& m) {
                                  raw << arena::match_jsonl_line(
                                             env::opponent_level_name(levels[size_t(i)]),
                                             env::race_name(races[size_t(j)]), g, m)
                                      << "\n";
                                });
  write_text_file(out / "win_table.csv", table.to_csv());
  std::cout << table.to_csv();
  std::cout << "total wins: " << table.total_wins() << " / "
            << levels.size() * races.size() * size_t(cfg.eval.games) << "\n";
  return 0;
}

int cmd_gen_replays(const RunConfig& cfg, const Cli& cli) {
  const fs::path out = cli.out.empty() ? fs::path(cfg.run_dir) / "replays" : fs::path(cli.out);
  fs::create_directories(out);
  ActionSchema schema = cfg.make_schema();
  env::EnvConfig env_cfg = arena::env_config_from(cfg);

  std::vector<env::OpponentLevel> expert_levels, opp_levels;
  for (const auto& s : split_csv(cfg.gen.expert_levels))
    expert_levels.push_back(env::opponent_level_from_name(s));
  for (const auto& s : split_csv(cfg.gen.opponent_levels))
    opp_levels.push_back(env::opponent_level_from_name(s));
  if (expert_levels.empty() || opp_levels.empty())
    throw ConfigError("gen.expert_levels and gen.opponent_levels must not be empty");

  FilterConfig filter;
  filter.min_mmr = int(cfg.pre.min_mmr);
  filter.map_name = cfg.pre.map_name;
  filter.min_ticks = int(cfg.pre.min_length_seconds * cfg.env.ticks_per_second);
  filter.race = cfg.pre.race;

  const env::Race player_race = env::race_from_name(cfg.pre.race);
  auto mmr_for = [](env::OpponentLevel lvl, RngStream& rng) {
    int base = 0;
    switch (lvl) {
      case env::OpponentLevel::kVeryEasy: base = 1200; break;
      case env::OpponentLevel::kEasy: base = 2000; break;
      case env::OpponentLevel::kMedium: base = 3200; break;
      case env::OpponentLevel::kHard: base = 3900; break;
    }
    return base + int(rng.uniform_int(0, 400)) - 200;
  };

  uint64_t attempt = 0;
  int written = 0;
  const uint64_t max_attempts = uint64_t(cfg.gen.num_games) * 50 + 50;
  while (written < cfg.gen.num_games) {
    if (attempt >= max_attempts)
      throw TrainError("generated games keep failing the replay filter; check the config");
    const uint64_t seed = derive_seed(cfg.seed, {fnv1a64("gen"), attempt});
    RngStream meta_rng(derive_seed(seed, {fnv1a64("meta")}));
    const env::OpponentLevel expert_lvl =
        expert_levels[size_t(attempt % expert_levels.size())];
    const env::OpponentLevel opp_lvl = opp_levels[size_t(attempt % opp_levels.size())];
    const env::Race opp_race = env::Race(int(attempt % 3));
    ++attempt;

    env::MiniRtsEnv e(schema, env_cfg);
    e.reset(seed, opp_lvl, player_race, opp_race);
    e.set_recording(true);
    env::ScriptedPolicy expert(expert_lvl, schema);
    RngStream erng(derive_seed(seed, {fnv1a64("expert")}));
    while (!e.done()) {
      auto a = expert.decide(e.world(), 0, erng);
      auto r = e.step(a);
      if (r.status != env::StepStatus::kOk)
        throw TrainError("scripted expert action rejected by the environment");
    }

    ReplayLog log;
    log.meta.seed = seed;
    log.meta.map_name = cfg.env.map_name;
    log.meta.opponent_level = env::opponent_level_name(opp_lvl);
    log.meta.player_race = env::race_name(player_race);
    log.meta.opponent_race = env::race_name(opp_race);
    log.meta.player_mmr = mmr_for(expert_lvl, meta_rng);
    log.meta.opponent_mmr = mmr_for(opp_lvl, meta_rng);
    log.meta.result = e.result();
    log.meta.end_tick = e.tick();
    log.meta.end_state_hash = e.state_hash();
    log.meta.schema_hash = schema.hash();
    log.events = e.events();
    if (filter_reason(log.meta, filter)) continue;  // too short etc.; next seed

    char name[32];
    std::snprintf(name, sizeof(name), "game_%05d.jsonl", written);
    write_text_file(out / name, log.to_jsonl());
    ++written;
  }
  std::cout << "wrote " << written << " replay logs to " << out.string() << " ("
            << attempt << " games played)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiniRTS imitation + reinforcement learning artifact"};
  app.require_subcommand(1);
  app.fallthrough();

  Cli cli;
  app.add_option("--config", cli.config_files, "config file(s), key = value lines");
  app.add_option("--set", cli.sets, "override, e.g. --set ppo.lr=1e-4");
  app.add_option("--seed", cli.seed, "run.seed override");
  app.add_option("--run-dir", cli.run_dir, "run.dir override");
  app.add_flag("--dry-run", cli.dry_run, "print the resolved config and exit");

  auto* pre = app.add_subcommand("preprocess", "filter + resimulate replays into a dataset");
  pre->add_option("--replays", cli.replays, "directory of .jsonl replay logs")->required();
  pre->add_option("--out", cli.out, "output dataset file");

  auto* tbc = app.add_subcommand("train-bc", "behavioral cloning from a dataset");
  tbc->add_option("--data", cli.data, "dataset file")->required();
  tbc->add_option("--out", cli.out, "output directory (default run dir)");

  auto* ftb = app.add_subcommand("finetune-bc", "large-batch fine-tune + model selection");
  ftb->add_option("--ckpt", cli.ckpt, "starting checkpoint")->required();
  ftb->add_option("--data", cli.data, "dataset file")->required();
  ftb->add_option("--out", cli.out, "output directory (default run dir)");

  auto* trl = app.add_subcommand("train-rl", "PPO fine-tuning from a supervised checkpoint");
  trl->add_option("--ckpt", cli.ckpt, "starting checkpoint")->required();
  trl->add_option("--approach", cli.approach, "1 = joint SL, 2 = batch KL, 3 = rollout KL")
      ->required();
  trl->add_option("--data", cli.data, "replay dataset (approach 1)");
  trl->add_option("--opponents", cli.opponents, "ppo.opponents override");
  trl->add_option("--out", cli.out, "output directory (default run dir)");

  auto* ev = app.add_subcommand("eval", "win table vs scripted opponents");
  ev->add_option("--ckpt", cli.ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--levels", cli.levels, "eval.levels override");
  ev->add_option("--games", cli.games, "eval.games override");
  ev->add_option("--out", cli.out, "output directory (default run dir)");

  auto* gen = app.add_subcommand("gen-replays", "scripted-expert games as replay logs");
  gen->add_option("--out", cli.out, "output directory (default run dir/replays)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg = resolve(cli);
    torch::set_num_threads(std::max(1, cfg.torch_threads));
    if (cli.dry_run) {
      std::cout << cfg.resolved_text();
      return 0;
    }
    cfg.write_run_dir();
    if (pre->parsed()) return cmd_preprocess(cfg, cli);
    if (tbc->parsed()) return cmd_train_bc(cfg, cli);
    if (ftb->parsed()) return cmd_finetune_bc(cfg, cli);
    if (trl->parsed()) return cmd_train_rl(cfg, cli);
    if (ev->parsed()) return cmd_eval(cfg, cli);
    if (gen->parsed()) return cmd_gen_replays(cfg, cli);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
