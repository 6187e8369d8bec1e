#include "startrain/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "startrain/version.hpp"

namespace startrain {

namespace {

using FieldRef = std::variant<int*, double*, bool*, std::string*, uint64_t*>;

struct Binding {
  std::string key;
  FieldRef ref;
};

std::vector<Binding> bindings(RunConfig& c) {
  std::vector<Binding> b;
  auto add = [&b](const char* k, FieldRef r) { b.push_back({k, r}); };
  add("run.seed", &c.seed);
  add("run.dir", &c.run_dir);
  add("run.torch_threads", &c.torch_threads);

  add("env.world_size", &c.env.world_size);
  add("env.camera_size", &c.env.camera_size);
  add("env.screen_size", &c.env.screen_size);
  add("env.minimap_size", &c.env.minimap_size);
  add("env.max_ticks", &c.env.max_ticks);
  add("env.draw_ticks", &c.env.draw_ticks);
  add("env.ticks_per_second", &c.env.ticks_per_second);
  add("env.delay_buckets", &c.env.delay_buckets);
  add("env.max_delay_ticks", &c.env.max_delay_ticks);
  add("env.map_name", &c.env.map_name);
  add("env.world_defs", &c.env.world_defs);
  add("env.agent_race", &c.env.agent_race);

  add("net.embed_width", &c.net.embed_width);
  add("net.conv_ch1", &c.net.conv_ch1);
  add("net.conv_ch2", &c.net.conv_ch2);
  add("net.conv_ch3", &c.net.conv_ch3);
  add("net.film_blocks", &c.net.film_blocks);
  add("net.transformer_heads", &c.net.transformer_heads);
  add("net.transformer_ff_mult", &c.net.transformer_ff_mult);
  add("net.pixel_lstm_width", &c.net.pixel_lstm_width);
  add("net.scalar_hidden", &c.net.scalar_hidden);
  add("net.scalar_out", &c.net.scalar_out);
  add("net.cg_row_width", &c.net.cg_row_width);
  add("net.cg_key_width", &c.net.cg_key_width);
  add("net.relational_summary_width", &c.net.relational_summary_width);
  add("net.core_width", &c.net.core_width);
  add("net.head_hidden", &c.net.head_hidden);
  add("net.spatial_mix_channels", &c.net.spatial_mix_channels);
  add("net.film_cond_hidden", &c.net.film_cond_hidden);

  add("bc.lr", &c.bc.lr);
  add("bc.micro_batch", &c.bc.micro_batch);
  add("bc.effective_batch", &c.bc.effective_batch);
  add("bc.seq_len", &c.bc.seq_len);
  add("bc.epochs", &c.bc.epochs);
  add("bc.log_every", &c.bc.log_every);
  add("bc.eval_cadence", &c.bc.eval_cadence);
  add("bc.eval_games", &c.bc.eval_games);
  add("bc.heldout_frac", &c.bc.heldout_frac);
  add("bc.finetune_effective_batch", &c.bc.finetune_effective_batch);

  add("ppo.epsilon", &c.ppo.epsilon);
  add("ppo.gamma_approach1", &c.ppo.gamma_approach1);
  add("ppo.gamma_approach23", &c.ppo.gamma_approach23);
  add("ppo.num_envs", &c.ppo.num_envs);
  add("ppo.trajectories_per_update", &c.ppo.trajectories_per_update);
  add("ppo.micro_batch", &c.ppo.micro_batch);
  add("ppo.seq_len", &c.ppo.seq_len);
  add("ppo.epochs", &c.ppo.epochs);
  add("ppo.lr", &c.ppo.lr);
  add("ppo.value_weight", &c.ppo.value_weight);
  add("ppo.entropy_weight", &c.ppo.entropy_weight);
  add("ppo.kl_weight", &c.ppo.kl_weight);
  add("ppo.kl_bound", &c.ppo.kl_bound);
  add("ppo.sl_weight", &c.ppo.sl_weight);
  add("ppo.advantage_norm", &c.ppo.advantage_norm);
  add("ppo.objective", &c.ppo.objective);
  add("ppo.updates", &c.ppo.updates);
  add("ppo.opponents", &c.ppo.opponents);
  add("ppo.target_win_rate", &c.ppo.target_win_rate);

  add("eval.games", &c.eval.games);
  add("eval.levels", &c.eval.levels);
  add("eval.races", &c.eval.races);

  add("pre.min_mmr", &c.pre.min_mmr);
  add("pre.map_name", &c.pre.map_name);
  add("pre.min_length_seconds", &c.pre.min_length_seconds);
  add("pre.race", &c.pre.race);

  add("gen.num_games", &c.gen.num_games);
  add("gen.expert_levels", &c.gen.expert_levels);
  add("gen.opponent_levels", &c.gen.opponent_levels);
  return b;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void assign(const Binding& b, const std::string& value) {
  try {
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, int>) {
            size_t pos = 0;
            *p = std::stoi(value, &pos);
            if (pos != value.size()) throw std::invalid_argument("trailing");
          } else if constexpr (std::is_same_v<T, double>) {
            size_t pos = 0;
            *p = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument("trailing");
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") *p = true;
            else if (value == "false" || value == "0") *p = false;
            else throw std::invalid_argument("bool");
          } else if constexpr (std::is_same_v<T, uint64_t>) {
            *p = std::stoull(value);
          } else {
            *p = value;
          }
        },
        b.ref);
  } catch (const std::exception&) {
    throw ConfigError("bad value for key '" + b.key + "': " + value);
  }
}

std::string render(const Binding& b) {
  std::ostringstream os;
  os.precision(12);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) os << (*p ? "true" : "false");
        else os << *p;
      },
      b.ref);
  return os.str();
}

}  // namespace

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  auto bs = bindings(*this);
  for (auto& b : bs) {
    if (b.key == key) {
      assign(b, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

void RunConfig::apply_line(const std::string& line) {
  std::string t = trim(line);
  if (t.empty() || t[0] == '#') return;
  size_t eq = t.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key = value, got: " + t);
  apply_override(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
}

void RunConfig::apply_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file: " + p.string());
  std::string line;
  while (std::getline(in, line)) apply_line(line);
}

void RunConfig::apply_env_vars() {
  if (const char* d = std::getenv("STARTRAIN_RUN_DIR")) run_dir = d;
  if (const char* s = std::getenv("STARTRAIN_SEED")) {
    try {
      seed = std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad STARTRAIN_SEED: ") + s);
    }
  }
}

std::string RunConfig::resolved_text() const {
  auto bs = bindings(const_cast<RunConfig&>(*this));
  std::ostringstream os;
  for (const auto& b : bs) os << b.key << " = " << render(b) << "\n";
  return os.str();
}

ActionSchema RunConfig::make_schema() const {
  MiniRtsSchemaConfig sc;
  sc.screen_size = env.screen_size;
  sc.minimap_size = env.minimap_size;
  sc.delay_buckets = env.delay_buckets;
  sc.max_delay_ticks = env.max_delay_ticks;
  sc.hour_ticks = 3600.0 * env.ticks_per_second;
  return make_minirts_schema(sc);
}

void RunConfig::write_run_dir() const {
  std::filesystem::create_directories(run_dir);
  write_text_file(std::filesystem::path(run_dir) / "config.resolved", resolved_text());
  std::ostringstream meta;
  meta << "schema_hash = " << hex64(make_schema().hash()) << "\n";
  meta << "code_hash = " << kCodeHash << "\n";
  meta << "version = " << kVersion << "\n";
  write_text_file(std::filesystem::path(run_dir) / "run_meta.txt", meta.str());
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace startrain
