#include "startrain/bc.hpp"

#include <algorithm>
#include <cmath>

namespace startrain::bc {

namespace {

const char* kHeads[] = {"action",  "delay",   "queued",  "cg_id",  "cg_op",
                        "modifier", "screen1", "screen2", "minimap"};

void fisher_yates(std::vector<int>& v, RngStream& rng) {
  for (int i = int(v.size()) - 1; i > 0; --i)
    std::swap(v[size_t(i)], v[size_t(rng.uniform_int(0, i))]);
}

int64_t total_frames(const std::vector<const Sequence*>& seqs) {
  int64_t n = 0;
  for (const Sequence* s : seqs) n += s->length();
  return n;
}

}  // namespace

void assemble(const std::vector<const Sequence*>& seqs, int seq_len, const ActionSchema& schema,
              const NormStats& norm, torch::Dtype dtype, net::BatchInput* in,
              net::ActionBatch* targets) {
  const int64_t B = int64_t(seqs.size());
  static const HierarchicalAction kPad = [] {
    HierarchicalAction a;
    a.action_id = -1;
    return a;
  }();
  std::vector<const FeatureObservation*> obs(size_t(B) * size_t(seq_len));
  std::vector<const HierarchicalAction*> acts(size_t(B) * size_t(seq_len));
  for (int64_t b = 0; b < B; ++b) {
    const Sequence& s = *seqs[size_t(b)];
    TORCH_CHECK(s.length() > 0 && s.length() <= seq_len, "bad sequence length");
    for (int t = 0; t < seq_len; ++t) {
      const bool pad = t >= s.length();
      obs[size_t(b * seq_len + t)] = pad ? &s.obs.back() : &s.obs[size_t(t)];
      acts[size_t(b * seq_len + t)] = pad ? &kPad : &s.targets[size_t(t)];
    }
  }
  *in = net::make_batch_input(obs, B, seq_len, schema, norm, dtype);
  *targets = net::make_action_batch(acts, B, seq_len, schema);
}

double train_step(policy::PolicyNet& model, torch::optim::Optimizer& opt,
                  const std::vector<const Sequence*>& seqs, int micro, int seq_len,
                  torch::Dtype dtype, StepStats* stats) {
  opt.zero_grad();
  const double denom = double(total_frames(seqs));
  TORCH_CHECK(denom > 0, "empty training step");
  double loss_sum = 0;
  for (size_t off = 0; off < seqs.size(); off += size_t(micro)) {
    const size_t hi = std::min(seqs.size(), off + size_t(micro));
    std::vector<const Sequence*> chunk(seqs.begin() + long(off), seqs.begin() + long(hi));
    net::BatchInput in;
    net::ActionBatch targets;
    assemble(chunk, seq_len, model->schema(), model->norm(), dtype, &in, &targets);
    auto forced = model->forward_forced(in, targets, model->initial_state(int64_t(chunk.size())));
    auto loss = (-forced.log_prob).sum() / denom;
    const double v = loss.item<double>();
    if (!std::isfinite(v))
      throw TrainError("behavioral cloning loss is not finite (got " + std::to_string(v) + ")");
    loss.backward();
    loss_sum += v;
    if (stats) {
      torch::NoGradGuard guard;
      for (const char* h : kHeads) {
        stats->head_nll[h] += forced.head_nll.at(h).sum().item<double>();
        stats->head_used[h] += forced.head_used.at(h).sum().item<double>();
      }
      stats->action_correct += forced.head_correct.at("action").sum().item<double>();
      stats->frames += forced.head_used.at("action").sum().item<double>();
    }
  }
  opt.step();
  return loss_sum;
}

EvalMetrics evaluate_sequences(policy::PolicyNet& model, const DatasetReader& data,
                               const std::vector<int>& indices, int micro, int seq_len) {
  torch::NoGradGuard guard;
  EvalMetrics m;
  double nll = 0, correct = 0;
  for (size_t off = 0; off < indices.size(); off += size_t(micro)) {
    const size_t hi = std::min(indices.size(), off + size_t(micro));
    std::vector<Sequence> owned;
    owned.reserve(hi - off);
    for (size_t i = off; i < hi; ++i) owned.push_back(data.load(indices[i]));
    std::vector<const Sequence*> chunk;
    for (const Sequence& s : owned) chunk.push_back(&s);
    net::BatchInput in;
    net::ActionBatch targets;
    assemble(chunk, seq_len, model->schema(), model->norm(), torch::kFloat32, &in, &targets);
    auto forced = model->forward_forced(in, targets, model->initial_state(int64_t(chunk.size())));
    nll += (-forced.log_prob).sum().item<double>();
    correct += forced.head_correct.at("action").sum().item<double>();
    m.frames += int64_t(std::llround(forced.head_used.at("action").sum().item<double>()));
  }
  if (m.frames > 0) {
    m.loss = nll / double(m.frames);
    m.action_acc = correct / double(m.frames);
  }
  return m;
}

void split_dataset(const DatasetReader& data, uint64_t seed, double heldout_frac,
                   std::vector<int>* train_idx, std::vector<int>* heldout_idx) {
  train_idx->clear();
  heldout_idx->clear();
  for (int i = 0; i < data.num_sequences(); ++i) {
    const int game = data.sequence_game(i);
    const uint64_t h = derive_seed(seed, {fnv1a64("split"), uint64_t(game)});
    const bool held = double(h % 10000) < heldout_frac * 10000.0;
    (held ? heldout_idx : train_idx)->push_back(i);
  }
  if (train_idx->empty()) throw TrainError("dataset split left no training sequences");
}

namespace {

struct LoopConfig {
  int micro = 16;
  int effective = 32;
  int seq_len = 32;
  double epochs = 1;
  bool select_by_eval = false;
  std::string tag = "bc";
};

TrainResult run_loop(const RunConfig& cfg, const DatasetReader& data, policy::PolicyNet& model,
                     const LoopConfig& lc, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");
  TORCH_CHECK(lc.effective % lc.micro == 0, "effective batch must be a multiple of micro batch");

  std::vector<int> train_idx, heldout_idx;
  split_dataset(data, cfg.seed, cfg.bc.heldout_frac, &train_idx, &heldout_idx);

  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.bc.lr));
  RngStream shuffle_rng(derive_seed(cfg.seed, {fnv1a64(lc.tag), fnv1a64("shuffle")}));

  CsvLogger train_log(out_dir / (lc.tag + "_train.csv"),
                      {"step", "frames", "loss", "acc_action", "loss_action", "loss_delay",
                       "loss_queued", "loss_cg_id", "loss_cg_op", "loss_modifier", "loss_screen1",
                       "loss_screen2", "loss_minimap"});
  CsvLogger heldout_log(out_dir / (lc.tag + "_heldout.csv"), {"step", "loss", "acc_action"});
  CsvLogger select_log(out_dir / (lc.tag + "_selection.csv"),
                       {"step", "wins_easy", "wins_medium", "wins_total"});

  const int64_t target_steps = std::max<int64_t>(
      1, int64_t(std::llround(lc.epochs * double(train_idx.size()) / double(lc.effective))));

  TrainResult res;
  int64_t frames_seen = 0;
  double win_nll = 0;
  StepStats win;

  env::EnvConfig env_cfg = arena::env_config_from(cfg);
  const env::Race agent_race = env::race_from_name(cfg.env.agent_race);
  int64_t last_candidate = -1;

  auto eval_candidate = [&](int64_t step) {
    if (step == last_candidate) return;
    last_candidate = step;
    const fs::path p = out_dir / "checkpoints" / (lc.tag + "_step" + std::to_string(step) + ".pt");
    policy::save_checkpoint(p, model, {{"phase", lc.tag}, {"step", std::to_string(step)}});
    int wins_easy = 0, wins_medium = 0;
    for (int g = 0; g < cfg.bc.eval_games; ++g) {
      uint64_t s1 = derive_seed(cfg.seed, {fnv1a64("select"), uint64_t(step), 0, uint64_t(g)});
      uint64_t s2 = derive_seed(cfg.seed, {fnv1a64("select"), uint64_t(step), 1, uint64_t(g)});
      if (arena::run_match(model, env_cfg, env::OpponentLevel::kEasy, agent_race, agent_race, s1)
              .outcome == arena::Outcome::kWin)
        ++wins_easy;
      if (arena::run_match(model, env_cfg, env::OpponentLevel::kMedium, agent_race, agent_race, s2)
              .outcome == arena::Outcome::kWin)
        ++wins_medium;
    }
    const int total = wins_easy + wins_medium;
    select_log.append({double(step), double(wins_easy), double(wins_medium), double(total)});
    if (total > res.best_eval_wins) {  // strict: ties keep the earlier candidate
      res.best_eval_wins = total;
      res.best_checkpoint = p;
    }
  };

  int64_t step = 0;
  bool done = false;
  while (!done) {
    std::vector<int> order = train_idx;
    fisher_yates(order, shuffle_rng);
    if (order.size() < size_t(lc.effective))
      throw TrainError("training split smaller than one effective batch");
    for (size_t off = 0; off + size_t(lc.effective) <= order.size() && !done;
         off += size_t(lc.effective)) {
      std::vector<Sequence> owned;
      owned.reserve(size_t(lc.effective));
      for (int i = 0; i < lc.effective; ++i) owned.push_back(data.load(order[off + size_t(i)]));
      std::vector<const Sequence*> seqs;
      for (const Sequence& s : owned) seqs.push_back(&s);

      const double loss =
          train_step(model, opt, seqs, lc.micro, lc.seq_len, torch::kFloat32, &win);
      ++step;
      frames_seen += total_frames(seqs);
      res.step_losses.push_back(loss);
      win_nll += loss;

      if (step % cfg.bc.log_every == 0) {
        std::vector<double> row = {double(step), double(frames_seen),
                                   win_nll / double(cfg.bc.log_every),
                                   win.frames > 0 ? win.action_correct / win.frames : 0};
        for (const char* h : kHeads)
          row.push_back(win.head_used[h] > 0 ? win.head_nll[h] / win.head_used[h] : 0);
        train_log.append(row);
        win_nll = 0;
        win = StepStats{};
      }
      if (step % cfg.bc.eval_cadence == 0) {
        if (!heldout_idx.empty()) {
          auto m = evaluate_sequences(model, data, heldout_idx, lc.micro, lc.seq_len);
          heldout_log.append({double(step), m.loss, m.action_acc});
        }
        if (lc.select_by_eval) eval_candidate(step);
      }
      if (step >= target_steps) done = true;
    }
  }

  res.steps = int(step);
  if (!heldout_idx.empty())
    res.heldout = evaluate_sequences(model, data, heldout_idx, lc.micro, lc.seq_len);
  res.final_checkpoint = out_dir / "checkpoints" / (lc.tag + "_final.pt");
  policy::save_checkpoint(res.final_checkpoint, model,
                          {{"phase", lc.tag}, {"step", std::to_string(step)}});
  if (lc.select_by_eval) {
    eval_candidate(step);  // final weights compete too
    if (res.best_checkpoint.empty()) res.best_checkpoint = res.final_checkpoint;
  } else {
    res.best_checkpoint = res.final_checkpoint;
  }
  return res;
}

}  // namespace

TrainResult train_bc(const RunConfig& cfg, const DatasetReader& data,
                     const std::filesystem::path& out_dir) {
  torch::manual_seed(derive_seed(cfg.seed, {fnv1a64("bc_init")}));
  ActionSchema schema = cfg.make_schema();
  if (schema.hash() != data.schema_hash())
    throw TrainError("dataset schema does not match configured schema");
  policy::PolicyNet model(schema, cfg.net, data.stats());
  LoopConfig lc;
  lc.micro = cfg.bc.micro_batch;
  lc.effective = cfg.bc.effective_batch;
  lc.seq_len = cfg.bc.seq_len;
  lc.epochs = cfg.bc.epochs;
  lc.select_by_eval = false;
  lc.tag = "bc";
  return run_loop(cfg, data, model, lc, out_dir);
}

TrainResult finetune_bc(const RunConfig& cfg, const DatasetReader& data,
                        const std::filesystem::path& ckpt, const std::filesystem::path& out_dir) {
  auto info = policy::read_checkpoint_info(ckpt);
  ActionSchema schema = cfg.make_schema();
  if (schema.hash() != info.schema_hash)
    throw TrainError("checkpoint schema does not match configured schema");
  if (schema.hash() != data.schema_hash())
    throw TrainError("dataset schema does not match configured schema");
  policy::PolicyNet model(schema, info.settings, info.norm);
  policy::load_checkpoint(ckpt, model);
  LoopConfig lc;
  lc.micro = cfg.bc.micro_batch;
  lc.effective = cfg.bc.finetune_effective_batch;
  lc.seq_len = cfg.bc.seq_len;
  lc.epochs = cfg.bc.epochs;
  lc.select_by_eval = true;
  lc.tag = "finetune";
  return run_loop(cfg, data, model, lc, out_dir);
}

}  // namespace startrain::bc
