#include "startrain/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "startrain/arena.hpp"
#include "startrain/bc.hpp"

namespace startrain::ppo {

using torch::Tensor;

std::vector<ComponentArray> bootstrap_returns(const std::vector<ComponentArray>& rewards,
                                              const ComponentArray& bootstrap, double gamma) {
  std::vector<ComponentArray> out(rewards.size());
  ComponentArray g = bootstrap;
  for (int t = int(rewards.size()) - 1; t >= 0; --t) {
    for (int k = 0; k < kComponents; ++k) g[size_t(k)] = rewards[size_t(t)][size_t(k)] + gamma * g[size_t(k)];
    out[size_t(t)] = g;
  }
  return out;
}

std::vector<double> bootstrap_returns_total(const std::vector<double>& rewards, double bootstrap,
                                            double gamma) {
  std::vector<double> out(rewards.size());
  double g = bootstrap;
  for (int t = int(rewards.size()) - 1; t >= 0; --t) {
    g = rewards[size_t(t)] + gamma * g;
    out[size_t(t)] = g;
  }
  return out;
}

Tensor ppo_policy_loss(const Tensor& new_lp, const Tensor& old_lp, const Tensor& adv, double eps,
                       bool clipped_only, const Tensor& weight) {
  auto ratio = torch::exp(new_lp - old_lp);
  auto clipped = torch::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
  auto objective = clipped_only ? clipped : torch::min(ratio * adv, clipped);
  return -(objective * weight).sum();
}

Tensor value_loss(const Tensor& pred, const Tensor& targets, const Tensor& weight) {
  auto se = 0.5 * (pred - targets).square().sum(1);
  return (se * weight).sum();
}

Tensor kl_to_reference(const policy::HeadDists& now,
                       const std::map<std::string, Tensor>& ref_lp, const Tensor& weight) {
  Tensor total = torch::zeros_like(weight);
  for (const auto& [name, lp] : now.log_probs) {
    auto it = ref_lp.find(name);
    TORCH_CHECK(it != ref_lp.end(), "missing reference distribution for head ", name);
    auto p = torch::exp(lp);
    auto contrib = torch::where(p > 0, p * (lp - it->second), torch::zeros_like(p));
    total = total + contrib.sum(1) * now.used.at(name);
  }
  return (total * weight).sum();
}

ReplayStream::ReplayStream(const DatasetReader& data, uint64_t seed) : data_(&data), rng_(seed) {
  if (data.num_sequences() == 0) throw TrainError("replay dataset is empty");
  order_.resize(size_t(data.num_sequences()));
  for (int i = 0; i < data.num_sequences(); ++i) order_[size_t(i)] = i;
  pos_ = order_.size();  // force shuffle on first use
}

std::vector<Sequence> ReplayStream::next(int n) {
  std::vector<Sequence> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    if (pos_ >= order_.size()) {
      for (int j = int(order_.size()) - 1; j > 0; --j)
        std::swap(order_[size_t(j)], order_[size_t(rng_.uniform_int(0, j))]);
      pos_ = 0;
    }
    out.push_back(data_->load(order_[pos_++]));
  }
  return out;
}

namespace {

policy::RecurrentState stack_states(const std::vector<const policy::RecurrentState*>& states) {
  std::vector<Tensor> ph, pc, ch, cc;
  for (const auto* s : states) {
    ph.push_back(s->pixel_h);
    pc.push_back(s->pixel_c);
    ch.push_back(s->core_h);
    cc.push_back(s->core_c);
  }
  return {torch::cat(ph, 0), torch::cat(pc, 0), torch::cat(ch, 1), torch::cat(cc, 1)};
}

void zero_state_row(policy::RecurrentState& s, int b) {
  s.pixel_h[b].zero_();
  s.pixel_c[b].zero_();
  s.core_h.select(1, b).zero_();
  s.core_c.select(1, b).zero_();
}

}  // namespace

Collector::Collector(const RunConfig& cfg)
    : cfg_(cfg),
      schema_(cfg.make_schema()),
      env_cfg_(arena::env_config_from(cfg)),
      agent_race_(env::race_from_name(cfg.env.agent_race)),
      rng_(derive_seed(cfg.seed, {fnv1a64("rl_sample")})) {
  for (const std::string& name : split_csv(cfg.ppo.opponents))
    levels_.push_back(env::opponent_level_from_name(name));
  if (levels_.empty()) throw ConfigError("ppo.opponents must name at least one level");
  if (cfg.ppo.num_envs < 1) throw ConfigError("ppo.num_envs must be positive");
  envs_.resize(size_t(cfg.ppo.num_envs));
  cur_obs_.resize(size_t(cfg.ppo.num_envs));
}

void Collector::reset_stream(int b, policy::PolicyNet* frozen_present) {
  const env::OpponentLevel level = levels_[size_t(episode_counter_ % int64_t(levels_.size()))];
  const env::Race opp = env::Race(int(episode_counter_ % 3));
  const uint64_t seed = derive_seed(cfg_.seed, {fnv1a64("rl_episode"), uint64_t(episode_counter_)});
  ++episode_counter_;
  if (!envs_[size_t(b)]) envs_[size_t(b)] = std::make_unique<env::MiniRtsEnv>(schema_, env_cfg_);
  envs_[size_t(b)]->reset(seed, level, agent_race_, opp);
  envs_[size_t(b)]->set_conditioning(env::Conditioning{});
  cur_obs_[size_t(b)] = envs_[size_t(b)]->observe();
  if (model_state_.pixel_h.defined()) {
    zero_state_row(model_state_, b);
    if (frozen_present) zero_state_row(frozen_state_, b);
  }
}

std::vector<Trajectory> Collector::collect(policy::PolicyNet& model, policy::PolicyNet* frozen) {
  torch::NoGradGuard guard;
  const int E = cfg_.ppo.num_envs;
  const int T = cfg_.ppo.seq_len;
  const int total = cfg_.ppo.trajectories_per_update;
  const NormStats& norm = model->norm();

  if (!model_state_.pixel_h.defined()) {
    model_state_ = model->initial_state(E);
    if (frozen) frozen_state_ = (*frozen)->initial_state(E);
    for (int b = 0; b < E; ++b) reset_stream(b, frozen);
  }

  std::vector<Trajectory> out(static_cast<size_t>(total));

  int base = 0;
  while (base < total) {
    const int need = std::min(E, total - base);
    std::vector<uint8_t> recording(size_t(E), 0);
    for (int b = 0; b < need; ++b) {
      recording[size_t(b)] = 1;
      Trajectory& tr = out[size_t(base + b)];
      tr.init_state = model_state_.index(torch::tensor(std::vector<int64_t>{b}));
    }
    // per-tick frozen head distributions, stacked per stream afterwards
    std::vector<std::map<std::string, Tensor>> tick_lp, tick_used;

    for (int t = 0; t < T; ++t) {
      std::vector<const FeatureObservation*> ptrs(static_cast<size_t>(E));
      for (int b = 0; b < E; ++b) ptrs[size_t(b)] = &cur_obs_[size_t(b)];
      auto in = net::make_batch_input(ptrs, E, 1, schema_, norm, torch::kFloat32);
      auto s = model->sample(in, model_state_, &rng_);
      model_state_ = s.state;

      if (frozen) {
        std::vector<const HierarchicalAction*> acts(static_cast<size_t>(E));
        for (int b = 0; b < E; ++b) acts[size_t(b)] = &s.actions[size_t(b)];
        auto targets = net::make_action_batch(acts, E, 1, schema_);
        auto fr = (*frozen)->forward_forced(in, targets, frozen_state_, true);
        frozen_state_ = fr.state;
        tick_lp.push_back(fr.dists->log_probs);
        tick_used.push_back(fr.dists->used);
      }

      auto lp = s.log_prob.to(torch::kFloat64);
      auto vals = s.values.to(torch::kFloat64);
      auto lp_acc = lp.accessor<double, 1>();
      auto val_acc = vals.accessor<double, 2>();

      for (int b = 0; b < E; ++b) {
        auto step = envs_[size_t(b)]->step(s.actions[size_t(b)]);
        if (step.status != env::StepStatus::kOk)
          throw TrainError("sampled action rejected by environment during collection");
        if (recording[size_t(b)]) {
          Trajectory& tr = out[size_t(base + b)];
          tr.obs.push_back(std::move(cur_obs_[size_t(b)]));
          tr.actions.push_back(s.actions[size_t(b)]);
          tr.behavior_lp.push_back(lp_acc[b]);
          tr.rewards.push_back(step.reward.shaped());
          ComponentArray v{};
          for (int k = 0; k < kComponents; ++k) v[size_t(k)] = val_acc[b][k];
          tr.values.push_back(v);
        }
        if (step.done) {
          results_.push_back(step.result > 0 ? 1 : (step.result < 0 ? -1 : 0));
          if (recording[size_t(b)]) {
            out[size_t(base + b)].terminated = true;
            recording[size_t(b)] = 0;
          }
          reset_stream(b, frozen);
        } else {
          cur_obs_[size_t(b)] = std::move(step.obs);
        }
      }
    }

    // bootstrap the windows that ran into the cut, one batched values pass
    {
      std::vector<const FeatureObservation*> ptrs(static_cast<size_t>(E));
      for (int b = 0; b < E; ++b) ptrs[size_t(b)] = &cur_obs_[size_t(b)];
      auto in = net::make_batch_input(ptrs, E, 1, schema_, norm, torch::kFloat32);
      auto vals = model->values_only(in, model_state_).to(torch::kFloat64);
      auto acc = vals.accessor<double, 2>();
      for (int b = 0; b < need; ++b) {
        Trajectory& tr = out[size_t(base + b)];
        if (tr.terminated) continue;
        for (int k = 0; k < kComponents; ++k) tr.bootstrap[size_t(k)] = acc[b][k];
      }
    }

    if (frozen) {
      std::map<std::string, Tensor> lp_stacked, used_stacked;  // (T, E, dim) / (T, E)
      for (const auto& [name, first] : tick_lp.front()) {
        std::vector<Tensor> ls, us;
        for (int t = 0; t < T; ++t) {
          ls.push_back(tick_lp[size_t(t)].at(name));
          us.push_back(tick_used[size_t(t)].at(name));
        }
        lp_stacked[name] = torch::stack(ls);
        used_stacked[name] = torch::stack(us);
      }
      for (int b = 0; b < need; ++b) {
        Trajectory& tr = out[size_t(base + b)];
        for (const auto& [name, lp] : lp_stacked) {
          tr.frozen_lp[name] = lp.select(1, b).clone();
          tr.frozen_used[name] = used_stacked.at(name).select(1, b).clone();
        }
      }
    }
    base += need;
  }
  return out;
}

double Collector::win_rate_last(int n) const {
  if (results_.empty()) return 0;
  const size_t lo = results_.size() > size_t(n) ? results_.size() - size_t(n) : 0;
  int wins = 0;
  for (size_t i = lo; i < results_.size(); ++i) wins += results_[i] == 1 ? 1 : 0;
  return double(wins) / double(results_.size() - lo);
}

namespace {

// Right-pads trajectory steps to seq_len with the last frame and action -1,
// mirroring the supervised batch layout so the same masking applies.
struct MicroBatch {
  net::BatchInput in;
  net::ActionBatch targets;
  Tensor behavior_lp;  // (N) f32
  Tensor returns;      // (N, K) f32
  Tensor adv;          // (N) f32
  Tensor valid;        // (N) f32
  policy::RecurrentState init;
  std::map<std::string, Tensor> ref_lp;  // approach 3 recordings, (N, dim)
};

MicroBatch assemble_trajs(const std::vector<const Trajectory*>& trajs, int seq_len,
                          const ActionSchema& schema, const NormStats& norm,
                          const std::vector<const std::vector<ComponentArray>*>& returns,
                          const std::vector<const std::vector<double>*>& advantages,
                          bool want_refs) {
  const int64_t B = int64_t(trajs.size());
  const int64_t N = B * seq_len;
  static const HierarchicalAction kPad = [] {
    HierarchicalAction a;
    a.action_id = -1;
    return a;
  }();
  std::vector<const FeatureObservation*> obs(static_cast<size_t>(N));
  std::vector<const HierarchicalAction*> acts(static_cast<size_t>(N));
  MicroBatch m;
  m.behavior_lp = torch::zeros({N}, torch::kFloat32);
  m.returns = torch::zeros({N, kComponents}, torch::kFloat32);
  m.adv = torch::zeros({N}, torch::kFloat32);
  m.valid = torch::zeros({N}, torch::kFloat32);
  auto lp_acc = m.behavior_lp.accessor<float, 1>();
  auto ret_acc = m.returns.accessor<float, 2>();
  auto adv_acc = m.adv.accessor<float, 1>();
  auto valid_acc = m.valid.accessor<float, 1>();
  std::vector<const policy::RecurrentState*> states;
  for (int64_t b = 0; b < B; ++b) {
    const Trajectory& tr = *trajs[size_t(b)];
    TORCH_CHECK(tr.length() > 0 && tr.length() <= seq_len, "bad trajectory length");
    states.push_back(&tr.init_state);
    for (int t = 0; t < seq_len; ++t) {
      const int64_t n = b * seq_len + t;
      const bool pad = t >= tr.length();
      obs[size_t(n)] = pad ? &tr.obs.back() : &tr.obs[size_t(t)];
      acts[size_t(n)] = pad ? &kPad : &tr.actions[size_t(t)];
      if (!pad) {
        valid_acc[n] = 1;
        lp_acc[n] = float(tr.behavior_lp[size_t(t)]);
        adv_acc[n] = float((*advantages[size_t(b)])[size_t(t)]);
        for (int k = 0; k < kComponents; ++k)
          ret_acc[n][k] = float((*returns[size_t(b)])[size_t(t)][size_t(k)]);
      }
    }
  }
  m.in = net::make_batch_input(obs, B, seq_len, schema, norm, torch::kFloat32);
  m.targets = net::make_action_batch(acts, B, seq_len, schema);
  m.init = stack_states(states);
  if (want_refs) {
    if (trajs[0]->frozen_lp.empty())
      throw TrainError("rollout-KL regularization requires recorded frozen distributions");
    for (const auto& [name, lp0] : trajs[0]->frozen_lp) {
      std::vector<Tensor> rows;
      for (const Trajectory* tr : trajs) {
        TORCH_CHECK(!tr->frozen_lp.empty(),
                    "rollout-KL regularization requires recorded frozen distributions");
        Tensor lp = tr->frozen_lp.at(name);  // (window, dim)
        if (lp.size(0) < seq_len) {
          Tensor padded = torch::zeros({seq_len, lp.size(1)}, lp.options());
          padded.narrow(0, 0, lp.size(0)).copy_(lp);
          lp = padded;
        }
        rows.push_back(lp.narrow(0, 0, seq_len));
      }
      m.ref_lp[name] = torch::cat(rows, 0);  // (N, dim)
    }
  }
  return m;
}

bool grads_finite(policy::PolicyNet& model) {
  for (const auto& p : model->parameters()) {
    if (p.grad().defined() && !p.grad().isfinite().all().item<bool>()) return false;
  }
  return true;
}

}  // namespace

UpdateStats ppo_update(policy::PolicyNet& model, policy::PolicyNet* frozen,
                       torch::optim::Optimizer& opt, const std::vector<Trajectory>& trajs,
                       const RunConfig& cfg, int approach, ReplayStream* replays) {
  const PPOSettings& P = cfg.ppo;
  const double gamma = approach == 1 ? P.gamma_approach1 : P.gamma_approach23;
  const bool clipped_only = P.objective == "clipped_only";
  if (!clipped_only && P.objective != "min_form")
    throw ConfigError("ppo.objective must be min_form or clipped_only");
  if (approach == 1 && !replays)
    throw TrainError("joint supervised-loss approach needs a replay dataset");
  if (approach == 2 && !frozen) throw TrainError("batch-KL approach needs the frozen policy");

  UpdateStats stats;
  int64_t total_valid = 0;
  for (const Trajectory& tr : trajs) total_valid += tr.length();
  TORCH_CHECK(total_valid > 0, "empty trajectory batch");
  stats.frames = total_valid;

  // return targets and advantages, then optional whole-batch normalization
  std::vector<std::vector<ComponentArray>> rets(trajs.size());
  std::vector<std::vector<double>> advs(trajs.size());
  double adv_sum = 0;
  for (size_t i = 0; i < trajs.size(); ++i) {
    rets[i] = bootstrap_returns(trajs[i].rewards, trajs[i].bootstrap, gamma);
    advs[i].resize(rets[i].size());
    for (size_t t = 0; t < rets[i].size(); ++t) {
      double g = 0, v = 0;
      for (int k = 0; k < kComponents; ++k) {
        g += rets[i][t][size_t(k)];
        v += trajs[i].values[t][size_t(k)];
        stats.mean_reward[size_t(k)] += trajs[i].rewards[t][size_t(k)];
      }
      advs[i][t] = g - v;
      adv_sum += advs[i][t];
    }
  }
  for (int k = 0; k < kComponents; ++k) stats.mean_reward[size_t(k)] /= double(total_valid);
  if (P.advantage_norm) {
    const double mean = adv_sum / double(total_valid);
    double var = 0;
    for (const auto& a : advs)
      for (double x : a) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / double(total_valid)) + 1e-8;
    for (auto& a : advs)
      for (double& x : a) x = (x - mean) / sd;
  }

  // fixed micro partition, reused across epochs
  std::vector<std::vector<const Trajectory*>> micros;
  for (size_t off = 0; off < trajs.size(); off += size_t(P.micro_batch)) {
    const size_t hi = std::min(trajs.size(), off + size_t(P.micro_batch));
    std::vector<const Trajectory*> m;
    for (size_t i = off; i < hi; ++i) m.push_back(&trajs[i]);
    micros.push_back(std::move(m));
  }
  // approach-1 replay chunks are drawn once per update and reused per epoch
  std::vector<std::vector<Sequence>> sl_chunks;
  if (approach == 1)
    for (size_t i = 0; i < micros.size(); ++i) sl_chunks.push_back(replays->next(P.micro_batch));

  const bool want_dists = approach >= 2;
  double loss_sum = 0, pol_sum = 0, val_sum = 0, ent_sum = 0, sl_sum = 0, kl_first = 0;

  for (int epoch = 0; epoch < P.epochs; ++epoch) {
    opt.zero_grad();
    double e_ratio = 0, e_clip = 0, e_kl = 0;
    for (size_t mi = 0; mi < micros.size(); ++mi) {
      const auto& group = micros[mi];
      std::vector<const std::vector<ComponentArray>*> ret_ptrs;
      std::vector<const std::vector<double>*> adv_ptrs;
      for (const Trajectory* tr : group) {
        const size_t idx = size_t(tr - trajs.data());
        ret_ptrs.push_back(&rets[idx]);
        adv_ptrs.push_back(&advs[idx]);
      }
      MicroBatch m = assemble_trajs(group, P.seq_len, model->schema(), model->norm(), ret_ptrs,
                                    adv_ptrs, approach == 3);
      auto forced = model->forward_forced(m.in, m.targets, m.init, want_dists);
      auto weight = m.valid / double(total_valid);

      auto pol = ppo_policy_loss(forced.log_prob, m.behavior_lp, m.adv, P.epsilon, clipped_only,
                                 weight);
      auto val = value_loss(forced.values, m.returns, weight);
      auto ent = (forced.entropy * weight).sum();
      auto loss = pol + P.value_weight * val - P.entropy_weight * ent;

      if (approach == 2) {
        torch::NoGradGuard ng;
        auto ref = (*frozen)->forward_forced(m.in, m.targets, m.init, true);
        m.ref_lp = ref.dists->log_probs;
      }
      if (approach >= 2) {
        auto kl = kl_to_reference(*forced.dists, m.ref_lp, weight);
        loss = loss + P.kl_weight * kl;
        e_kl += kl.item<double>();
      }
      if (approach == 1) {
        const auto& seqs = sl_chunks[mi];
        std::vector<const Sequence*> ptrs;
        int64_t frames = 0;
        for (const Sequence& s : seqs) {
          ptrs.push_back(&s);
          frames += s.length();
        }
        net::BatchInput sin;
        net::ActionBatch stg;
        bc::assemble(ptrs, P.seq_len, model->schema(), model->norm(), torch::kFloat32, &sin, &stg);
        auto sf = model->forward_forced(sin, stg, model->initial_state(int64_t(ptrs.size())));
        auto sl = (-sf.log_prob).sum() / double(frames) / double(micros.size());
        loss = loss + P.sl_weight * sl;
        sl_sum += sl.item<double>();
      }

      {
        torch::NoGradGuard ng;
        auto ratio = torch::exp(forced.log_prob - m.behavior_lp);
        e_ratio += (ratio * weight).sum().item<double>();
        e_clip += (((ratio - 1.0).abs() > P.epsilon).to(torch::kFloat32) * weight)
                      .sum()
                      .item<double>();
        loss_sum += loss.item<double>();
        pol_sum += pol.item<double>();
        val_sum += val.item<double>();
        ent_sum += ent.item<double>();
      }
      loss.backward();
    }
    if (grads_finite(model)) {
      opt.step();
    } else {
      opt.zero_grad();
      ++stats.skipped_steps;
    }
    stats.epoch_ratio_mean.push_back(e_ratio);
    stats.epoch_clip_fraction.push_back(e_clip);
    if (epoch == 0) kl_first = e_kl;
  }

  const double ne = double(P.epochs);
  stats.loss = loss_sum / ne;
  stats.policy_loss = pol_sum / ne;
  stats.value_loss = val_sum / ne;
  stats.entropy = ent_sum / ne;
  stats.sl_loss = approach == 1 ? sl_sum / ne : 0;
  stats.kl = kl_first;
  stats.ratio_mean = stats.epoch_ratio_mean.front();
  stats.clip_fraction = stats.epoch_clip_fraction.back();
  return stats;
}

RLRunResult train_rl(const RunConfig& cfg, int approach, const std::filesystem::path& bc_ckpt,
                     const std::filesystem::path& replays_path,
                     const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (approach < 1 || approach > 3) throw ConfigError("approach must be 1, 2, or 3");
  fs::create_directories(out_dir / "checkpoints");
  torch::manual_seed(derive_seed(cfg.seed, {fnv1a64("rl_init")}));

  ActionSchema schema = cfg.make_schema();
  auto info = policy::read_checkpoint_info(bc_ckpt);
  if (schema.hash() != info.schema_hash)
    throw TrainError("checkpoint schema does not match configured schema");
  policy::PolicyNet model(schema, info.settings, info.norm);
  policy::load_checkpoint(bc_ckpt, model);
  policy::PolicyNet frozen(schema, info.settings, info.norm);
  policy::load_checkpoint(bc_ckpt, frozen);
  frozen->eval();

  std::optional<DatasetReader> data;
  std::optional<ReplayStream> replays;
  if (approach == 1) {
    if (replays_path.empty())
      throw TrainError("joint supervised-loss approach needs --data with a replay dataset");
    data.emplace(replays_path);
    if (data->schema_hash() != schema.hash())
      throw TrainError("dataset schema does not match configured schema");
    replays.emplace(*data, derive_seed(cfg.seed, {fnv1a64("rl_replays")}));
  }

  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.ppo.lr));
  Collector collector(cfg);

  std::vector<std::string> cols = {"update",     "frames",     "episodes",   "win_rate_last_100",
                                   "loss",       "policy_loss", "value_loss", "entropy",
                                   "kl",         "sl_loss",    "ratio_mean", "clip_fraction",
                                   "skipped_steps"};
  for (const auto& name : reward_component_names()) cols.push_back("reward_" + name);
  CsvLogger metrics(out_dir / "rl_metrics.csv", cols);

  RLRunResult res;
  int below_bound = 0;
  double best_wr = -1;

  for (int u = 1; u <= cfg.ppo.updates; ++u) {
    auto trajs = collector.collect(model, approach == 3 ? &frozen : nullptr);
    auto stats = ppo_update(model, approach == 2 ? &frozen : nullptr, opt, trajs, cfg, approach,
                            approach == 1 ? &*replays : nullptr);
    stats.update = u;
    stats.episodes = collector.episodes_finished();
    stats.win_rate_last_100 = collector.win_rate_last(100);

    std::vector<double> row = {double(u),        double(stats.frames), double(stats.episodes),
                               stats.win_rate_last_100, stats.loss,    stats.policy_loss,
                               stats.value_loss, stats.entropy,        stats.kl,
                               stats.sl_loss,    stats.ratio_mean,     stats.clip_fraction,
                               double(stats.skipped_steps)};
    for (int k = 0; k < kComponents; ++k) row.push_back(stats.mean_reward[size_t(k)]);
    metrics.append(row);

    const double wr = stats.win_rate_last_100;
    if (stats.kl < cfg.ppo.kl_bound) ++below_bound;
    res.win_rate_curve.push_back(wr);
    res.updates.push_back(std::move(stats));
    ++res.updates_run;

    if (collector.episodes_finished() >= 100 && wr > best_wr) {
      best_wr = wr;
      res.best_checkpoint = out_dir / "checkpoints" / "rl_best.pt";
      policy::save_checkpoint(res.best_checkpoint, model,
                              {{"phase", "rl"},
                               {"approach", std::to_string(approach)},
                               {"update", std::to_string(u)},
                               {"win_rate_last_100", std::to_string(best_wr)}});
    }
    if (cfg.ppo.target_win_rate > 0 && collector.episodes_finished() >= 100 &&
        wr >= cfg.ppo.target_win_rate)
      break;
  }

  res.final_checkpoint = out_dir / "checkpoints" / "rl_final.pt";
  policy::save_checkpoint(res.final_checkpoint, model,
                          {{"phase", "rl"},
                           {"approach", std::to_string(approach)},
                           {"update", std::to_string(res.updates_run)}});
  if (res.best_checkpoint.empty()) res.best_checkpoint = res.final_checkpoint;
  res.kl_below_bound_frac =
      res.updates_run > 0 ? double(below_bound) / double(res.updates_run) : 0;
  return res;
}

}  // namespace startrain::ppo
