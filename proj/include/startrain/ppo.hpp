#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "startrain/config.hpp"
#include "startrain/dataset.hpp"
#include "startrain/env.hpp"
#include "startrain/policy.hpp"

namespace startrain::ppo {

constexpr int kComponents = RewardBreakdown::kNumComponents;
using ComponentArray = std::array<double, kComponents>;

// One collection window from one environment stream. Steps past an episode
// end inside the window are simply absent (length < window), and the
// bootstrap is zero in that case.
struct Trajectory {
  std::vector<FeatureObservation> obs;
  std::vector<HierarchicalAction> actions;
  std::vector<double> behavior_lp;       // log-prob under the collecting policy
  std::vector<ComponentArray> rewards;   // shaped, per component
  std::vector<ComponentArray> values;    // collection-time predictions
  ComponentArray bootstrap{};            // value of the window's successor state
  bool terminated = false;
  policy::RecurrentState init_state;     // batch-1, start-of-window
  // Frozen-policy head log-distributions recorded at collection time
  // (rollout-KL regularization): name -> (window, dim) and (window) used.
  std::map<std::string, torch::Tensor> frozen_lp;
  std::map<std::string, torch::Tensor> frozen_used;

  int length() const { return int(actions.size()); }
};

// Discounted return targets: G_t = r_t + gamma * G_{t+1}, seeded with the
// bootstrap value past the window end. Computed independently per component.
std::vector<ComponentArray> bootstrap_returns(const std::vector<ComponentArray>& rewards,
                                              const ComponentArray& bootstrap, double gamma);
std::vector<double> bootstrap_returns_total(const std::vector<double>& rewards,
                                            double bootstrap, double gamma);

// Negated clipped surrogate, averaged with `weight` (a 0/1 validity mask
// divided by the true sample count). clipped_only drops the unclipped term
// of the min.
torch::Tensor ppo_policy_loss(const torch::Tensor& new_lp, const torch::Tensor& old_lp,
                              const torch::Tensor& adv, double eps, bool clipped_only,
                              const torch::Tensor& weight);

// 0.5 * squared error summed over components, weighted like above.
torch::Tensor value_loss(const torch::Tensor& pred, const torch::Tensor& targets,
                         const torch::Tensor& weight);

// KL(current || reference) summed over used heads, weighted like above.
torch::Tensor kl_to_reference(const policy::HeadDists& now,
                              const std::map<std::string, torch::Tensor>& ref_lp,
                              const torch::Tensor& weight);

// Endless shuffled feed of dataset sequences for the joint SL+RL approach.
class ReplayStream {
 public:
  ReplayStream(const DatasetReader& data, uint64_t seed);
  std::vector<Sequence> next(int n);

 private:
  const DatasetReader* data_;
  std::vector<int> order_;
  size_t pos_ = 0;
  RngStream rng_;
};

// Lockstep trajectory collection over persistent environment streams. All
// streams advance on every tick; each round records as many of them as are
// still needed to reach the requested trajectory count.
class Collector {
 public:
  explicit Collector(const RunConfig& cfg);

  // Collects cfg.ppo.trajectories_per_update windows of cfg.ppo.seq_len
  // steps. When `frozen` is given it is co-evaluated on every step with its
  // own recurrent state, teacher-forced on the sampled action, and its head
  // distributions are recorded into the trajectories.
  std::vector<Trajectory> collect(policy::PolicyNet& model, policy::PolicyNet* frozen);

  int64_t episodes_finished() const { return int64_t(results_.size()); }
  const std::vector<int>& results() const { return results_; }  // +1/0/-1
  double win_rate_last(int n) const;

 private:
  void reset_stream(int b, policy::PolicyNet* frozen_present);

  RunConfig cfg_;
  ActionSchema schema_;
  env::EnvConfig env_cfg_;
  std::vector<env::OpponentLevel> levels_;
  env::Race agent_race_;
  std::vector<std::unique_ptr<env::MiniRtsEnv>> envs_;
  std::vector<FeatureObservation> cur_obs_;
  policy::RecurrentState model_state_;
  policy::RecurrentState frozen_state_;
  int64_t episode_counter_ = 0;
  std::vector<int> results_;
  RngStream rng_;
};

struct UpdateStats {
  int update = 0;
  int64_t frames = 0;  // valid transitions in the batch
  double loss = 0;
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  double kl = 0;       // first-epoch mean over used heads
  double sl_loss = 0;
  double ratio_mean = 0;      // first epoch
  double clip_fraction = 0;   // last epoch
  std::vector<double> epoch_ratio_mean;
  std::vector<double> epoch_clip_fraction;
  int skipped_steps = 0;
  ComponentArray mean_reward{};  // shaped, per valid transition
  int64_t episodes = 0;
  double win_rate_last_100 = 0;
};

// One PPO update: `epochs` optimizer steps over a fixed micro-batch
// partition of the trajectory batch. approach 1 mixes in supervised loss
// from `replays`; approach 2 evaluates `frozen` on the training batch;
// approach 3 penalizes KL against the recorded collection-time
// distributions.
UpdateStats ppo_update(policy::PolicyNet& model, policy::PolicyNet* frozen,
                       torch::optim::Optimizer& opt, const std::vector<Trajectory>& trajs,
                       const RunConfig& cfg, int approach, ReplayStream* replays);

struct RLRunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::vector<UpdateStats> updates;
  std::vector<double> win_rate_curve;
  double kl_below_bound_frac = 0;
  int updates_run = 0;
};

// Full RL fine-tuning run from a supervised checkpoint. `replays_path` is
// required for approach 1 and ignored otherwise. Stops early once
// win-rate-last-100 reaches cfg.ppo.target_win_rate (if set positive).
RLRunResult train_rl(const RunConfig& cfg, int approach, const std::filesystem::path& bc_ckpt,
                     const std::filesystem::path& replays_path,
                     const std::filesystem::path& out_dir);

}  // namespace startrain::ppo
