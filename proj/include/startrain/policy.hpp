#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "startrain/net.hpp"

namespace startrain::policy {

using net::ActionBatch;
using net::BatchInput;

// Everything the network carries across timesteps: per-slot memory for the
// shared pixel LSTM plus the two-layer core LSTM state.
struct RecurrentState {
  torch::Tensor pixel_h, pixel_c;  // (B, S, pixel_width)
  torch::Tensor core_h, core_c;    // (layers, B, core_width)

  RecurrentState detached() const;
  RecurrentState clone() const;
  // Rows re-ordered / selected along the batch dimension.
  RecurrentState index(const torch::Tensor& rows) const;
  int64_t batch() const { return pixel_h.size(0); }
};

// Full per-head log-distributions, aligned with the (N) frame axis. Heads
// a frame did not use hold zeros on that row.
struct HeadDists {
  std::map<std::string, torch::Tensor> log_probs;  // name -> (N, dim)
  std::map<std::string, torch::Tensor> used;       // name -> (N) float 0/1
};

struct ForcedResult {
  torch::Tensor log_prob;  // (N) total log-probability of the target action
  torch::Tensor entropy;   // (N) sum of used-head entropies
  std::map<std::string, torch::Tensor> head_nll;      // (N), zero where unused
  std::map<std::string, torch::Tensor> head_used;     // (N) float 0/1
  std::map<std::string, torch::Tensor> head_correct;  // (N) argmax hit, float
  torch::Tensor values;    // (N, reward components)
  RecurrentState state;
  std::optional<HeadDists> dists;
};

struct SampleResult {
  std::vector<HierarchicalAction> actions;
  torch::Tensor log_prob;  // (B)
  torch::Tensor values;    // (B, reward components)
  RecurrentState state;
  std::optional<HeadDists> dists;
};

struct PolicyNetImpl : torch::nn::Module {
  PolicyNetImpl(const ActionSchema& schema, const NetworkSettings& settings,
                const NormStats& norm);

  RecurrentState initial_state(int64_t batch) const;

  // Teacher-forced evaluation over a (B, T) batch.
  ForcedResult forward_forced(const BatchInput& in, const ActionBatch& targets,
                              const RecurrentState& state, bool want_dists = false);
  // One decision per batch row (T must be 1). Sampling consumes `rng` in
  // row order; pass argmax=true for greedy play.
  SampleResult sample(const BatchInput& in, const RecurrentState& state, RngStream* rng,
                      bool argmax = false, bool want_dists = false);

  // Value predictions only (for bootstrapping); the advanced state is discarded.
  torch::Tensor values_only(const BatchInput& in, const RecurrentState& state);

  const ActionSchema& schema() const { return schema_; }
  const NormStats& norm() const { return norm_; }
  const NetworkSettings& settings() const { return settings_; }
  uint64_t arch_hash() const;
  int64_t slots() const { return slots_; }

 private:
  struct TrunkOut {
    torch::Tensor lstm_out;      // (N, core)
    torch::Tensor screen_skip;   // (N, pw, 8, 8)
    torch::Tensor minimap_skip;  // (N, pw, 8, 8)
    torch::Tensor gating;        // (N, 4*scalar_out)
    torch::Tensor cg_keys;       // (N, groups, key)
    torch::Tensor zcond;         // (N, film_cond_hidden)
    RecurrentState state;
  };
  TrunkOut trunk(const BatchInput& in, const RecurrentState& state);
  torch::Tensor scalar_context(const BatchInput& in, torch::Tensor* gating);
  torch::Tensor action_logits(const torch::Tensor& ar0, const torch::Tensor& gating,
                              const torch::Tensor& available);

  ActionSchema schema_;
  NetworkSettings settings_;
  NormStats norm_;
  int64_t slots_ = 0;

  // grid embeddings
  std::vector<torch::nn::Embedding> screen_embeds_, minimap_embeds_;
  // scalar encoders, fixed order
  net::ScalarMLP enc_player_{nullptr}, enc_game_loop_{nullptr}, enc_mmr_{nullptr},
      enc_prev_action_{nullptr}, enc_prev_points_{nullptr}, enc_cgroups_{nullptr},
      enc_cg_hint_{nullptr}, enc_build_order_{nullptr}, enc_available_{nullptr};
  net::SetEncoder enc_cargo_{nullptr}, enc_multi_{nullptr}, enc_queue_{nullptr},
      enc_single_{nullptr};
  torch::nn::Embedding build_order_embed_{nullptr};
  torch::nn::Linear zcond_proj_{nullptr};

  net::SpatialColumn screen_col_{nullptr}, minimap_col_{nullptr};
  net::TransformerLayer tf1_{nullptr}, tf2_{nullptr}, tf3_{nullptr};
  torch::nn::LSTMCell pixel_lstm_{nullptr};
  torch::nn::Linear summary_proj_{nullptr};
  torch::nn::Linear core_in_{nullptr};
  torch::nn::LSTM core_{nullptr};

  // control-group bypass rows -> attention keys
  torch::nn::Linear cg_row1_{nullptr}, cg_row2_{nullptr};

  // heads
  torch::nn::Linear ar_proj_{nullptr}, gate_proj_{nullptr};
  std::vector<torch::nn::Linear> action_res_a_, action_res_b_;
  torch::nn::Linear action_out_{nullptr};
  torch::nn::Embedding action_embed_{nullptr}, delay_embed_{nullptr}, queued_embed_{nullptr},
      cg_embed_{nullptr};
  torch::nn::Linear delay_h_{nullptr}, delay_out_{nullptr};
  torch::nn::Linear queued_h_{nullptr}, queued_out_{nullptr};
  torch::nn::Linear cg_query_{nullptr};
  torch::nn::Linear cg_op_h_{nullptr}, cg_op_out_{nullptr};
  torch::nn::Linear modifier_h_{nullptr}, modifier_out_{nullptr};
  torch::nn::Linear mix_proj_{nullptr};
  net::SpatialHead head_screen1_{nullptr}, head_screen2_{nullptr}, head_minimap_{nullptr};
  std::vector<torch::nn::Linear> value_h_, value_out_;

  // per-action parameter usage tables
  std::vector<uint8_t> uses_queued_, uses_screen1_, uses_screen2_, uses_minimap_, uses_cg_id_,
      uses_cg_op_, uses_modifier_;
};
TORCH_MODULE(PolicyNet);

// Single-file checkpoint: parameters + a JSON metadata blob (schema hash,
// architecture hash, normalization stats, training step, code version).
void save_checkpoint(const std::filesystem::path& path, PolicyNet& net,
                     const std::map<std::string, std::string>& extra_meta);

struct CheckpointInfo {
  std::map<std::string, std::string> meta;
  NormStats norm;
  NetworkSettings settings;
  uint64_t schema_hash = 0;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Loads parameters into `net`; TrainError when the architecture or schema
// hash does not match.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, PolicyNet& net);

std::string network_settings_to_json(const NetworkSettings& s);
NetworkSettings network_settings_from_json(const std::string& text);

}  // namespace startrain::policy
