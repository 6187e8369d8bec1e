#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "startrain/arena.hpp"
#include "startrain/config.hpp"
#include "startrain/dataset.hpp"
#include "startrain/policy.hpp"

namespace startrain::bc {

// Builds a (B, seq_len) teacher-forcing batch. Short sequences are
// right-padded with their last frame and action id -1, which the forced
// pass treats as ignore rows.
void assemble(const std::vector<const Sequence*>& seqs, int seq_len, const ActionSchema& schema,
              const NormStats& norm, torch::Dtype dtype, net::BatchInput* in,
              net::ActionBatch* targets);

// Per-step diagnostics accumulated across micro-batches.
struct StepStats {
  double frames = 0;
  double action_correct = 0;
  std::map<std::string, double> head_nll;   // summed over frames
  std::map<std::string, double> head_used;  // frames the head applied to
};

// One optimizer step over `seqs`, gradients accumulated over micro-batches
// of `micro` sequences; every micro-loss is normalized by the step's total
// frame count so any partition of the batch yields identical gradients.
// Returns the step's average per-frame loss.
double train_step(policy::PolicyNet& model, torch::optim::Optimizer& opt,
                  const std::vector<const Sequence*>& seqs, int micro, int seq_len,
                  torch::Dtype dtype, StepStats* stats = nullptr);

struct EvalMetrics {
  double loss = 0;
  double action_acc = 0;
  int64_t frames = 0;
};

// Loss/accuracy over a set of sequences with the training code path.
EvalMetrics evaluate_sequences(policy::PolicyNet& model, const DatasetReader& data,
                               const std::vector<int>& indices, int micro, int seq_len);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // selection winner; = final when unused
  std::vector<double> step_losses;        // per optimizer step
  EvalMetrics heldout;
  int steps = 0;
  int best_eval_wins = -1;  // finetune selection score
};

// Deterministic game-keyed train/held-out split.
void split_dataset(const DatasetReader& data, uint64_t seed, double heldout_frac,
                   std::vector<int>* train_idx, std::vector<int>* heldout_idx);

TrainResult train_bc(const RunConfig& cfg, const DatasetReader& data,
                     const std::filesystem::path& out_dir);

// Continues from `ckpt` at the large effective batch; every eval cadence
// plays games vs easy and medium and keeps the argmax-win checkpoint
// (ties resolve to the earlier candidate).
TrainResult finetune_bc(const RunConfig& cfg, const DatasetReader& data,
                        const std::filesystem::path& ckpt, const std::filesystem::path& out_dir);

}  // namespace startrain::bc
