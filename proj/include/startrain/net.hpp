#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "startrain/config.hpp"
#include "startrain/dataset.hpp"
#include "startrain/schema.hpp"

namespace startrain::net {

// LayerNorm over the channel dimension of (N, C, H, W) maps.
struct ChannelLayerNormImpl : torch::nn::Module {
  explicit ChannelLayerNormImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight, bias;
};
TORCH_MODULE(ChannelLayerNorm);

// Feature-wise linear modulation: y = a(z) * x + b(z), applied per channel.
struct FiLMImpl : torch::nn::Module {
  FiLMImpl(int channels, int cond_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);
  torch::nn::Linear affine{nullptr};
  int channels;
};
TORCH_MODULE(FiLM);

// Residual 3x3 conv block with FiLM conditioning after each normalization.
struct FiLMBlockImpl : torch::nn::Module {
  FiLMBlockImpl(int channels, int cond_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  ChannelLayerNorm norm1{nullptr}, norm2{nullptr};
  FiLM film1{nullptr}, film2{nullptr};
};
TORCH_MODULE(FiLMBlock);

// Post-norm transformer encoder layer over (N, S, D) slot sets. Attention
// weights are plain dot products (no scaling) softmaxed over keys.
struct TransformerLayerImpl : torch::nn::Module {
  TransformerLayerImpl(int dim, int heads, int ff_mult);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor attention(const torch::Tensor& x);
  torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  int heads;
};
TORCH_MODULE(TransformerLayer);

// Variable-length list encoder: shared per-item MLP, max-pool over items,
// learned null vector when the list is empty.
struct SetEncoderImpl : torch::nn::Module {
  SetEncoderImpl(int item_width, int hidden, int out);
  // items (N, cap, item_width), mask (N, cap) in {0,1}
  torch::Tensor forward(const torch::Tensor& items, const torch::Tensor& mask);
  torch::nn::Linear l1{nullptr}, l2{nullptr};
  torch::Tensor null_token;
  int out_width;
};
TORCH_MODULE(SetEncoder);

struct ScalarMLPImpl : torch::nn::Module {
  ScalarMLPImpl(int in, int hidden, int out);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear l1{nullptr}, l2{nullptr};
};
TORCH_MODULE(ScalarMLP);

// Strided conv pyramid from (in_ch, size, size) down to (conv_ch3, 8, 8),
// each stage a stride-2 conv plus an average-pool bypass, followed by FiLM
// residual blocks at the bottom resolution.
struct SpatialColumnImpl : torch::nn::Module {
  SpatialColumnImpl(int in_ch, int size, const NetworkSettings& s, int cond_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);
  torch::nn::Conv2d input_proj{nullptr};
  std::vector<torch::nn::Conv2d> stage_convs;
  std::vector<torch::nn::Conv2d> stage_bypass;
  std::vector<FiLMBlock> blocks;
  int out_ch = 0;
  int stages = 0;
};
TORCH_MODULE(SpatialColumn);

// Deconv pyramid from (in_ch, 8, 8) up to a (size, size) logit map, with
// nearest-neighbor upsample bypasses mirroring the encoder's pools.
struct SpatialHeadImpl : torch::nn::Module {
  SpatialHeadImpl(int skip_ch, int size, const NetworkSettings& s, int cond_dim);
  // mix (N, mix_ch, 8, 8) from the core output, skip (N, skip_ch, 8, 8)
  torch::Tensor forward(const torch::Tensor& mix, const torch::Tensor& skip,
                        const torch::Tensor& z);
  torch::nn::Conv2d merge{nullptr};
  std::vector<FiLMBlock> blocks;
  std::vector<torch::nn::ConvTranspose2d> ups;
  std::vector<torch::nn::Conv2d> up_bypass;
  torch::nn::Conv2d out_conv{nullptr};
  int stages = 0;
};
TORCH_MODULE(SpatialHead);

// --- observation/action tensorization ---------------------------------

// Column layout constants for the unit item lists (one-hot expanded).
int item_input_width(const ItemListSpec& spec);

// All tensors hold B*T rows ("N"); recurrent code reshapes as needed.
struct BatchInput {
  int64_t batch = 0, time = 0;
  torch::Tensor screen_cat;   // (N, n_cat, H, W) long
  torch::Tensor screen_num;   // (N, n_num, H, W) float
  torch::Tensor minimap_cat;  // (N, m_cat, M, M) long
  torch::Tensor minimap_num;  // (N, m_num, M, M) float
  torch::Tensor player;       // (N, 11) normalized
  torch::Tensor game_loop;    // (N, 1) normalized
  torch::Tensor mmr;          // (N, buckets) one-hot
  torch::Tensor prev_action;  // (N, A) one-hot
  torch::Tensor prev_points;  // (N, 4) scaled, -1 -> 0 with presence flags? stored scaled
  torch::Tensor control_groups;  // (N, 10, 2) scaled
  torch::Tensor cg_hint;         // (N, 20) scaled
  torch::Tensor build_order;     // (N, 20) long
  torch::Tensor available;       // (N, A) float
  // item lists, one-hot expanded: (N, cap, w) + (N, cap) mask
  torch::Tensor cargo, cargo_mask;
  torch::Tensor multi, multi_mask;
  torch::Tensor queue, queue_mask;
  torch::Tensor single, single_mask;
};

// Target / taken composite actions as index tensors; -1 marks unused heads.
struct ActionBatch {
  int64_t batch = 0, time = 0;
  torch::Tensor action, delay, queued;          // (N) long
  torch::Tensor cg_id, cg_op, modifier;         // (N) long
  torch::Tensor screen1, screen2, minimap;      // (N) long, flattened row*size+col
};

// Counts how many numeric grid values exceeded their declared maxima.
struct ClampStats {
  int64_t clamped = 0;
  int64_t total = 0;
};

BatchInput make_batch_input(const std::vector<const FeatureObservation*>& obs, int64_t batch,
                            int64_t time, const ActionSchema& schema, const NormStats& norm,
                            torch::Dtype dtype, ClampStats* clamps = nullptr);

ActionBatch make_action_batch(const std::vector<const HierarchicalAction*>& actions,
                              int64_t batch, int64_t time, const ActionSchema& schema);

}  // namespace startrain::net
