#include "startrain/net.hpp"

#include <cmath>

namespace startrain::net {

using torch::Tensor;

ChannelLayerNormImpl::ChannelLayerNormImpl(int channels) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

Tensor ChannelLayerNormImpl::forward(const Tensor& x) {
  auto mean = x.mean(1, /*keepdim=*/true);
  auto var = (x - mean).pow(2).mean(1, /*keepdim=*/true);
  auto y = (x - mean) / torch::sqrt(var + 1e-5);
  return y * weight.view({1, -1, 1, 1}) + bias.view({1, -1, 1, 1});
}

FiLMImpl::FiLMImpl(int channels_in, int cond_dim) : channels(channels_in) {
  affine = register_module("affine", torch::nn::Linear(cond_dim, 2 * channels));
}

Tensor FiLMImpl::forward(const Tensor& x, const Tensor& z) {
  auto ab = affine->forward(z);  // (N, 2C)
  auto a = ab.narrow(1, 0, channels).unsqueeze(-1).unsqueeze(-1);
  auto b = ab.narrow(1, channels, channels).unsqueeze(-1).unsqueeze(-1);
  return a * x + b;
}

FiLMBlockImpl::FiLMBlockImpl(int channels, int cond_dim) {
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2 = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
  norm1 = register_module("norm1", ChannelLayerNorm(channels));
  norm2 = register_module("norm2", ChannelLayerNorm(channels));
  film1 = register_module("film1", FiLM(channels, cond_dim));
  film2 = register_module("film2", FiLM(channels, cond_dim));
}

Tensor FiLMBlockImpl::forward(const Tensor& x, const Tensor& z) {
  auto h = torch::elu(film1->forward(norm1->forward(conv1->forward(x)), z));
  h = torch::elu(film2->forward(norm2->forward(conv2->forward(h)), z));
  return x + h;
}

TransformerLayerImpl::TransformerLayerImpl(int dim, int heads_in, int ff_mult)
    : heads(heads_in) {
  TORCH_CHECK(dim % heads == 0, "transformer dim must divide heads");
  wq = register_module("wq", torch::nn::Linear(dim, dim));
  wk = register_module("wk", torch::nn::Linear(dim, dim));
  wv = register_module("wv", torch::nn::Linear(dim, dim));
  wo = register_module("wo", torch::nn::Linear(dim, dim));
  ff1 = register_module("ff1", torch::nn::Linear(dim, dim * ff_mult));
  ff2 = register_module("ff2", torch::nn::Linear(dim * ff_mult, dim));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

Tensor TransformerLayerImpl::attention(const Tensor& x) {
  const auto n = x.size(0), s = x.size(1), d = x.size(2);
  const auto hd = d / heads;
  auto split = [&](const Tensor& t) {
    return t.view({n, s, heads, hd}).permute({0, 2, 1, 3});  // (N, h, S, hd)
  };
  auto q = split(wq->forward(x));
  auto k = split(wk->forward(x));
  auto v = split(wv->forward(x));
  auto scores = torch::matmul(q, k.transpose(-2, -1));  // plain q.k, no scaling
  auto w = torch::softmax(scores, -1);
  auto out = torch::matmul(w, v).permute({0, 2, 1, 3}).reshape({n, s, d});
  return wo->forward(out);
}

Tensor TransformerLayerImpl::forward(const Tensor& x) {
  auto h = norm1->forward(x + attention(x));
  auto f = ff2->forward(torch::elu(ff1->forward(h)));
  return norm2->forward(h + f);
}

SetEncoderImpl::SetEncoderImpl(int item_width, int hidden, int out) : out_width(out) {
  l1 = register_module("l1", torch::nn::Linear(item_width, hidden));
  l2 = register_module("l2", torch::nn::Linear(hidden, out));
  null_token = register_parameter("null_token", torch::zeros({out}));
}

Tensor SetEncoderImpl::forward(const Tensor& items, const Tensor& mask) {
  auto h = l2->forward(torch::elu(l1->forward(items)));  // (N, cap, out)
  auto m = mask.unsqueeze(-1);
  // -inf on padded rows so max-pool ignores them
  auto neg = torch::full_like(h, -1e9);
  auto pooled = std::get<0>(torch::where(m > 0, h, neg).max(1));  // (N, out)
  auto any = (mask.sum(1, /*keepdim=*/true) > 0).to(h.dtype());
  return pooled * any + null_token.unsqueeze(0) * (1 - any);
}

ScalarMLPImpl::ScalarMLPImpl(int in, int hidden, int out) {
  l1 = register_module("l1", torch::nn::Linear(in, hidden));
  l2 = register_module("l2", torch::nn::Linear(hidden, out));
}

Tensor ScalarMLPImpl::forward(const Tensor& x) { return torch::elu(l2->forward(torch::elu(l1->forward(x)))); }

namespace {
int down_stages(int size) {
  TORCH_CHECK(size >= 8 && (size & (size - 1)) == 0, "spatial size must be a power of two >= 8");
  int s = 0;
  while (size > 8) {
    size /= 2;
    ++s;
  }
  return s;
}
}  // namespace

SpatialColumnImpl::SpatialColumnImpl(int in_ch, int size, const NetworkSettings& s, int cond_dim) {
  stages = down_stages(size);
  input_proj = register_module(
      "input_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, s.conv_ch1, 1)));
  const int widths[3] = {s.conv_ch1, s.conv_ch2, s.conv_ch3};
  int ch = s.conv_ch1;
  for (int i = 0; i < stages; ++i) {
    // later widths apply when fewer stages exist so the column still ends
    // at conv_ch3
    int out = widths[3 - stages + i];
    auto conv = torch::nn::Conv2d(
        torch::nn::Conv2dOptions(ch, out, 4).stride(2).padding(1));
    auto bypass = torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, out, 1));
    stage_convs.push_back(register_module("stage" + std::to_string(i), conv));
    stage_bypass.push_back(register_module("bypass" + std::to_string(i), bypass));
    ch = out;
  }
  out_ch = ch;
  for (int i = 0; i < s.film_blocks; ++i)
    blocks.push_back(register_module("film" + std::to_string(i), FiLMBlock(ch, cond_dim)));
}

Tensor SpatialColumnImpl::forward(const Tensor& x, const Tensor& z) {
  auto h = torch::elu(input_proj->forward(x));
  for (int i = 0; i < stages; ++i) {
    auto pooled = torch::avg_pool2d(h, 2);
    h = torch::elu(stage_convs[size_t(i)]->forward(h) + stage_bypass[size_t(i)]->forward(pooled));
  }
  for (auto& b : blocks) h = b->forward(h, z);
  return h;
}

SpatialHeadImpl::SpatialHeadImpl(int skip_ch, int size, const NetworkSettings& s, int cond_dim) {
  stages = down_stages(size);
  const int base = s.conv_ch3;
  merge = register_module(
      "merge",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(skip_ch + s.spatial_mix_channels, base, 1)));
  for (int i = 0; i < s.film_blocks; ++i)
    blocks.push_back(register_module("film" + std::to_string(i), FiLMBlock(base, cond_dim)));
  int ch = base;
  for (int i = 0; i < stages; ++i) {
    int out = std::max(8, ch / 2);
    auto up = torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(ch, out, 4).stride(2).padding(1));
    auto bypass = torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, out, 1));
    ups.push_back(register_module("up" + std::to_string(i), up));
    up_bypass.push_back(register_module("upb" + std::to_string(i), bypass));
    ch = out;
  }
  out_conv = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 1)));
}

Tensor SpatialHeadImpl::forward(const Tensor& mix, const Tensor& skip, const Tensor& z) {
  auto h = torch::elu(merge->forward(torch::cat({mix, skip}, 1)));
  for (auto& b : blocks) h = b->forward(h, z);
  for (int i = 0; i < stages; ++i) {
    auto nn_up = torch::upsample_nearest2d(h, {h.size(2) * 2, h.size(3) * 2});
    h = torch::elu(ups[size_t(i)]->forward(h) + up_bypass[size_t(i)]->forward(nn_up));
  }
  return out_conv->forward(h).flatten(1);  // (N, size*size)
}

// --- tensorization ------------------------------------------------------

int item_input_width(const ItemListSpec& spec) {
  int w = 0;
  for (const FeatureLayer& col : spec.columns)
    w += (col.kind == LayerKind::kCategorical && !col.binary()) ? col.cardinality : 1;
  return w;
}

namespace {

// Writes one item row into `dst` (already zeroed), expanding categorical
// columns to one-hot and scaling numeric columns by their declared maxima.
void expand_item_row(float* dst, const int32_t* row, const ItemListSpec& spec) {
  int off = 0;
  for (size_t c = 0; c < spec.columns.size(); ++c) {
    const FeatureLayer& col = spec.columns[c];
    int32_t v = row[c];
    if (col.kind == LayerKind::kCategorical && !col.binary()) {
      if (v >= 0 && v < col.cardinality) dst[off + v] = 1.f;
      off += col.cardinality;
    } else if (col.binary()) {
      dst[off++] = v ? 1.f : 0.f;
    } else {
      dst[off++] = float(std::min<double>(double(v), col.max_value) / col.max_value);
    }
  }
}

}  // namespace

BatchInput make_batch_input(const std::vector<const FeatureObservation*>& obs, int64_t batch,
                            int64_t time, const ActionSchema& schema, const NormStats& norm,
                            torch::Dtype dtype, ClampStats* clamps) {
  const FeatureSpec& fs = schema.features;
  const int64_t n = batch * time;
  TORCH_CHECK(int64_t(obs.size()) == n, "observation count mismatch");
  const int H = fs.screen_size, M = fs.minimap_size;
  const int A = schema.num_actions();

  std::vector<int> screen_cat_idx, screen_num_idx, mini_cat_idx, mini_num_idx;
  for (size_t i = 0; i < fs.screen.size(); ++i) {
    const FeatureLayer& l = fs.screen[i];
    (l.kind == LayerKind::kCategorical && !l.binary() ? screen_cat_idx : screen_num_idx)
        .push_back(int(i));
  }
  for (size_t i = 0; i < fs.minimap.size(); ++i) {
    const FeatureLayer& l = fs.minimap[i];
    (l.kind == LayerKind::kCategorical && !l.binary() ? mini_cat_idx : mini_num_idx)
        .push_back(int(i));
  }

  BatchInput b;
  b.batch = batch;
  b.time = time;
  auto fopts = torch::TensorOptions().dtype(torch::kFloat32);
  auto lopts = torch::TensorOptions().dtype(torch::kInt64);
  b.screen_cat = torch::zeros({n, int64_t(screen_cat_idx.size()), H, H}, lopts);
  b.screen_num = torch::zeros({n, int64_t(screen_num_idx.size()), H, H}, fopts);
  b.minimap_cat = torch::zeros({n, int64_t(mini_cat_idx.size()), M, M}, lopts);
  b.minimap_num = torch::zeros({n, int64_t(mini_num_idx.size()), M, M}, fopts);
  b.player = torch::zeros({n, kNumPlayerScalars}, fopts);
  b.game_loop = torch::zeros({n, 1}, fopts);
  b.mmr = torch::zeros({n, kMmrBuckets}, fopts);
  b.prev_action = torch::zeros({n, A}, fopts);
  b.prev_points = torch::zeros({n, 4}, fopts);
  b.control_groups = torch::zeros({n, kNumControlGroups, 2}, fopts);
  b.cg_hint = torch::zeros({n, kNumControlGroups * 2}, fopts);
  b.build_order = torch::zeros({n, kBuildOrderLen}, lopts);
  b.available = torch::zeros({n, A}, fopts);

  TORCH_CHECK(fs.lists.size() == 4, "expected 4 item lists");
  const ItemListSpec* specs[4];
  for (int i = 0; i < 4; ++i) specs[i] = &fs.lists[size_t(i)];
  auto make_items = [&](const ItemListSpec& spec) {
    return torch::zeros({n, kItemListCap, item_input_width(spec)}, fopts);
  };
  b.cargo = make_items(*specs[0]);
  b.multi = make_items(*specs[1]);
  b.queue = make_items(*specs[2]);
  b.single = make_items(*specs[3]);
  b.cargo_mask = torch::zeros({n, kItemListCap}, fopts);
  b.multi_mask = torch::zeros({n, kItemListCap}, fopts);
  b.queue_mask = torch::zeros({n, kItemListCap}, fopts);
  b.single_mask = torch::zeros({n, kItemListCap}, fopts);

  auto sc_cat = b.screen_cat.accessor<int64_t, 4>();
  auto sc_num = b.screen_num.accessor<float, 4>();
  auto mm_cat = b.minimap_cat.accessor<int64_t, 4>();
  auto mm_num = b.minimap_num.accessor<float, 4>();

  for (int64_t i = 0; i < n; ++i) {
    const FeatureObservation& o = *obs[size_t(i)];
    TORCH_CHECK(int64_t(o.screen.size()) == int64_t(fs.screen.size()) * H * H,
                "screen size mismatch");
    // grids
    for (size_t k = 0; k < screen_cat_idx.size(); ++k) {
      const int32_t* src = o.screen.data() + size_t(screen_cat_idx[k]) * H * H;
      for (int p = 0; p < H * H; ++p) sc_cat[i][int64_t(k)][p / H][p % H] = src[p];
    }
    for (size_t k = 0; k < screen_num_idx.size(); ++k) {
      const FeatureLayer& l = fs.screen[size_t(screen_num_idx[k])];
      const int32_t* src = o.screen.data() + size_t(screen_num_idx[k]) * H * H;
      const double mx = l.binary() ? 1.0 : l.max_value;
      for (int p = 0; p < H * H; ++p) {
        double v = src[p];
        if (clamps) {
          ++clamps->total;
          if (v > mx || v < 0) ++clamps->clamped;
        }
        sc_num[i][int64_t(k)][p / H][p % H] = float(std::clamp(v, 0.0, mx) / mx);
      }
    }
    for (size_t k = 0; k < mini_cat_idx.size(); ++k) {
      const int32_t* src = o.minimap.data() + size_t(mini_cat_idx[k]) * M * M;
      for (int p = 0; p < M * M; ++p) mm_cat[i][int64_t(k)][p / M][p % M] = src[p];
    }
    for (size_t k = 0; k < mini_num_idx.size(); ++k) {
      const FeatureLayer& l = fs.minimap[size_t(mini_num_idx[k])];
      const int32_t* src = o.minimap.data() + size_t(mini_num_idx[k]) * M * M;
      const double mx = l.binary() ? 1.0 : l.max_value;
      for (int p = 0; p < M * M; ++p) {
        double v = src[p];
        if (clamps) {
          ++clamps->total;
          if (v > mx || v < 0) ++clamps->clamped;
        }
        mm_num[i][int64_t(k)][p / M][p % M] = float(std::clamp(v, 0.0, mx) / mx);
      }
    }
    // scalars
    for (int k = 0; k < kNumPlayerScalars; ++k) {
      double std_k = norm.player_std[size_t(k)] != 0 ? norm.player_std[size_t(k)] : 1.0;
      b.player[i][k] = float((o.player[size_t(k)] - norm.player_mean[size_t(k)]) / std_k);
    }
    double gls = norm.game_loop_std != 0 ? norm.game_loop_std : 1.0;
    b.game_loop[i][0] = float((o.game_loop - norm.game_loop_mean) / gls);
    if (o.mmr_bucket >= 0 && o.mmr_bucket < kMmrBuckets) b.mmr[i][o.mmr_bucket] = 1.f;
    if (o.prev_action >= 0 && o.prev_action < A) b.prev_action[i][o.prev_action] = 1.f;
    b.prev_points[i][0] = o.prev_screen_point.r >= 0 ? float(o.prev_screen_point.r) / H : -1.f;
    b.prev_points[i][1] = o.prev_screen_point.c >= 0 ? float(o.prev_screen_point.c) / H : -1.f;
    b.prev_points[i][2] = o.prev_minimap_point.r >= 0 ? float(o.prev_minimap_point.r) / M : -1.f;
    b.prev_points[i][3] = o.prev_minimap_point.c >= 0 ? float(o.prev_minimap_point.c) / M : -1.f;
    for (int g = 0; g < kNumControlGroups; ++g) {
      b.control_groups[i][g][0] = float(o.control_groups[size_t(g * 2)]) / 6.f;
      b.control_groups[i][g][1] = float(o.control_groups[size_t(g * 2 + 1)]) / float(kItemListCap);
      b.cg_hint[i][g * 2] = float(o.control_groups_hint[size_t(g * 2)]) / 6.f;
      b.cg_hint[i][g * 2 + 1] =
          float(o.control_groups_hint[size_t(g * 2 + 1)]) / float(kItemListCap);
    }
    for (int k = 0; k < kBuildOrderLen; ++k) b.build_order[i][k] = o.build_order[size_t(k)];
    TORCH_CHECK(int(o.available_actions.size()) == A, "available mask size mismatch");
    for (int k = 0; k < A; ++k) b.available[i][k] = o.available_actions[size_t(k)] ? 1.f : 0.f;

    auto fill_list = [&](const ItemList& list, const ItemListSpec& spec, Tensor& items,
                         Tensor& mask) {
      const int w = spec.width();
      const int in_w = item_input_width(spec);
      const int stored = std::min(list.stored_rows(w), int(kItemListCap));
      auto acc = items.accessor<float, 3>();
      auto macc = mask.accessor<float, 2>();
      for (int r = 0; r < stored; ++r) {
        expand_item_row(&acc[i][r][0], list.rows.data() + size_t(r) * size_t(w), spec);
        macc[i][r] = 1.f;
      }
      (void)in_w;
    };
    fill_list(o.cargo, *specs[0], b.cargo, b.cargo_mask);
    fill_list(o.multi_select, *specs[1], b.multi, b.multi_mask);
    fill_list(o.production_queue, *specs[2], b.queue, b.queue_mask);
    fill_list(o.single_select, *specs[3], b.single, b.single_mask);
  }

  if (dtype != torch::kFloat32) {
    for (Tensor* t : {&b.screen_num, &b.minimap_num, &b.player, &b.game_loop, &b.mmr,
                      &b.prev_action, &b.prev_points, &b.control_groups, &b.cg_hint, &b.available,
                      &b.cargo, &b.cargo_mask, &b.multi, &b.multi_mask, &b.queue, &b.queue_mask,
                      &b.single, &b.single_mask})
      *t = t->to(dtype);
  }
  return b;
}

ActionBatch make_action_batch(const std::vector<const HierarchicalAction*>& actions,
                              int64_t batch, int64_t time, const ActionSchema& schema) {
  const int64_t n = batch * time;
  TORCH_CHECK(int64_t(actions.size()) == n, "action count mismatch");
  ActionBatch ab;
  ab.batch = batch;
  ab.time = time;
  auto lopts = torch::TensorOptions().dtype(torch::kInt64);
  auto make = [&] { return torch::full({n}, -1, lopts); };
  ab.action = make();
  ab.delay = make();
  ab.queued = make();
  ab.cg_id = make();
  ab.cg_op = make();
  ab.modifier = make();
  ab.screen1 = make();
  ab.screen2 = make();
  ab.minimap = make();
  const int H = schema.features.screen_size, M = schema.features.minimap_size;
  for (int64_t i = 0; i < n; ++i) {
    const HierarchicalAction& a = *actions[size_t(i)];
    ab.action[i] = a.action_id;
    ab.delay[i] = a.delay_bucket;
    if (a.queued) ab.queued[i] = *a.queued;
    if (a.control_group_id) ab.cg_id[i] = *a.control_group_id;
    if (a.control_group_op) ab.cg_op[i] = *a.control_group_op;
    if (a.select_modifier) ab.modifier[i] = *a.select_modifier;
    if (a.screen1) ab.screen1[i] = int64_t(a.screen1->r) * H + a.screen1->c;
    if (a.screen2) ab.screen2[i] = int64_t(a.screen2->r) * H + a.screen2->c;
    if (a.minimap) ab.minimap[i] = int64_t(a.minimap->r) * M + a.minimap->c;
  }
  return ab;
}

}  // namespace startrain::net
