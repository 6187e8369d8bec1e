#include "startrain/policy.hpp"

#include <limits>

#include <json.hpp>

#include "startrain/version.hpp"

namespace startrain::policy {

using json = nlohmann::json;
using torch::Tensor;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const char* kHeadNames[] = {"action", "delay", "queued",  "cg_id",
                            "cg_op",  "modifier", "screen1", "screen2", "minimap"};
}  // namespace

RecurrentState RecurrentState::detached() const {
  return {pixel_h.detach(), pixel_c.detach(), core_h.detach(), core_c.detach()};
}

RecurrentState RecurrentState::clone() const {
  return {pixel_h.clone(), pixel_c.clone(), core_h.clone(), core_c.clone()};
}

RecurrentState RecurrentState::index(const Tensor& rows) const {
  return {pixel_h.index_select(0, rows), pixel_c.index_select(0, rows),
          core_h.index_select(1, rows), core_c.index_select(1, rows)};
}

PolicyNetImpl::PolicyNetImpl(const ActionSchema& schema, const NetworkSettings& settings,
                             const NormStats& norm)
    : schema_(schema), settings_(settings), norm_(norm) {
  const FeatureSpec& fs = schema_.features;
  const int A = schema_.num_actions();
  const int E = settings_.embed_width;
  const int so = settings_.scalar_out;
  const int sh = settings_.scalar_hidden;
  const int hh = settings_.head_hidden;
  slots_ = 2 * 8 * 8;

  // grid inputs: non-binary categorical layers get embeddings, the rest
  // pass through as scaled numeric channels
  int screen_in = 0, minimap_in = 0;
  int si = 0, mi = 0;
  for (const FeatureLayer& l : fs.screen) {
    if (l.kind == LayerKind::kCategorical && !l.binary()) {
      screen_embeds_.push_back(register_module(
          "screen_embed" + std::to_string(si++),
          torch::nn::Embedding(torch::nn::EmbeddingOptions(l.cardinality, E))));
      screen_in += E;
    } else {
      screen_in += 1;
    }
  }
  for (const FeatureLayer& l : fs.minimap) {
    if (l.kind == LayerKind::kCategorical && !l.binary()) {
      minimap_embeds_.push_back(register_module(
          "minimap_embed" + std::to_string(mi++),
          torch::nn::Embedding(torch::nn::EmbeddingOptions(l.cardinality, E))));
      minimap_in += E;
    } else {
      minimap_in += 1;
    }
  }

  // scalar encoders
  enc_player_ = register_module("enc_player", net::ScalarMLP(kNumPlayerScalars, sh, so));
  enc_game_loop_ = register_module("enc_game_loop", net::ScalarMLP(1, sh, so));
  enc_mmr_ = register_module("enc_mmr", net::ScalarMLP(kMmrBuckets, sh, so));
  enc_prev_action_ = register_module("enc_prev_action", net::ScalarMLP(A, sh, so));
  enc_prev_points_ = register_module("enc_prev_points", net::ScalarMLP(4, sh, so));
  enc_cgroups_ = register_module("enc_cgroups", net::ScalarMLP(kNumControlGroups * 2, sh, so));
  enc_cg_hint_ = register_module("enc_cg_hint", net::ScalarMLP(kNumControlGroups * 2, sh, so));
  build_order_embed_ = register_module(
      "build_order_embed",
      torch::nn::Embedding(torch::nn::EmbeddingOptions(fs.num_unit_types, E)));
  enc_build_order_ = register_module("enc_build_order", net::ScalarMLP(kBuildOrderLen * E, sh, so));
  enc_available_ = register_module("enc_available", net::ScalarMLP(A, sh, so));
  TORCH_CHECK(fs.lists.size() == 4, "expected 4 item lists");
  enc_cargo_ = register_module(
      "enc_cargo", net::SetEncoder(net::item_input_width(fs.lists[0]), sh, so));
  enc_multi_ = register_module(
      "enc_multi", net::SetEncoder(net::item_input_width(fs.lists[1]), sh, so));
  enc_queue_ = register_module(
      "enc_queue", net::SetEncoder(net::item_input_width(fs.lists[2]), sh, so));
  enc_single_ = register_module(
      "enc_single", net::SetEncoder(net::item_input_width(fs.lists[3]), sh, so));

  const int n_sources = 13;
  const int ctx = n_sources * so;
  zcond_proj_ = register_module("zcond_proj", torch::nn::Linear(ctx, settings_.film_cond_hidden));

  screen_col_ = register_module(
      "screen_col",
      net::SpatialColumn(screen_in, fs.screen_size, settings_, settings_.film_cond_hidden));
  minimap_col_ = register_module(
      "minimap_col",
      net::SpatialColumn(minimap_in, fs.minimap_size, settings_, settings_.film_cond_hidden));
  const int c3 = settings_.conv_ch3;
  const int pw = settings_.pixel_lstm_width;
  tf1_ = register_module(
      "tf1", net::TransformerLayer(c3, settings_.transformer_heads, settings_.transformer_ff_mult));
  pixel_lstm_ = register_module("pixel_lstm",
                                torch::nn::LSTMCell(torch::nn::LSTMCellOptions(c3, pw)));
  tf2_ = register_module(
      "tf2", net::TransformerLayer(pw, settings_.transformer_heads, settings_.transformer_ff_mult));
  tf3_ = register_module(
      "tf3", net::TransformerLayer(pw, settings_.transformer_heads, settings_.transformer_ff_mult));
  summary_proj_ =
      register_module("summary_proj", torch::nn::Linear(2 * pw, settings_.relational_summary_width));
  core_in_ = register_module(
      "core_in", torch::nn::Linear(settings_.relational_summary_width + ctx, settings_.core_width));
  core_ = register_module(
      "core", torch::nn::LSTM(
                  torch::nn::LSTMOptions(settings_.core_width, settings_.core_width).num_layers(2)));

  cg_row1_ = register_module("cg_row1", torch::nn::Linear(2, settings_.cg_row_width));
  cg_row2_ = register_module("cg_row2",
                             torch::nn::Linear(settings_.cg_row_width, settings_.cg_key_width));

  // heads
  ar_proj_ = register_module("ar_proj", torch::nn::Linear(settings_.core_width, hh));
  gate_proj_ = register_module("gate_proj", torch::nn::Linear(4 * so, hh));
  for (int i = 0; i < 4; ++i)
    action_res_a_.push_back(
        register_module("action_res" + std::to_string(i), torch::nn::Linear(hh, hh)));
  action_out_ = register_module("action_out", torch::nn::Linear(hh, A));
  action_embed_ =
      register_module("action_embed", torch::nn::Embedding(torch::nn::EmbeddingOptions(A, hh)));
  const int D = schema_.delay.count();
  delay_embed_ =
      register_module("delay_embed", torch::nn::Embedding(torch::nn::EmbeddingOptions(D, hh)));
  queued_embed_ =
      register_module("queued_embed", torch::nn::Embedding(torch::nn::EmbeddingOptions(2, hh)));
  cg_embed_ = register_module(
      "cg_embed", torch::nn::Embedding(torch::nn::EmbeddingOptions(kNumControlGroups, hh)));
  delay_h_ = register_module("delay_h", torch::nn::Linear(hh, hh));
  delay_out_ = register_module("delay_out", torch::nn::Linear(hh, D));
  queued_h_ = register_module("queued_h", torch::nn::Linear(hh, hh));
  queued_out_ = register_module("queued_out", torch::nn::Linear(hh, 2));
  cg_query_ = register_module("cg_query", torch::nn::Linear(hh, settings_.cg_key_width));
  cg_op_h_ = register_module("cg_op_h", torch::nn::Linear(hh, hh));
  cg_op_out_ = register_module("cg_op_out", torch::nn::Linear(hh, kNumControlGroupOps));
  modifier_h_ = register_module("modifier_h", torch::nn::Linear(hh, hh));
  modifier_out_ = register_module("modifier_out", torch::nn::Linear(hh, kNumSelectModifiers));
  mix_proj_ = register_module(
      "mix_proj", torch::nn::Linear(settings_.core_width, 8 * 8 * settings_.spatial_mix_channels));
  head_screen1_ =
      register_module("head_screen1", net::SpatialHead(pw, fs.screen_size, settings_, hh));
  head_screen2_ =
      register_module("head_screen2", net::SpatialHead(pw, fs.screen_size, settings_, hh));
  head_minimap_ =
      register_module("head_minimap", net::SpatialHead(pw, fs.minimap_size, settings_, hh));
  for (int k = 0; k < RewardBreakdown::kNumComponents; ++k) {
    value_h_.push_back(register_module("value_h" + std::to_string(k),
                                       torch::nn::Linear(settings_.core_width, hh)));
    value_out_.push_back(
        register_module("value_out" + std::to_string(k), torch::nn::Linear(hh, 1)));
  }

  uses_queued_.resize(size_t(A));
  uses_screen1_.resize(size_t(A));
  uses_screen2_.resize(size_t(A));
  uses_minimap_.resize(size_t(A));
  uses_cg_id_.resize(size_t(A));
  uses_cg_op_.resize(size_t(A));
  uses_modifier_.resize(size_t(A));
  for (int a = 0; a < A; ++a) {
    const ActionDef& def = schema_.action(a);
    uses_queued_[size_t(a)] = def.needs(Param::kQueued);
    uses_screen1_[size_t(a)] = def.needs(Param::kScreen1);
    uses_screen2_[size_t(a)] = def.needs(Param::kScreen2);
    uses_minimap_[size_t(a)] = def.needs(Param::kMinimap);
    uses_cg_id_[size_t(a)] = def.needs(Param::kControlGroupId);
    uses_cg_op_[size_t(a)] = def.needs(Param::kControlGroupOp);
    uses_modifier_[size_t(a)] = def.needs(Param::kSelectModifier);
  }
}

RecurrentState PolicyNetImpl::initial_state(int64_t batch) const {
  auto opts = ar_proj_->weight.options();
  return {torch::zeros({batch, slots_, settings_.pixel_lstm_width}, opts),
          torch::zeros({batch, slots_, settings_.pixel_lstm_width}, opts),
          torch::zeros({2, batch, settings_.core_width}, opts),
          torch::zeros({2, batch, settings_.core_width}, opts)};
}

Tensor PolicyNetImpl::scalar_context(const BatchInput& in, Tensor* gating) {
  auto e_player = enc_player_->forward(in.player);
  auto e_loop = enc_game_loop_->forward(in.game_loop);
  auto e_mmr = enc_mmr_->forward(in.mmr);
  auto e_prev = enc_prev_action_->forward(in.prev_action);
  auto e_pts = enc_prev_points_->forward(in.prev_points);
  auto e_cg = enc_cgroups_->forward(in.control_groups.flatten(1));
  auto e_hint = enc_cg_hint_->forward(in.cg_hint);
  auto bo = build_order_embed_->forward(in.build_order).flatten(1);
  auto e_bo = enc_build_order_->forward(bo);
  auto e_avail = enc_available_->forward(in.available);
  auto e_cargo = enc_cargo_->forward(in.cargo, in.cargo_mask);
  auto e_multi = enc_multi_->forward(in.multi, in.multi_mask);
  auto e_queue = enc_queue_->forward(in.queue, in.queue_mask);
  auto e_single = enc_single_->forward(in.single, in.single_mask);
  if (gating) *gating = torch::cat({e_multi, e_single, e_avail, e_bo}, 1);
  return torch::cat({e_player, e_loop, e_mmr, e_prev, e_pts, e_cg, e_hint, e_bo, e_avail, e_cargo,
                     e_multi, e_queue, e_single},
                    1);
}

PolicyNetImpl::TrunkOut PolicyNetImpl::trunk(const BatchInput& in, const RecurrentState& state) {
  const int64_t B = in.batch, T = in.time, N = B * T;
  const int H = schema_.features.screen_size, M = schema_.features.minimap_size;

  auto assemble_grid = [](const Tensor& cat_layers, const Tensor& num_layers,
                          std::vector<torch::nn::Embedding>& embeds) {
    std::vector<Tensor> parts;
    for (size_t k = 0; k < embeds.size(); ++k) {
      auto e = embeds[k]->forward(cat_layers.select(1, int64_t(k)));  // (N, H, W, E)
      parts.push_back(e.permute({0, 3, 1, 2}));
    }
    parts.push_back(num_layers);
    return torch::cat(parts, 1);
  };
  auto screen_in = assemble_grid(in.screen_cat, in.screen_num, screen_embeds_);
  auto minimap_in = assemble_grid(in.minimap_cat, in.minimap_num, minimap_embeds_);
  TORCH_CHECK(screen_in.size(2) == H && minimap_in.size(2) == M, "grid size mismatch");

  TrunkOut out;
  auto context = scalar_context(in, &out.gating);
  out.zcond = torch::elu(zcond_proj_->forward(context));

  auto s_feat = screen_col_->forward(screen_in, out.zcond);    // (N, c3, 8, 8)
  auto m_feat = minimap_col_->forward(minimap_in, out.zcond);  // (N, c3, 8, 8)
  auto slots = torch::cat({s_feat.flatten(2).transpose(1, 2), m_feat.flatten(2).transpose(1, 2)},
                          1);  // (N, S, c3)
  slots = tf1_->forward(slots);

  const int64_t S = slots.size(1);
  const int64_t pw = settings_.pixel_lstm_width;
  TORCH_CHECK(S == slots_, "slot count mismatch");
  auto seq = slots.view({B, T, S, slots.size(2)});
  auto ph = state.pixel_h.reshape({B * S, pw});
  auto pc = state.pixel_c.reshape({B * S, pw});
  std::vector<Tensor> pix_steps;
  for (int64_t t = 0; t < T; ++t) {
    auto x_t = seq.select(1, t).reshape({B * S, slots.size(2)});
    auto hc = pixel_lstm_->forward(x_t, std::make_tuple(ph, pc));
    ph = std::get<0>(hc);
    pc = std::get<1>(hc);
    pix_steps.push_back(ph.view({B, S, pw}));
  }
  auto pix = torch::stack(pix_steps, 1).reshape({N, S, pw});
  out.state.pixel_h = ph.view({B, S, pw});
  out.state.pixel_c = pc.view({B, S, pw});

  auto h = tf3_->forward(tf2_->forward(pix));  // (N, S, pw)
  const int64_t half = S / 2;
  out.screen_skip = h.narrow(1, 0, half).transpose(1, 2).reshape({N, pw, 8, 8});
  out.minimap_skip = h.narrow(1, half, half).transpose(1, 2).reshape({N, pw, 8, 8});
  auto summary = torch::cat({h.mean(1), std::get<0>(h.max(1))}, 1);
  summary = torch::elu(summary_proj_->forward(summary));

  auto core_x = torch::elu(core_in_->forward(torch::cat({summary, context}, 1)));
  auto core_seq = core_x.view({B, T, settings_.core_width}).transpose(0, 1);  // (T, B, C)
  auto core_out = core_->forward(core_seq, std::make_tuple(state.core_h, state.core_c));
  out.lstm_out = std::get<0>(core_out).transpose(0, 1).reshape({N, settings_.core_width});
  out.state.core_h = std::get<0>(std::get<1>(core_out));
  out.state.core_c = std::get<1>(std::get<1>(core_out));

  out.cg_keys = cg_row2_->forward(torch::elu(cg_row1_->forward(in.control_groups)));
  return out;
}

Tensor PolicyNetImpl::action_logits(const Tensor& ar0, const Tensor& gating,
                                    const Tensor& available) {
  auto gate = torch::sigmoid(gate_proj_->forward(gating));
  auto h = ar0;
  for (auto& lin : action_res_a_) h = h + torch::elu(lin->forward(h));
  h = h * gate;
  auto logits = action_out_->forward(h);
  // unavailable actions get probability exactly zero
  return logits.masked_fill(available <= 0, kNegInf);
}

namespace {

struct HeadOut {
  Tensor nll, correct, entropy;  // all (N)
};

// Per-row cross entropy / accuracy / entropy, zeroed where `used` is 0.
// Rows whose target lands on a -inf logit must be masked out by `used`.
HeadOut eval_head(const Tensor& logits, const Tensor& target, const Tensor& used,
                  Tensor* dist_out) {
  auto lp = torch::log_softmax(logits, 1);
  const int64_t K = logits.size(1);
  auto safe_t = target.clamp(0, K - 1);
  auto g = lp.gather(1, safe_t.unsqueeze(1)).squeeze(1);
  auto zeros = torch::zeros_like(g);
  HeadOut o;
  o.nll = -torch::where(used > 0, g, zeros);
  o.correct = (logits.argmax(1) == target).to(lp.dtype()) * used;
  auto p = lp.exp();
  auto plogp = torch::where(p > 0, p * lp, torch::zeros_like(p));
  o.entropy = -plogp.sum(1) * used;
  if (dist_out) *dist_out = lp;
  return o;
}

Tensor scatter_rows(const Tensor& sub, const Tensor& rows, int64_t n) {
  std::vector<int64_t> shape(sub.sizes().begin(), sub.sizes().end());
  shape[0] = n;
  auto full = torch::zeros(shape, sub.options());
  if (rows.numel() > 0) full.index_copy_(0, rows, sub);
  return full;
}

}  // namespace

ForcedResult PolicyNetImpl::forward_forced(const BatchInput& in, const ActionBatch& targets,
                                           const RecurrentState& state, bool want_dists) {
  auto t = trunk(in, state);
  const int64_t N = in.batch * in.time;
  auto fdtype = t.lstm_out.dtype();
  auto valid = (targets.action >= 0).to(fdtype);  // padding frames carry -1

  ForcedResult res;
  res.state = t.state;
  if (want_dists) res.dists.emplace();
  auto dist_slot = [&](const char* name) -> Tensor* {
    return want_dists ? &res.dists->log_probs[name] : nullptr;
  };
  std::map<std::string, Tensor> head_ent;
  auto note = [&](const char* name, const HeadOut& h, const Tensor& used) {
    res.head_nll[name] = h.nll;
    res.head_used[name] = used;
    res.head_correct[name] = h.correct;
    head_ent[name] = h.entropy;
    if (want_dists) res.dists->used[name] = used;
  };

  auto ar0 = torch::elu(ar_proj_->forward(t.lstm_out));
  const int A = schema_.num_actions();

  auto alogits = action_logits(ar0, t.gating, in.available);
  auto h_action = eval_head(alogits, targets.action, valid, dist_slot("action"));
  note("action", h_action, valid);

  auto ar = ar0 + action_embed_->forward(targets.action.clamp(0, A - 1)) * valid.unsqueeze(1);
  auto dlogits = delay_out_->forward(torch::elu(delay_h_->forward(ar)));
  auto h_delay = eval_head(dlogits, targets.delay, valid, dist_slot("delay"));
  note("delay", h_delay, valid);

  ar = ar + delay_embed_->forward(targets.delay.clamp(0, schema_.delay.count() - 1)) *
                valid.unsqueeze(1);
  auto used_q = (targets.queued >= 0).to(fdtype) * valid;
  auto qlogits = queued_out_->forward(torch::elu(queued_h_->forward(ar)));
  auto h_queued = eval_head(qlogits, targets.queued, used_q, dist_slot("queued"));
  note("queued", h_queued, used_q);

  ar = ar + queued_embed_->forward(targets.queued.clamp(0, 1)) * used_q.unsqueeze(1);

  auto used_cg = (targets.cg_id >= 0).to(fdtype) * valid;
  auto cg_logits =
      torch::bmm(t.cg_keys, cg_query_->forward(ar).unsqueeze(2)).squeeze(2);  // (N, groups)
  auto h_cgid = eval_head(cg_logits, targets.cg_id, used_cg, dist_slot("cg_id"));
  note("cg_id", h_cgid, used_cg);

  auto used_op = (targets.cg_op >= 0).to(fdtype) * valid;
  auto ar_cg = ar + cg_embed_->forward(targets.cg_id.clamp(0, kNumControlGroups - 1)) *
                        used_cg.unsqueeze(1);
  auto op_logits = cg_op_out_->forward(torch::elu(cg_op_h_->forward(ar_cg)));
  auto h_cgop = eval_head(op_logits, targets.cg_op, used_op, dist_slot("cg_op"));
  note("cg_op", h_cgop, used_op);

  auto used_mod = (targets.modifier >= 0).to(fdtype) * valid;
  auto mod_logits = modifier_out_->forward(torch::elu(modifier_h_->forward(ar)));
  auto h_mod = eval_head(mod_logits, targets.modifier, used_mod, dist_slot("modifier"));
  note("modifier", h_mod, used_mod);

  // spatial heads run only on the frames that used them
  auto mix = mix_proj_->forward(t.lstm_out)
                 .view({N, settings_.spatial_mix_channels, 8, 8});
  auto spatial = [&](const char* name, net::SpatialHead& head, const Tensor& skip,
                     const Tensor& target, int64_t dim) {
    auto used = (target >= 0).to(fdtype) * valid;
    auto rows = ((target >= 0) & (targets.action >= 0)).nonzero().squeeze(1);
    HeadOut out;
    if (rows.numel() == 0) {
      out.nll = torch::zeros({N}, t.lstm_out.options());
      out.correct = torch::zeros({N}, t.lstm_out.options());
      out.entropy = torch::zeros({N}, t.lstm_out.options());
      if (want_dists)
        res.dists->log_probs[name] = torch::zeros({N, dim}, t.lstm_out.options());
    } else {
      auto logits = head->forward(mix.index_select(0, rows), skip.index_select(0, rows),
                                  ar.index_select(0, rows));
      Tensor lp_sub;
      auto ones = torch::ones({rows.numel()}, t.lstm_out.options());
      auto sub = eval_head(logits, target.index_select(0, rows), ones,
                           want_dists ? &lp_sub : nullptr);
      out.nll = scatter_rows(sub.nll, rows, N);
      out.correct = scatter_rows(sub.correct, rows, N);
      out.entropy = scatter_rows(sub.entropy, rows, N);
      if (want_dists) res.dists->log_probs[name] = scatter_rows(lp_sub, rows, N);
    }
    note(name, out, used);
  };
  spatial("screen1", head_screen1_, t.screen_skip, targets.screen1,
          int64_t(schema_.features.screen_size) * schema_.features.screen_size);
  spatial("screen2", head_screen2_, t.screen_skip, targets.screen2,
          int64_t(schema_.features.screen_size) * schema_.features.screen_size);
  spatial("minimap", head_minimap_, t.minimap_skip, targets.minimap,
          int64_t(schema_.features.minimap_size) * schema_.features.minimap_size);

  Tensor total_nll = torch::zeros({N}, t.lstm_out.options());
  Tensor total_ent = torch::zeros({N}, t.lstm_out.options());
  for (const char* name : kHeadNames) {
    total_nll = total_nll + res.head_nll.at(name);
    total_ent = total_ent + head_ent.at(name);
  }
  res.log_prob = -total_nll;
  res.entropy = total_ent;

  std::vector<Tensor> vals;
  for (int k = 0; k < RewardBreakdown::kNumComponents; ++k)
    vals.push_back(value_out_[size_t(k)]->forward(torch::elu(value_h_[size_t(k)]->forward(t.lstm_out))));
  res.values = torch::cat(vals, 1);
  return res;
}

SampleResult PolicyNetImpl::sample(const BatchInput& in, const RecurrentState& state,
                                   RngStream* rng, bool argmax, bool want_dists) {
  TORCH_CHECK(in.time == 1, "sample() takes single-step batches");
  TORCH_CHECK(argmax || rng != nullptr, "sampling needs an rng");
  const int64_t B = in.batch;
  auto t = trunk(in, state);
  auto opts = t.lstm_out.options();

  SampleResult res;
  res.state = t.state;
  if (want_dists) res.dists.emplace();
  res.log_prob = torch::zeros({B}, opts);

  // Draws are consumed head-major (action, delay, queued, cg_id, cg_op,
  // modifier, screen1, screen2, minimap), ascending row order within each
  // head, so a fixed batch layout replays bit-identically.
  auto pick_rows = [&](const Tensor& logits) {
    if (argmax) return logits.argmax(1);
    auto p = torch::softmax(logits.to(torch::kFloat64), 1).contiguous();
    auto acc = p.accessor<double, 2>();
    auto out = torch::zeros({p.size(0)}, torch::kInt64);
    auto oacc = out.accessor<int64_t, 1>();
    std::vector<double> w(size_t(p.size(1)));
    for (int64_t i = 0; i < p.size(0); ++i) {
      for (int64_t k = 0; k < p.size(1); ++k) w[size_t(k)] = acc[i][k];
      oacc[i] = rng->sample_weighted(w);
    }
    return out;
  };
  auto add_lp = [&](const char* name, const Tensor& logits, const Tensor& choice,
                    const Tensor& rows_or_null, const Tensor& used) {
    auto lp = torch::log_softmax(logits, 1);
    auto g = lp.gather(1, choice.unsqueeze(1)).squeeze(1);
    if (rows_or_null.defined()) {
      res.log_prob = res.log_prob + scatter_rows(g, rows_or_null, B);
      if (want_dists) {
        res.dists->log_probs[name] = scatter_rows(lp, rows_or_null, B);
        res.dists->used[name] = used;
      }
    } else {
      res.log_prob = res.log_prob + g * used;
      if (want_dists) {
        res.dists->log_probs[name] = lp;
        res.dists->used[name] = used;
      }
    }
  };

  auto ar0 = torch::elu(ar_proj_->forward(t.lstm_out));
  auto ones = torch::ones({B}, opts);
  Tensor none;

  auto alogits = action_logits(ar0, t.gating, in.available);
  auto action = pick_rows(alogits);
  add_lp("action", alogits, action, none, ones);

  auto ar = ar0 + action_embed_->forward(action);
  auto dlogits = delay_out_->forward(torch::elu(delay_h_->forward(ar)));
  auto delay = pick_rows(dlogits);
  add_lp("delay", dlogits, delay, none, ones);
  ar = ar + delay_embed_->forward(delay);

  // per-row head usage from the sampled action ids
  auto acc_a = action.accessor<int64_t, 1>();
  auto used_of = [&](const std::vector<uint8_t>& table) {
    auto u = torch::zeros({B}, opts);
    for (int64_t i = 0; i < B; ++i)
      if (table[size_t(acc_a[i])]) u[i] = 1;
    return u;
  };
  auto rows_of = [&](const Tensor& used) { return (used > 0).nonzero().squeeze(1); };

  auto used_q = used_of(uses_queued_);
  auto qlogits = queued_out_->forward(torch::elu(queued_h_->forward(ar)));
  Tensor queued = torch::zeros({B}, torch::kInt64);
  {
    auto rows = rows_of(used_q);
    if (rows.numel() > 0) {
      auto sub = pick_rows(qlogits.index_select(0, rows));
      queued.index_copy_(0, rows, sub);
      add_lp("queued", qlogits.index_select(0, rows), sub, rows, used_q);
    } else if (want_dists) {
      res.dists->log_probs["queued"] = torch::zeros({B, 2}, opts);
      res.dists->used["queued"] = used_q;
    }
  }
  ar = ar + queued_embed_->forward(queued) * used_q.unsqueeze(1);

  auto used_cg = used_of(uses_cg_id_);
  auto cg_logits = torch::bmm(t.cg_keys, cg_query_->forward(ar).unsqueeze(2)).squeeze(2);
  Tensor cg_id = torch::zeros({B}, torch::kInt64);
  {
    auto rows = rows_of(used_cg);
    if (rows.numel() > 0) {
      auto sub = pick_rows(cg_logits.index_select(0, rows));
      cg_id.index_copy_(0, rows, sub);
      add_lp("cg_id", cg_logits.index_select(0, rows), sub, rows, used_cg);
    } else if (want_dists) {
      res.dists->log_probs["cg_id"] = torch::zeros({B, kNumControlGroups}, opts);
      res.dists->used["cg_id"] = used_cg;
    }
  }

  auto used_op = used_of(uses_cg_op_);
  auto ar_cg = ar + cg_embed_->forward(cg_id) * used_cg.unsqueeze(1);
  auto op_logits = cg_op_out_->forward(torch::elu(cg_op_h_->forward(ar_cg)));
  Tensor cg_op = torch::zeros({B}, torch::kInt64);
  {
    auto rows = rows_of(used_op);
    if (rows.numel() > 0) {
      auto sub = pick_rows(op_logits.index_select(0, rows));
      cg_op.index_copy_(0, rows, sub);
      add_lp("cg_op", op_logits.index_select(0, rows), sub, rows, used_op);
    } else if (want_dists) {
      res.dists->log_probs["cg_op"] = torch::zeros({B, kNumControlGroupOps}, opts);
      res.dists->used["cg_op"] = used_op;
    }
  }

  auto used_mod = used_of(uses_modifier_);
  auto mod_logits = modifier_out_->forward(torch::elu(modifier_h_->forward(ar)));
  Tensor modifier = torch::zeros({B}, torch::kInt64);
  {
    auto rows = rows_of(used_mod);
    if (rows.numel() > 0) {
      auto sub = pick_rows(mod_logits.index_select(0, rows));
      modifier.index_copy_(0, rows, sub);
      add_lp("modifier", mod_logits.index_select(0, rows), sub, rows, used_mod);
    } else if (want_dists) {
      res.dists->log_probs["modifier"] = torch::zeros({B, kNumSelectModifiers}, opts);
      res.dists->used["modifier"] = used_mod;
    }
  }

  auto mix = mix_proj_->forward(t.lstm_out).view({B, settings_.spatial_mix_channels, 8, 8});
  const int H = schema_.features.screen_size, M = schema_.features.minimap_size;
  auto spatial = [&](const char* name, net::SpatialHead& head, const Tensor& skip,
                     const Tensor& used, int side) {
    Tensor out = torch::full({B}, -1, torch::kInt64);
    auto rows = rows_of(used);
    if (rows.numel() > 0) {
      auto logits = head->forward(mix.index_select(0, rows), skip.index_select(0, rows),
                                  ar.index_select(0, rows));
      auto sub = pick_rows(logits);
      out.index_copy_(0, rows, sub);
      add_lp(name, logits, sub, rows, used);
    } else if (want_dists) {
      res.dists->log_probs[name] = torch::zeros({B, int64_t(side) * side}, opts);
      res.dists->used[name] = used;
    }
    return out;
  };
  auto used_s1 = used_of(uses_screen1_);
  auto used_s2 = used_of(uses_screen2_);
  auto used_mm = used_of(uses_minimap_);
  auto s1 = spatial("screen1", head_screen1_, t.screen_skip, used_s1, H);
  auto s2 = spatial("screen2", head_screen2_, t.screen_skip, used_s2, H);
  auto mm = spatial("minimap", head_minimap_, t.minimap_skip, used_mm, M);

  std::vector<Tensor> vals;
  for (int k = 0; k < RewardBreakdown::kNumComponents; ++k)
    vals.push_back(value_out_[size_t(k)]->forward(torch::elu(value_h_[size_t(k)]->forward(t.lstm_out))));
  res.values = torch::cat(vals, 1);

  auto acc_d = delay.accessor<int64_t, 1>();
  auto acc_q = queued.accessor<int64_t, 1>();
  auto acc_cg = cg_id.accessor<int64_t, 1>();
  auto acc_op = cg_op.accessor<int64_t, 1>();
  auto acc_mod = modifier.accessor<int64_t, 1>();
  auto acc_s1 = s1.accessor<int64_t, 1>();
  auto acc_s2 = s2.accessor<int64_t, 1>();
  auto acc_mm = mm.accessor<int64_t, 1>();
  res.actions.resize(size_t(B));
  for (int64_t i = 0; i < B; ++i) {
    HierarchicalAction& a = res.actions[size_t(i)];
    const auto id = size_t(acc_a[i]);
    a.action_id = int(acc_a[i]);
    a.delay_bucket = int(acc_d[i]);
    if (uses_queued_[id]) a.queued = int(acc_q[i]);
    if (uses_cg_id_[id]) a.control_group_id = int(acc_cg[i]);
    if (uses_cg_op_[id]) a.control_group_op = int(acc_op[i]);
    if (uses_modifier_[id]) a.select_modifier = int(acc_mod[i]);
    if (uses_screen1_[id]) a.screen1 = Point2i{int(acc_s1[i]) / H, int(acc_s1[i]) % H};
    if (uses_screen2_[id]) a.screen2 = Point2i{int(acc_s2[i]) / H, int(acc_s2[i]) % H};
    if (uses_minimap_[id]) a.minimap = Point2i{int(acc_mm[i]) / M, int(acc_mm[i]) % M};
  }
  return res;
}

torch::Tensor PolicyNetImpl::values_only(const BatchInput& in, const RecurrentState& state) {
  auto t = trunk(in, state);
  std::vector<Tensor> vals;
  for (int k = 0; k < RewardBreakdown::kNumComponents; ++k)
    vals.push_back(
        value_out_[size_t(k)]->forward(torch::elu(value_h_[size_t(k)]->forward(t.lstm_out))));
  return torch::cat(vals, 1);
}

uint64_t PolicyNetImpl::arch_hash() const {
  return fnv1a64(network_settings_to_json(settings_) + hex64(schema_.hash()));
}

std::string network_settings_to_json(const NetworkSettings& s) {
  json j;
  j["embed_width"] = s.embed_width;
  j["conv_ch1"] = s.conv_ch1;
  j["conv_ch2"] = s.conv_ch2;
  j["conv_ch3"] = s.conv_ch3;
  j["film_blocks"] = s.film_blocks;
  j["transformer_heads"] = s.transformer_heads;
  j["transformer_ff_mult"] = s.transformer_ff_mult;
  j["pixel_lstm_width"] = s.pixel_lstm_width;
  j["scalar_hidden"] = s.scalar_hidden;
  j["scalar_out"] = s.scalar_out;
  j["cg_row_width"] = s.cg_row_width;
  j["cg_key_width"] = s.cg_key_width;
  j["relational_summary_width"] = s.relational_summary_width;
  j["core_width"] = s.core_width;
  j["head_hidden"] = s.head_hidden;
  j["spatial_mix_channels"] = s.spatial_mix_channels;
  j["film_cond_hidden"] = s.film_cond_hidden;
  return j.dump();
}

NetworkSettings network_settings_from_json(const std::string& text) {
  json j = json::parse(text);
  NetworkSettings s;
  s.embed_width = j.at("embed_width");
  s.conv_ch1 = j.at("conv_ch1");
  s.conv_ch2 = j.at("conv_ch2");
  s.conv_ch3 = j.at("conv_ch3");
  s.film_blocks = j.at("film_blocks");
  s.transformer_heads = j.at("transformer_heads");
  s.transformer_ff_mult = j.at("transformer_ff_mult");
  s.pixel_lstm_width = j.at("pixel_lstm_width");
  s.scalar_hidden = j.at("scalar_hidden");
  s.scalar_out = j.at("scalar_out");
  s.cg_row_width = j.at("cg_row_width");
  s.cg_key_width = j.at("cg_key_width");
  s.relational_summary_width = j.at("relational_summary_width");
  s.core_width = j.at("core_width");
  s.head_hidden = j.at("head_hidden");
  s.spatial_mix_channels = j.at("spatial_mix_channels");
  s.film_cond_hidden = j.at("film_cond_hidden");
  return s;
}

void save_checkpoint(const std::filesystem::path& path, PolicyNet& net,
                     const std::map<std::string, std::string>& extra_meta) {
  torch::serialize::OutputArchive ar;
  net->save(ar);
  json meta;
  meta["format_version"] = 1;
  meta["code_version"] = kVersion;
  meta["code_hash"] = kCodeHash;
  meta["schema_hash"] = hex64(net->schema().hash());
  meta["arch_hash"] = hex64(net->arch_hash());
  meta["settings"] = json::parse(network_settings_to_json(net->settings()));
  meta["norm"] = json::parse(net->norm().to_json());
  for (const auto& [k, v] : extra_meta) meta["extra"][k] = v;
  ar.write("meta", c10::IValue(meta.dump()));
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  ar.save_to(path.string());
}

static json read_meta(torch::serialize::InputArchive& ar, const std::filesystem::path& path) {
  c10::IValue v;
  ar.read("meta", v);
  if (!v.isString()) throw TrainError("checkpoint meta missing: " + path.string());
  return json::parse(v.toStringRef());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const std::exception& e) {
    throw TrainError("cannot read checkpoint " + path.string() + ": " + e.what());
  }
  json meta = read_meta(ar, path);
  CheckpointInfo info;
  info.settings = network_settings_from_json(meta.at("settings").dump());
  info.norm = NormStats::from_json(meta.at("norm").dump());
  info.schema_hash = std::stoull(meta.at("schema_hash").get<std::string>(), nullptr, 16);
  for (auto& [k, v] : meta.items())
    if (v.is_string()) info.meta[k] = v.get<std::string>();
  if (meta.contains("extra"))
    for (auto& [k, v] : meta.at("extra").items()) info.meta[k] = v.get<std::string>();
  return info;
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, PolicyNet& net) {
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const std::exception& e) {
    throw TrainError("cannot read checkpoint " + path.string() + ": " + e.what());
  }
  json meta = read_meta(ar, path);
  const std::string want_arch = hex64(net->arch_hash());
  const std::string got_arch = meta.at("arch_hash").get<std::string>();
  if (want_arch != got_arch)
    throw TrainError("checkpoint architecture mismatch: file " + got_arch + " vs net " +
                     want_arch);
  net->load(ar);
  CheckpointInfo info;
  info.settings = network_settings_from_json(meta.at("settings").dump());
  info.norm = NormStats::from_json(meta.at("norm").dump());
  info.schema_hash = std::stoull(meta.at("schema_hash").get<std::string>(), nullptr, 16);
  for (auto& [k, v] : meta.items())
    if (v.is_string()) info.meta[k] = v.get<std::string>();
  if (meta.contains("extra"))
    for (auto& [k, v] : meta.at("extra").items()) info.meta[k] = v.get<std::string>();
  return info;
}

}  // namespace startrain::policy
