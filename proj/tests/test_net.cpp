#include "testing.hpp"

#include <cmath>
#include <functional>

#include "startrain/env.hpp"
#include "startrain/net.hpp"

using namespace startrain;
using namespace startrain::env;
using namespace testutil;

namespace {

// Central finite differences over every element of every leaf tensor.
// Returns the worst relative error vs the analytic gradient.
double max_rel_grad_err(const std::vector<torch::Tensor>& leaves,
                        const std::function<torch::Tensor()>& loss_fn) {
  for (const auto& t : leaves) t.mutable_grad() = torch::Tensor();
  auto loss = loss_fn();
  loss.backward();
  double worst = 0.0;
  torch::NoGradGuard ng;
  for (const auto& t : leaves) {
    REQUIRE(t.grad().defined());
    auto flat = t.view({-1});
    auto gflat = t.grad().reshape({-1});
    for (int64_t i = 0; i < flat.numel(); ++i) {
      double orig = flat[i].item<double>();
      double eps = 1e-5 * std::max(1.0, std::abs(orig));
      flat[i].fill_(orig + eps);
      double up = loss_fn().item<double>();
      flat[i].fill_(orig - eps);
      double down = loss_fn().item<double>();
      flat[i].fill_(orig);
      double numeric = (up - down) / (2.0 * eps);
      double analytic = gflat[i].item<double>();
      double err =
          std::abs(analytic - numeric) / std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

std::vector<torch::Tensor> leaves_of(torch::nn::Module& m, std::vector<torch::Tensor> extra) {
  std::vector<torch::Tensor> out;
  for (auto& p : m.parameters()) out.push_back(p);
  for (auto& t : extra) out.push_back(t);
  return out;
}

}  // namespace

TEST_CASE("film residual block gradients match finite differences") {
  torch::manual_seed(11);
  net::FiLMBlock block(6, 8);
  block->to(torch::kFloat64);
  auto x = torch::randn({1, 6, 4, 4}, torch::kFloat64).requires_grad_(true);
  auto z = torch::randn({1, 8}, torch::kFloat64).requires_grad_(true);
  auto w = torch::randn({1, 6, 4, 4}, torch::kFloat64);  // fixed mixing weights
  auto loss = [&] { return (block->forward(x, z) * w).sum(); };
  CHECK(max_rel_grad_err(leaves_of(*block, {x, z}), loss) <= 1e-3);
}

TEST_CASE("set encoder gradients match finite differences") {
  torch::manual_seed(12);
  net::SetEncoder enc(5, 8, 6);
  enc->to(torch::kFloat64);
  // Row 0 is an empty set (exercises the learned null token); row 1 has one
  // padded slot whose gradient must vanish.
  auto items = torch::randn({2, 3, 5}, torch::kFloat64).requires_grad_(true);
  auto mask = torch::tensor({{0.0, 0.0, 0.0}, {1.0, 1.0, 0.0}}, torch::kFloat64);
  auto w = torch::randn({2, 6}, torch::kFloat64);
  auto loss = [&] { return (enc->forward(items, mask) * w).sum(); };
  CHECK(max_rel_grad_err(leaves_of(*enc, {items}), loss) <= 1e-3);

  // Empty-set output equals the null token verbatim.
  {
    torch::NoGradGuard ng;
    enc->null_token.uniform_(-1, 1);
  }
  auto out = enc->forward(items, mask);
  CHECK(torch::equal(out[0], enc->null_token));
  // Padded row contributes nothing.
  items.mutable_grad() = torch::Tensor();
  (enc->forward(items, mask) * w).sum().backward();
  CHECK(items.grad()[1][2].abs().max().item<double>() == 0.0);
  CHECK(items.grad()[1][0].abs().sum().item<double>() > 0.0);
}

TEST_CASE("self-attention layer gradients match finite differences") {
  torch::manual_seed(13);
  net::TransformerLayer layer(8, 2, 2);
  layer->to(torch::kFloat64);
  auto x = torch::randn({1, 5, 8}, torch::kFloat64).requires_grad_(true);
  auto w = torch::randn({1, 5, 8}, torch::kFloat64);
  auto loss = [&] { return (layer->forward(x) * w).sum(); };
  CHECK(max_rel_grad_err(leaves_of(*layer, {x}), loss) <= 1e-3);
}

TEST_CASE("observation batching produces schema-shaped tensors") {
  auto cfg = tiny_config();
  auto schema = cfg.make_schema();
  MiniRtsEnv env(schema, arena::env_config_from(cfg));
  std::vector<FeatureObservation> frames;
  frames.push_back(env.reset(3, OpponentLevel::kVeryEasy, Race::kAlpha, Race::kBeta));
  HierarchicalAction noop;
  noop.action_id = act::kNoOp;
  noop.delay_bucket = 2;
  for (int i = 0; i < 2; ++i) frames.push_back(env.step(noop).obs);

  std::vector<const FeatureObservation*> ptrs;
  for (const auto& f : frames) ptrs.push_back(&f);
  NormStats norm;  // identity
  net::ClampStats clamps;
  auto in = net::make_batch_input(ptrs, 3, 1, schema, norm, torch::kFloat32, &clamps);

  const int64_t n = 3;
  const int64_t h = schema.features.screen_size;
  const int64_t mm = schema.features.minimap_size;
  const int64_t a = static_cast<int64_t>(schema.actions.size());
  CHECK(in.batch == 3);
  CHECK(in.time == 1);
  CHECK(in.screen_cat.sizes() == torch::IntArrayRef({n, 4, h, h}));
  CHECK(in.screen_cat.dtype() == torch::kInt64);
  CHECK(in.screen_num.sizes() == torch::IntArrayRef({n, 5, h, h}));
  CHECK(in.screen_num.dtype() == torch::kFloat32);
  CHECK(in.minimap_cat.sizes() == torch::IntArrayRef({n, 4, mm, mm}));
  CHECK(in.minimap_num.sizes() == torch::IntArrayRef({n, 1, mm, mm}));
  CHECK(in.player.sizes() == torch::IntArrayRef({n, kNumPlayerScalars}));
  CHECK(in.game_loop.sizes() == torch::IntArrayRef({n, 1}));
  CHECK(in.mmr.sizes() == torch::IntArrayRef({n, kMmrBuckets}));
  CHECK(in.prev_action.sizes() == torch::IntArrayRef({n, a}));
  CHECK(in.prev_points.sizes() == torch::IntArrayRef({n, 4}));
  CHECK(in.control_groups.sizes() == torch::IntArrayRef({n, kNumControlGroups, 2}));
  CHECK(in.cg_hint.sizes() == torch::IntArrayRef({n, kNumControlGroups * 2}));
  CHECK(in.build_order.sizes() == torch::IntArrayRef({n, kBuildOrderLen}));
  CHECK(in.build_order.dtype() == torch::kInt64);
  CHECK(in.available.sizes() == torch::IntArrayRef({n, a}));

  // One-hot rows: exactly one mmr bucket, exactly one previous action.
  CHECK(torch::equal(in.mmr.sum(1), torch::ones({n})));
  CHECK(torch::equal(in.prev_action.sum(1), torch::ones({n})));
  // Availability mirrors the observation mask as 0/1 floats.
  for (int64_t i = 0; i < a; ++i)
    CHECK(in.available[0][i].item<float>() == static_cast<float>(frames[0].available_actions[i]));

  // Item lists are one-hot expanded: 7 + 4 categories + 5 numeric columns.
  const auto& cargo_spec = schema.features.lists[0];
  CHECK(net::item_input_width(cargo_spec) == 16);
  CHECK(in.cargo.sizes() == torch::IntArrayRef({n, kItemListCap, 16}));
  CHECK(in.cargo_mask.sizes() == torch::IntArrayRef({n, kItemListCap}));
  CHECK(in.cargo_mask.sum().item<double>() == 0.0);  // nothing in cargo at reset
  // Reset leaves the starting workers selectable but unselected: empty lists.
  CHECK(in.single_mask.sum().item<double>() == 0.0);

  // Production queue carries two columns (type + progress) -> 7 + 1.
  CHECK(net::item_input_width(schema.features.lists[2]) == 8);
  CHECK(in.queue.sizes() == torch::IntArrayRef({n, kItemListCap, 8}));

  // Categorical grids stay within their declared cardinalities.
  CHECK(in.screen_cat.min().item<int64_t>() >= 0);
  CHECK(in.screen_cat.max().item<int64_t>() <
        schema.features.screen[2].cardinality);  // unit_type is the widest layer
  CHECK(clamps.clamped == 0);
  CHECK(clamps.total > 0);

  SUBCASE("requested dtype converts float tensors only") {
    auto in64 = net::make_batch_input(ptrs, 3, 1, schema, norm, torch::kFloat64, nullptr);
    CHECK(in64.screen_num.dtype() == torch::kFloat64);
    CHECK(in64.player.dtype() == torch::kFloat64);
    CHECK(in64.available.dtype() == torch::kFloat64);
    CHECK(in64.screen_cat.dtype() == torch::kInt64);
  }

  SUBCASE("out-of-range numerics are clamped and counted") {
    auto bad = frames;
    // hit_points layer is the first numeric screen layer (index 4 overall);
    // poke one cell far above its declared max of 400.
    size_t cell = 4 * h * h + 5;
    bad[0].screen[cell] = 9999;
    std::vector<const FeatureObservation*> bptrs;
    for (const auto& f : bad) bptrs.push_back(&f);
    net::ClampStats cs;
    auto in2 = net::make_batch_input(bptrs, 3, 1, schema, norm, torch::kFloat32, &cs);
    CHECK(cs.clamped == 1);
    CHECK(cs.total == clamps.total);
    // Clamped to the declared max, then scaled to [0, 1].
    CHECK(in2.screen_num[0][0].flatten()[5].item<float>() == doctest::Approx(1.0));
  }
}

TEST_CASE("action batching uses -1 for unused heads") {
  auto cfg = tiny_config();
  auto schema = cfg.make_schema();
  const int64_t h = schema.features.screen_size;
  const int64_t mm = schema.features.minimap_size;

  HierarchicalAction noop;
  noop.action_id = act::kNoOp;
  noop.delay_bucket = 3;

  HierarchicalAction rect;
  rect.action_id = act::kSelectRect;
  rect.delay_bucket = 1;
  rect.queued = 0;
  rect.screen1 = Point2i{2, 5};
  rect.screen2 = Point2i{3, 7};
  rect.select_modifier = 1;

  HierarchicalAction cam;
  cam.action_id = act::kMoveCamera;
  cam.delay_bucket = 0;
  cam.minimap = Point2i{4, 9};

  std::vector<const HierarchicalAction*> acts = {&noop, &rect, &cam};
  auto ab = net::make_action_batch(acts, 3, 1, schema);
  CHECK(ab.batch == 3);
  CHECK(ab.time == 1);
  CHECK(ab.action.dtype() == torch::kInt64);

  CHECK(ab.action[0].item<int64_t>() == act::kNoOp);
  CHECK(ab.delay[0].item<int64_t>() == 3);
  for (const auto* t : {&ab.queued, &ab.cg_id, &ab.cg_op, &ab.modifier, &ab.screen1, &ab.screen2,
                        &ab.minimap})
    CHECK((*t)[0].item<int64_t>() == -1);

  CHECK(ab.action[1].item<int64_t>() == act::kSelectRect);
  CHECK(ab.queued[1].item<int64_t>() == 0);
  CHECK(ab.screen1[1].item<int64_t>() == 2 * h + 5);
  CHECK(ab.screen2[1].item<int64_t>() == 3 * h + 7);
  CHECK(ab.modifier[1].item<int64_t>() == 1);
  CHECK(ab.minimap[1].item<int64_t>() == -1);

  CHECK(ab.action[2].item<int64_t>() == act::kMoveCamera);
  CHECK(ab.minimap[2].item<int64_t>() == 4 * mm + 9);
  CHECK(ab.screen1[2].item<int64_t>() == -1);
  CHECK(ab.queued[2].item<int64_t>() == -1);
}
