// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fcarac/fcarac.hpp"
#include "support/gradcheck.hpp"

using namespace fcarac;
using fcarac::testing::random_array;

namespace {

/// Same-padded width-3 convolution, written out per tap.
Array conv3(const Array& x, const Array& w, const Array& b) {
  const auto F = x.rows(), cin = x.cols(), cout = b.size();
  Array y(Shape{F, cout});
  for (std::size_t t = 0; t < F; ++t)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = b[o];
      for (std::size_t j = 0; j < 3; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - 1;
        if (src < 0 || src >= static_cast<long>(F)) continue;
        for (std::size_t c = 0; c < cin; ++c) acc += x.at(static_cast<std::size_t>(src), c) * w.at(j * cin + c, o);
      }
      y.at(t, o) = acc;
    }
  return y;
}

Config tiny_config() {
  Config cfg;
  cfg.in_channels = 3;
  cfg.width = 6;
  cfg.encoder_hidden = 5;
  cfg.seed = 4;
  return cfg;
}

std::vector<RawSequence> tiny_set(std::size_t n, std::uint64_t seed) {
  SynthRanges r;
  r.channels = 3;
  r.count_max = 6;
  r.period_max = 16;
  return generate_many(r, n, seed, "h");
}

}  // namespace

TEST(Head, ZeroInputZeroParamsGiveZeroMap) {
  PredictionHead head(3, 16, 8, 1);
  for (auto* p : head.parameters()) p->value.fill(0.0);
  const auto map = predict_density(head, Array(Shape{9, 3}), std::vector<bool>(9, true));
  for (double v : map.values.data()) EXPECT_EQ(v, 0.0);
}

TEST(Head, OutputsStayInsideClosedTanhRange) {
  std::mt19937_64 rng(1);
  PredictionHead head(3, 16, 8, 2);
  for (auto* p : head.parameters()) p->value = random_array(p->value.shape(), rng, -3, 3);
  const auto map = predict_density(head, random_array(Shape{20, 3}, rng, -5, 5), std::vector<bool>(20, true));
  for (double v : map.values.data()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Head, MatchesLayerByLayerComputation) {
  std::mt19937_64 rng(2);
  PredictionHead head(3, 4, 2, 3);
  for (auto* p : head.parameters()) p->value = random_array(p->value.shape(), rng);
  const auto x = random_array(Shape{7, 3}, rng);
  const auto ps = head.parameters();
  auto h = conv3(x, ps[0]->value, ps[1]->value);
  for (auto& v : h.data()) v = std::max(v, 0.0);
  h = conv3(h, ps[2]->value, ps[3]->value);
  for (auto& v : h.data()) v = std::max(v, 0.0);
  h = conv3(h, ps[4]->value, ps[5]->value);
  const auto map = predict_density(head, x, std::vector<bool>(7, true));
  for (std::size_t t = 0; t < 7; ++t) EXPECT_NEAR(map.values[t], std::tanh(h[t]), 1e-14);
}

TEST(Head, MaskedFramesAreExactlyZero) {
  std::mt19937_64 rng(3);
  PredictionHead head(3, 4, 2, 3);
  std::vector<bool> mask(8, true);
  mask[6] = mask[7] = false;
  const auto map = predict_density(head, random_array(Shape{8, 3}, rng), mask);
  EXPECT_EQ(map.values[6], 0.0);
  EXPECT_EQ(map.values[7], 0.0);
}

TEST(Loss, PerfectPredictionIsZero) {
  const auto g = gaussian_cycle_density(4);
  Array v(Shape{12});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 4; ++i) v[c * 4 + i] = g[i];
  // Count target is the density sum of three exact cycles.
  const DensityMap map{v, std::vector<bool>(12, true)};
  const double sum = count_from_density(map);
  const auto r = loss(map, g, 3, 10.0);
  EXPECT_EQ(r.l_mse, 0.0);
  EXPECT_NEAR(r.l_mae, std::abs(3.0 - sum) / 3.0, 1e-15);
}

TEST(Loss, CountTermIsRelativeError) {
  const auto g = gaussian_cycle_density(4);
  Array v(Shape{10});
  for (std::size_t i = 0; i < 4; ++i) v[i] = g[i];
  const double rest = 8.0 - g.sum();
  for (std::size_t i = 4; i < 10; ++i) v[i] = rest / 6;
  const auto r = loss(DensityMap{v, std::vector<bool>(10, true)}, g, 10, 10.0);
  EXPECT_NEAR(r.l_mae, 0.2, 1e-15);
  EXPECT_EQ(r.l_mse, 0.0);
  EXPECT_NEAR(r.total, 0.2, 1e-15);
}

TEST(Loss, TotalIsAlphaMsePlusMae) {
  // l_mse = 0.01 from a uniform 0.1 offset on the first cycle.
  const auto g = gaussian_cycle_density(4);
  Array v(Shape{4});
  for (std::size_t i = 0; i < 4; ++i) v[i] = g[i] + 0.1;
  const auto r = loss(DensityMap{v, std::vector<bool>(4, true)}, g, 1, 10.0);
  EXPECT_NEAR(r.l_mse, 0.01, 1e-15);
  EXPECT_NEAR(r.total, 10.0 * r.l_mse + r.l_mae, 1e-15);
  EXPECT_EQ(r.total, r.alpha * r.l_mse + r.l_mae);
}

TEST(Loss, MaskedFramesDoNotContribute) {
  const auto g = gaussian_cycle_density(4);
  Array v(Shape{8});
  for (std::size_t i = 0; i < 4; ++i) v[i] = g[i];
  std::vector<bool> mask(8, true);
  mask[7] = false;
  const auto a = loss(DensityMap{v, mask}, g, 2, 10.0);
  v[7] = 0.9;
  const auto b = loss(DensityMap{v, mask}, g, 2, 10.0);
  EXPECT_EQ(a.total, b.total);
}

TEST(Loss, ZeroCountIsRejected) {
  const auto g = gaussian_cycle_density(4);
  EXPECT_THROW(loss(DensityMap{g, std::vector<bool>(4, true)}, g, 0, 10.0), std::invalid_argument);
}

TEST(Forward, ZeroParameterNetCountsNothing) {
  Model model(tiny_config());
  for (auto* p : model.parameters()) p->value.fill(0.0);
  const auto seq = tiny_set(1, 1)[0];
  const auto [map, rep] = forward_pretrain(model, seq);
  EXPECT_EQ(count_from_density(map), 0.0);
  EXPECT_EQ(rep.l_mae, 1.0);
}

TEST(Forward, SingleCycleInputIsFullySupervised) {
  Model model(tiny_config());
  SynthSpec spec;
  spec.count = 1;
  spec.channels = 3;
  const auto seq = generate(spec, "single");
  const auto [map, rep] = forward_pretrain(model, seq);
  // Padded up to the largest scale, with exactly k real frames.
  EXPECT_EQ(std::count(map.pad_mask.begin(), map.pad_mask.end(), true), 4);
  for (std::size_t i = 4; i < map.length(); ++i) EXPECT_EQ(map.values[i], 0.0);
  const auto g = gaussian_cycle_density(4);
  double mse = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mse += (map.values[i] - g[i]) * (map.values[i] - g[i]) / 4;
  EXPECT_NEAR(rep.l_mse, mse, 1e-15);
}

TEST(Forward, PretrainEqualsComposedStages) {
  Model model(tiny_config());
  const auto seq = tiny_set(1, 2)[0];
  const auto [map, rep] = forward_pretrain(model, seq);
  const auto s = sample(seq, 4);
  const auto fm = model.encoder().encode(s);
  const auto g = mtgc(fm, first_cycle(fm, 4), model.mtgc_options());
  const auto manual = predict_density(model.head(), g, s.pad_mask);
  EXPECT_EQ(map.values, manual.values);
  const auto lr = loss(manual, gaussian_cycle_density(4), seq.count, 10.0);
  EXPECT_EQ(rep.total, lr.total);
}

TEST(Forward, TkaWithZeroNeighboursAndBypassEqualsPretrain) {
  Model model(tiny_config());
  const auto train = tiny_set(5, 3);
  auto store = std::make_shared<EmbeddingStore>(build_store(model.encoder(), train, 4));
  const auto [a, ra] = forward_pretrain(model, train[1]);
  const auto [b, rb] = forward_tka(model, train[1], store, 0, ForwardOptions{true});
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(ra.total, rb.total);
}

TEST(Forward, OwnCycleStoreMakesNeighbourSliceEqualSlotZero) {
  // With F = k the stored first cycle equals the in-sequence kernel.
  Model model(tiny_config());
  SynthSpec spec;
  spec.count = 1;
  spec.channels = 3;
  const std::vector<RawSequence> train{generate(spec, "single")};
  auto store = std::make_shared<EmbeddingStore>(build_store(model.encoder(), train, 4));
  model.enable_tka(store, 1, Fusion::attention);
  Tape t;
  auto out = model.forward(t, sample(train[0], 4));
  ASSERT_EQ(out.neighbors.size(), 1u);
  EXPECT_EQ(out.neighbors[0].id, "single");
  EXPECT_EQ(out.neighbors[0].distance, 0.0);
  const auto own = first_cycle(out.features, 4);
  const auto g = augment(out.features, own, {store->entries[0].embedding}, model.mtgc_options()).value();
  for (std::size_t f = 0; f < g.dim(0); ++f)
    for (std::size_t sc = 0; sc < g.dim(1); ++sc) EXPECT_EQ(g.at(f, sc, 0), g.at(f, sc, 1));
}

TEST(Forward, TkaMatchesStagedComposition) {
  Model model(tiny_config());
  const auto train = tiny_set(12, 5);
  auto store = std::make_shared<EmbeddingStore>(build_store(model.encoder(), train, 4));
  model.enable_tka(store, 10, Fusion::attention);
  std::mt19937_64 rng(5);
  for (auto* p : model.pool_parameters()) p->value = random_array(p->value.shape(), rng, -0.3, 0.3);
  const auto& seq = train[3];
  const auto [map, rep] = model.evaluate_sequence(seq);

  const auto s = sample(seq, 4);
  const auto fm = model.encoder().encode(s);
  const auto own = first_cycle(fm, 4);
  std::vector<Array> nbs;
  for (const auto& nb : topk(*store, own.Xp, 10)) nbs.push_back(store->entries[nb.index].embedding);
  Tape t;
  const auto fused = model.pool().apply(t.constant(augment(fm, own, nbs, model.mtgc_options()))).value();
  const auto manual = predict_density(model.head(), fused, s.pad_mask);
  EXPECT_EQ(map.values, manual.values);
}

TEST(Tta, ZeroStepsLeaveEverythingUnchanged) {
  Model model(tiny_config());
  const auto seq = tiny_set(1, 6)[0];
  const auto before = model.to_named();
  tta_adapt(model, seq, 0, 1e-4);
  const auto after = model.to_named();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].value, after[i].value);
  EXPECT_THROW(tta_adapt(model, seq, -1, 1e-4), std::invalid_argument);
}

TEST(Tta, OnlyHeadMovesAndMseDoesNotIncrease) {
  Model model(tiny_config());
  const auto seq = tiny_set(1, 7)[0];
  const auto enc_before = model.encoder().parameters()[0]->value;
  const auto mse_before = model.evaluate_sequence(seq).second.l_mse;
  const auto head_before = model.head().parameters()[0]->value;
  tta_adapt(model, seq, 10, 1e-2);
  EXPECT_EQ(model.encoder().parameters()[0]->value, enc_before);
  EXPECT_NE(model.head().parameters()[0]->value, head_before);
  EXPECT_LE(model.evaluate_sequence(seq).second.l_mse, mse_before);
}
