#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include <clib/memory.hpp>

#include "support/alignment.hpp"
#include "support/oracles.hpp"

using namespace clib;
using namespace clib::testing;

namespace {

struct FixedDraw {
  std::uint64_t value = 0;
  std::uint64_t uniform_index(std::uint64_t) { return value; }
};

// Loss lookup keyed by sample index.
auto table_loss(std::map<std::size_t, double> table) {
  return [table](const SampleRef& s) { return table.at(s.index); };
}

Dataset gaussian_pool(std::size_t n, std::size_t classes, std::size_t dim, Rng& rng) {
  Dataset ds;
  ds.name = "pool";
  ds.num_classes = classes;
  ds.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSample s{std::vector<double>(dim), static_cast<int>(i % classes)};
    for (auto& v : s.features) v = rng.normal() + s.label;
    ds.train.push_back(s);
  }
  ds.test = ds.train;
  return ds;
}

// Per-candidate scores with hand-written softmax-regression gradients.
std::vector<double> linear_oracle(const std::vector<LabeledSample>& c, const DenseLayer& layer, double lr) {
  const std::size_t k = layer.out_dim(), d = layer.in_dim();
  auto logits = [&](const std::vector<double>& w, const std::vector<double>& b, const LabeledSample& s) {
    std::vector<double> z(k);
    for (std::size_t o = 0; o < k; ++o) {
      z[o] = b[o];
      for (std::size_t i = 0; i < d; ++i) z[o] += w[o * d + i] * s.features[i];
    }
    return z;
  };
  auto total = [&](const std::vector<double>& w, const std::vector<double>& b) {
    double t = 0.0;
    for (const auto& s : c) t += naive_ce(logits(w, b, s), s.label);
    return t;
  };
  const double before = total(layer.weight.data, layer.bias);
  std::vector<double> out;
  for (const auto& s : c) {
    auto z = logits(layer.weight.data, layer.bias, s);
    const double mx = *std::max_element(z.begin(), z.end());
    double norm = 0.0;
    for (auto& v : z) norm += (v = std::exp(v - mx));
    std::vector<double> w = layer.weight.data, b = layer.bias;
    for (std::size_t o = 0; o < k; ++o) {
      const double delta = z[o] / norm - (static_cast<int>(o) == s.label ? 1.0 : 0.0);
      b[o] -= lr * delta;
      for (std::size_t i = 0; i < d; ++i) w[o * d + i] -= lr * delta * s.features[i];
    }
    out.push_back(before - total(w, b));
  }
  return out;
}

}  // namespace

TEST(Reservoir, FirstCapacitySamplesAlwaysStored) {
  EpisodicMemory mem(5);
  Rng rng(1);
  for (std::size_t i = 0; i < 5; ++i) reservoir_update(mem, {i, 0}, rng);
  ASSERT_EQ(mem.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(mem.slots[i].sample.index, i);
}

TEST(Reservoir, ForcedAcceptanceReplaces) {
  EpisodicMemory mem(1);
  FixedDraw accept{0};
  reservoir_update(mem, {0, 0}, accept);
  reservoir_update(mem, {1, 1}, accept);
  EXPECT_EQ(mem.slots[0].sample.index, 1u);
  FixedDraw reject{5};
  reservoir_update(mem, {2, 0}, reject);
  EXPECT_EQ(mem.slots[0].sample.index, 1u);
  EXPECT_EQ(mem.seen_count, 3u);
}

TEST(Reservoir, InclusionRateIsUniform) {
  const std::size_t n = 2000, cap = 50, trials = 2000;
  std::vector<double> hits(n, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = Rng::derive(t, "reservoir-unit");
    EpisodicMemory mem(cap);
    for (std::size_t i = 0; i < n; ++i) reservoir_update(mem, {i, 0}, rng);
    for (const auto& s : mem.slots) hits[s.sample.index] += 1.0;
  }
  const double p = static_cast<double>(cap) / n;
  const double sigma = std::sqrt(p * (1 - p) / trials);
  // 4.5 sigma per item keeps the family-wise false-alarm rate low over 2,000 items.
  for (double h : hits) EXPECT_LE(std::fabs(h / trials - p), 4.5 * sigma);
}

TEST(MemoryLoss, SingleAndDuplicatedSlots) {
  Rng rng(2);
  const Dataset ds = gaussian_pool(6, 3, 4, rng);
  const std::size_t dims[] = {4, 3};
  const MlpParams p = init_mlp(dims, rng);
  const int label = ds.train[2].label;
  const double l2 = loss(forward(p, ds.train[2].features), std::span<const int>(&label, 1));

  EpisodicMemory one(3);
  one.slots.push_back({{2, label}, 0.0});
  EXPECT_NEAR(memory_loss(one, p, ds), l2, 1e-15);
  one.slots.push_back({{2, label}, 0.0});
  EXPECT_NEAR(memory_loss(one, p, ds), l2, 1e-15);
  EXPECT_THROW(memory_loss(EpisodicMemory(3), p, ds), std::invalid_argument);
}

TEST(MemoryLoss, MeanOfIndependentLosses) {
  Rng rng(3);
  const Dataset ds = gaussian_pool(10, 3, 4, rng);
  const MlpParams p = random_small_mlp(rng, 4, 3);
  EpisodicMemory mem(5);
  double expect = 0.0;
  for (std::size_t i : {1u, 3u, 4u, 7u, 9u}) {
    mem.slots.push_back({{i, ds.train[i].label}, 0.0});
    expect += naive_ce(naive_logits(p, ds.train[i].features), ds.train[i].label) / 5.0;
  }
  EXPECT_NEAR(memory_loss(mem, p, ds), expect, 1e-12);
}

TEST(UpdateImportance, SingleIndexExample) {
  EpisodicMemory mem(2);
  mem.slots = {{{0, 0}, 0.5}, {{1, 1}, 0.3}};
  mem.l_prev = 1.0;
  update_importance(mem, 0.8, {1}, 0.1);
  EXPECT_NEAR(mem.slots[0].importance, 0.5, 1e-12);
  EXPECT_NEAR(mem.slots[1].importance, 0.29, 1e-12);
  EXPECT_NEAR(mem.l_prev, 0.8, 1e-12);
}

TEST(UpdateImportance, TwoIndexExample) {
  EpisodicMemory mem(2);
  mem.slots = {{{0, 0}, 0.4}, {{1, 1}, 0.2}};
  mem.l_prev = 1.0;
  update_importance(mem, 1.1, {0, 1}, 0.1);
  EXPECT_NEAR(mem.slots[0].importance, 0.36, 1e-12);
  EXPECT_NEAR(mem.slots[1].importance, 0.16, 1e-12);
}

TEST(UpdateImportance, ZeroInnovationAndDuplicates) {
  EpisodicMemory mem(3);
  mem.slots = {{{0, 0}, 0.25}, {{1, 0}, 0.25}, {{2, 1}, 7.0}};
  mem.l_prev = 1.0;
  update_importance(mem, 0.75, {0, 1, 1, 0}, 0.3);
  EXPECT_EQ(mem.slots[0].importance, 0.25);
  EXPECT_EQ(mem.slots[1].importance, 0.25);
  EXPECT_EQ(mem.slots[2].importance, 7.0);
}

TEST(UpdateImportance, Errors) {
  EpisodicMemory mem(2);
  mem.slots = {{{0, 0}, 0.0}};
  EXPECT_THROW(update_importance(mem, 0.1, {}, 0.1), std::invalid_argument);
  EXPECT_THROW(update_importance(mem, 0.1, {1}, 0.1), std::out_of_range);
  EXPECT_THROW(update_importance(mem, 0.1, {0}, 0.0), std::invalid_argument);
}

TEST(Admission, FullMemoryExample) {
  EpisodicMemory mem(3);
  mem.slots = {{{0, 0}, 0.9}, {{1, 0}, 0.1}, {{2, 1}, 0.5}};
  mem.l_prev = 1.0;
  const auto slot = importance_memory_update(mem, {3, 1}, table_loss({{0, 9.0}, {1, 0.4}, {2, 9.0}, {3, 0.7}}));
  EXPECT_EQ(slot, 1u);
  EXPECT_EQ(mem.slots[1].sample.index, 3u);
  EXPECT_NEAR(mem.l_prev, 1.1, 1e-12);
  EXPECT_NEAR(mem.slots[0].importance, 0.9, 1e-12);
  EXPECT_NEAR(mem.slots[1].importance, 0.5, 1e-12);
  EXPECT_NEAR(mem.slots[2].importance, 0.5, 1e-12);
}

TEST(Admission, UnderCapacityExample) {
  EpisodicMemory mem(3);
  mem.slots = {{{0, 0}, 0.6}};
  mem.l_prev = 0.5;
  importance_memory_update(mem, {1, 0}, table_loss({{0, 0.5}, {1, 0.9}}));
  EXPECT_EQ(mem.size(), 2u);
  EXPECT_NEAR(mem.l_prev, 0.7, 1e-12);
  EXPECT_NEAR(mem.slots[1].importance, 0.6, 1e-12);
}

TEST(Admission, EmptyMemoryAndFallbackMean) {
  EpisodicMemory mem(3);
  importance_memory_update(mem, {0, 4}, table_loss({{0, 1.25}}));
  EXPECT_EQ(mem.slots[0].importance, 0.0);
  EXPECT_NEAR(mem.l_prev, 1.25, 1e-15);
  mem.slots[0].importance = 0.8;
  importance_memory_update(mem, {1, 2}, table_loss({{0, 1.25}, {1, 0.5}}));
  // No other label-2 slot: mean over all other slots.
  EXPECT_NEAR(mem.slots[1].importance, 0.8, 1e-15);
}

TEST(Admission, TieBreaks) {
  EpisodicMemory mem(4);
  mem.slots = {{{0, 3}, 0.2}, {{1, 3}, 0.2}, {{2, 1}, 0.0}, {{3, 1}, 0.0}};
  // Labels 1 and 3 tie with equal memory counts: the smaller label loses a slot,
  // and the first of two equal-H slots is evicted.
  const auto slot = importance_memory_update(mem, {4, 0}, [](const SampleRef&) { return 1.0; });
  EXPECT_EQ(slot, 2u);
  EXPECT_EQ(most_frequent_label(mem, 5), 3);
}

TEST(Admission, CapacityOneKeepsNewest) {
  EpisodicMemory mem(1);
  importance_memory_update(mem, {0, 0}, table_loss({{0, 2.0}}));
  importance_memory_update(mem, {1, 1}, table_loss({{0, 2.0}, {1, 0.3}}));
  EXPECT_EQ(mem.slots[0].sample.index, 1u);
  EXPECT_NEAR(mem.l_prev, 0.3, 1e-15);
}

TEST(Admission, CapacityAndClassBalanceProperties) {
  Rng rng(4);
  const Dataset ds = gaussian_pool(400, 5, 3, rng);
  const std::size_t dims[] = {3, 5};
  const MlpParams p = init_mlp(dims, rng);
  EpisodicMemory mem(20);
  for (std::size_t step = 0; step < 400; ++step) {
    const std::size_t i = rng.uniform_index(400);
    std::map<int, std::size_t> before;
    for (const auto& s : mem.slots) ++before[s.sample.label];
    std::size_t top = 0;
    for (const auto& [label, count] : before) top = std::max(top, count);
    const int incoming = ds.train[i].label;
    const bool rarer = mem.full() && before[incoming] < top;

    importance_memory_update(mem, {i, incoming}, p, ds);
    ASSERT_LE(mem.size(), mem.capacity);
    for (auto& s : mem.slots) s.importance = rng.normal();

    std::map<int, std::size_t> after;
    for (const auto& s : mem.slots) ++after[s.sample.label];
    std::size_t top_after = 0;
    for (const auto& [label, count] : after) top_after = std::max(top_after, count);
    if (rarer) { EXPECT_LE(top_after, top); }
  }
}

TEST(Admission, TrackedLossMatchesRecomputation) {
  Rng rng(5);
  const Dataset ds = gaussian_pool(300, 4, 3, rng);
  const MlpParams p = random_small_mlp(rng, 3, 4);
  EpisodicMemory mem(25);
  for (std::size_t step = 0; step < 300; ++step) {
    const std::size_t i = rng.uniform_index(300);
    importance_memory_update(mem, {i, ds.train[i].label}, p, ds);
    ASSERT_NEAR(mem.l_prev, memory_loss(mem, p, ds), 1e-9) << "step " << step;
  }
}

TEST(SampleBatch, FullDrawIsPermutation) {
  Rng rng(6);
  const Dataset ds = gaussian_pool(8, 2, 2, rng);
  EpisodicMemory mem(8);
  for (std::size_t i = 0; i < 8; ++i) mem.slots.push_back({{i, ds.train[i].label}, 0.0});
  auto b = sample_batch(mem, 8, ds, rng);
  std::sort(b.slot_indices.begin(), b.slot_indices.end());
  std::vector<std::size_t> all(8);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(b.slot_indices, all);
  EXPECT_EQ(b.batch.features.rows, 8u);
}

TEST(SampleBatch, SingleDrawsAreUniform) {
  Rng rng(7);
  EpisodicMemory mem(10);
  for (std::size_t i = 0; i < 10; ++i) mem.slots.push_back({{i, 0}, 0.0});
  std::vector<double> counts(10, 0.0);
  for (int t = 0; t < 10000; ++t) counts[sample_slot_indices(mem, 1, rng)[0]] += 1.0;
  const double sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (double c : counts) EXPECT_LE(std::fabs(c - 1000.0), 3.5 * sigma);
}

TEST(SampleBatch, DeterministicAndReplacementWhenSmall) {
  EpisodicMemory mem(10);
  for (std::size_t i = 0; i < 3; ++i) mem.slots.push_back({{i, 0}, 0.0});
  Rng a(8), b(8);
  const auto x = sample_slot_indices(mem, 16, a);
  EXPECT_EQ(x, sample_slot_indices(mem, 16, b));
  EXPECT_EQ(x.size(), 16u);
  for (auto i : x) EXPECT_LT(i, 3u);
  EXPECT_THROW(sample_slot_indices(EpisodicMemory(2), 1, a), std::invalid_argument);
}

TEST(Oracle, DuplicatesAndVanishingStep) {
  Rng rng(9);
  const Dataset ds = gaussian_pool(4, 2, 3, rng);
  const MlpParams p = random_small_mlp(rng, 3, 2);
  std::vector<LabeledSample> c = ds.train;
  c.push_back(ds.train[1]);
  const auto s = oracle_loss_decrease(c, p, 0.05);
  EXPECT_DOUBLE_EQ(s[1], s[4]);
  for (double v : oracle_loss_decrease(c, p, 1e-12)) EXPECT_LT(std::fabs(v), 1e-9);
  EXPECT_THROW(oracle_loss_decrease(c, p, 0.0), std::invalid_argument);
}

TEST(Oracle, MatchesClosedFormLinearModel) {
  Rng rng(10);
  const Dataset ds = gaussian_pool(4, 2, 3, rng);
  const std::size_t dims[] = {3, 2};
  MlpParams p = init_mlp(dims, rng);
  for (auto& b : p.layers[0].bias) b = rng.normal();
  const auto ours = oracle_loss_decrease(ds.train, p, 0.2);
  const auto ref = linear_oracle(ds.train, p.layers[0], 0.2);
  ASSERT_EQ(ours.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ours[i], ref[i], 1e-12);
}

TEST(Oracle, ImportanceTracksLossDecrease) {
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) total += importance_alignment(seed).spearman;
  EXPECT_GT(total / 5.0, 0.5);
}

TEST(Snapshot, RoundTrip) {
  EpisodicMemory mem(4);
  mem.slots = {{{3, 1}, 0.25}, {{9, 0}, -1.5}};
  mem.l_prev = 0.75;
  mem.seen_count = 11;
  EXPECT_EQ(memory_from_snapshot(nlohmann::json::parse(memory_snapshot(mem).dump())), mem);
}
