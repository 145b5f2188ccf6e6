#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include <clib/model.hpp>

#include "support/oracles.hpp"

using namespace clib;
using namespace clib::testing;

namespace {

MlpParams identity_layer(std::size_t n) {
  MlpParams p;
  DenseLayer l{Matrix(n, n), std::vector<double>(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) l.weight(i, i) = 1.0;
  p.layers.push_back(l);
  return p;
}

Matrix row_matrix(std::vector<std::vector<double>> rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

}  // namespace

TEST(Forward, ZeroParamsGiveZeroLogits) {
  Rng rng(1);
  const std::size_t dims[] = {4, 6, 3};
  MlpParams p = init_mlp(dims, rng);
  for (auto& l : p.layers) {
    std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const Matrix logits = forward(p, random_batch(rng, 5, 4, 3).features);
  for (double v : logits.data) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLayerPassesInputThrough) {
  const Matrix x = row_matrix({{1.5, -2.0, 0.25}});
  EXPECT_EQ(forward(identity_layer(3), x), x);
}

TEST(Forward, BatchEqualsRowWise) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpParams p = random_small_mlp(rng, 5, 4);
    const Batch b = random_batch(rng, 7, 5, 4);
    const Matrix logits = forward(p, b.features);
    for (std::size_t r = 0; r < b.features.rows; ++r) {
      const auto expect = naive_logits(p, {b.features.row(r).begin(), b.features.row(r).end()});
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(logits(r, c), expect[c], 1e-12);
    }
  }
}

TEST(Forward, DimensionMismatchThrows) {
  EXPECT_THROW(forward(identity_layer(3), Matrix(2, 4)), std::invalid_argument);
}

TEST(Loss, UniformLogitsGiveLogC) {
  const Matrix logits(1, 10, 0.7);
  const int y[] = {3};
  EXPECT_NEAR(loss(logits, y), std::log(10.0), 1e-12);
  EXPECT_NEAR(loss(logits, y), 2.302585, 1e-6);
}

TEST(Loss, SaturatedCorrectClass) {
  Matrix logits(1, 5, 0.0);
  logits(0, 2) = 30.0;
  const int y[] = {2};
  EXPECT_LT(loss(logits, y), 1e-9);
  EXPECT_GE(loss(logits, y), 0.0);
}

TEST(Loss, TwoClassWorkedExample) {
  const Matrix logits = row_matrix({{1.0, 0.0}});
  const int y[] = {0};
  EXPECT_NEAR(loss(logits, y), 0.31326168751822286, 1e-12);
}

TEST(Loss, LabelOutOfRangeThrows) {
  const Matrix logits(1, 3);
  const int bad[] = {3};
  const int neg[] = {-1};
  EXPECT_THROW(loss(logits, bad), std::invalid_argument);
  EXPECT_THROW(loss(logits, neg), std::invalid_argument);
}

TEST(Loss, TranslationInvariantAndNonNegative) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logits(3, 6);
    for (auto& v : logits.data) v = 5.0 * rng.normal();
    const std::vector<int> y{static_cast<int>(rng.uniform_index(6)), static_cast<int>(rng.uniform_index(6)),
                             static_cast<int>(rng.uniform_index(6))};
    const auto base = per_sample_loss(logits, y);
    Matrix shifted = logits;
    for (std::size_t r = 0; r < 3; ++r) {
      const double shift = 100.0 * rng.normal();
      for (auto& v : shifted.row(r)) v += shift;
    }
    const auto moved = per_sample_loss(shifted, y);
    for (std::size_t r = 0; r < 3; ++r) {
      EXPECT_GE(base[r], 0.0);
      EXPECT_NEAR(base[r], moved[r], 1e-10);
    }
  }
}

TEST(Backward, SaturatedLogitsHaveTinyGradient) {
  MlpParams p = identity_layer(3);
  Batch b{row_matrix({{40.0, 0.0, 0.0}, {0.0, 0.0, 40.0}}), {0, 2}};
  const auto out = backward(p, b);
  EXPECT_LT(std::sqrt(out.grads.squared_norm()), 1e-8);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.uniform_index(5);
    const std::size_t c = 2 + rng.uniform_index(4);
    const MlpParams p = random_small_mlp(rng, d, c);
    const Batch b = random_batch(rng, 1 + rng.uniform_index(6), d, c);
    const auto analytic = backward(p, b);
    EXPECT_NEAR(analytic.loss, naive_batch_loss(p, b), 1e-12);
    EXPECT_LT(max_relative_error(analytic.grads, finite_difference_gradients(p, b)), 1e-4) << "trial " << trial;
  }
}

TEST(Backward, BatchGradientIsMeanOfPerSample) {
  Rng rng(8);
  const MlpParams p = random_small_mlp(rng, 4, 3);
  const Batch b = random_batch(rng, 6, 4, 3);
  const auto whole = backward(p, b);
  Gradients mean = zeros_like(p);
  for (std::size_t r = 0; r < 6; ++r) {
    Batch one{Matrix(1, 4), {b.labels[r]}};
    std::copy(b.features.row(r).begin(), b.features.row(r).end(), one.features.data.begin());
    const auto g = backward(p, one).grads;
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      for (std::size_t k = 0; k < g.layers[li].weight.data.size(); ++k)
        mean.layers[li].weight.data[k] += g.layers[li].weight.data[k] / 6.0;
      for (std::size_t k = 0; k < g.layers[li].bias.size(); ++k) mean.layers[li].bias[k] += g.layers[li].bias[k] / 6.0;
    }
  }
  EXPECT_LT(max_relative_error(whole.grads, mean, 1e-12), 1e-10);
}

TEST(Optimizer, ZeroGradientIsFixedPoint) {
  Rng rng(9);
  const MlpParams start = random_small_mlp(rng, 3, 2);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    MlpParams p = start;
    Optimizer opt(kind);
    for (int i = 0; i < 100; ++i) opt.step(p, zeros_like(p), 0.1);
    EXPECT_EQ(p, start);
  }
}

TEST(Optimizer, SgdIsExact) {
  MlpParams p;
  p.layers.push_back({Matrix(1, 1, 2.0), {0.5}});
  Gradients g;
  g.layers.push_back({Matrix(1, 1, 3.0), {-1.0}});
  Optimizer(OptimizerKind::sgd).step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.layers[0].weight(0, 0), 2.0 - 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(p.layers[0].bias[0], 0.5 + 0.1);
}

TEST(Optimizer, AdamFirstStep) {
  MlpParams p;
  p.layers.push_back({Matrix(1, 1, 0.0), {0.0}});
  Gradients g;
  g.layers.push_back({Matrix(1, 1, 1.0), {1.0}});
  Optimizer opt(OptimizerKind::adam);
  opt.step(p, g, 0.1);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p.layers[0].weight(0, 0), -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Optimizer, RejectsNonFiniteGradientAndBadLr) {
  MlpParams p;
  p.layers.push_back({Matrix(1, 1, 0.0), {0.0}});
  Gradients g;
  g.layers.push_back({Matrix(1, 1, std::nan("")), {0.0}});
  Optimizer opt;
  EXPECT_THROW(opt.step(p, g, 0.1), std::domain_error);
  EXPECT_THROW(opt.step(p, zeros_like(p), 0.0), std::invalid_argument);
}

TEST(Optimizer, SmallSgdStepDecreasesLoss) {
  Rng rng(10);
  int checked = 0;
  while (checked < 20) {
    const MlpParams p = random_small_mlp(rng, 4, 3);
    const Batch b = random_batch(rng, 5, 4, 3);
    const auto out = backward(p, b);
    if (out.grads.squared_norm() < 1e-12) continue;
    MlpParams q = p;
    Optimizer(OptimizerKind::sgd).step(q, out.grads, 1e-4);
    EXPECT_LT(naive_batch_loss(q, b), out.loss);
    ++checked;
  }
}

TEST(Accuracy, SingleCorrectSample) {
  const Matrix x = row_matrix({{0.1, 2.0}});
  const int y[] = {1};
  EXPECT_EQ(evaluate_accuracy(identity_layer(2), x, y), 1.0);
}

TEST(Accuracy, TiesGoToClassZero) {
  MlpParams p;
  p.layers.push_back({Matrix(3, 2, 0.0), std::vector<double>(3, 0.0)});
  const Matrix x = row_matrix({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  const std::vector<int> y{0, 1, 0, 2};
  EXPECT_DOUBLE_EQ(evaluate_accuracy(p, x, y), 0.5);
}

TEST(Accuracy, MatchesPerSampleArgmax) {
  Rng rng(12);
  const MlpParams p = random_small_mlp(rng, 6, 5);
  const Batch b = random_batch(rng, 50, 6, 5);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < 50; ++r) {
    const auto logits = naive_logits(p, {b.features.row(r).begin(), b.features.row(r).end()});
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    correct += static_cast<int>(best) == b.labels[r];
  }
  EXPECT_DOUBLE_EQ(evaluate_accuracy(p, b.features, b.labels), correct / 50.0);
}

TEST(Accuracy, EmptySliceThrows) {
  EXPECT_THROW(evaluate_accuracy(identity_layer(2), Matrix(0, 2), std::vector<int>{}), std::invalid_argument);
}

TEST(Checkpoint, BinaryAndJsonRoundTrip) {
  Rng rng(13);
  const MlpParams p = random_small_mlp(rng, 5, 3);
  const auto path = std::filesystem::temp_directory_path() / "clib_params_test.bin";
  save_params_binary(p, path.string());
  EXPECT_EQ(load_params_binary(path.string()), p);
  // First 8 bytes: little-endian layer count.
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  unsigned char head[8];
  ASSERT_EQ(std::fread(head, 1, 8, f), 8u);
  std::fclose(f);
  EXPECT_EQ(head[0], p.layers.size());
  for (int i = 1; i < 8; ++i) EXPECT_EQ(head[i], 0);
  std::filesystem::remove(path);
  EXPECT_EQ(params_from_json(nlohmann::json::parse(params_to_json(p).dump())), p);
}
