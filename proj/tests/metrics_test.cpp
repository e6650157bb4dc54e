#include <gtest/gtest.h>

#include "softbeam/cost.hpp"
#include "softbeam/metrics.hpp"
#include "softbeam/random.hpp"

using namespace softbeam;

TEST(Evaluate, PerfectPredictions) {
  const std::vector<std::vector<std::size_t>> gold{{0, 1, 2}, {2, 2}};
  const auto m = evaluate(gold, gold, 3, 0);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  EXPECT_EQ(m.tokens, 5u);
}

TEST(Evaluate, OneErrorInFourTokens) {
  const auto m = evaluate({{0, 1, 1, 2}}, {{0, 1, 2, 2}}, 3);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  // label 1: p=1/2 r=1 -> 2/3; label 2: p=1 r=1/2 -> 2/3; label 0 -> 1
  EXPECT_NEAR(m.macro_f1, (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0, 1e-12);
  const auto without_default = evaluate({{0, 1, 1, 2}}, {{0, 1, 2, 2}}, 3, 0);
  EXPECT_NEAR(without_default.macro_f1, 2.0 / 3.0, 1e-12);
}

TEST(Evaluate, AllDefaultPredictionsScoreZeroF1) {
  const auto m = evaluate({{0, 0, 0, 0}}, {{0, 1, 0, 2}}, 3, 0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.macro_f1, 0.0);
}

TEST(Evaluate, PerLabelCounts) {
  const auto m = evaluate({{1, 1, 0}}, {{1, 0, 0}}, 2);
  EXPECT_EQ(m.per_label[1].support, 1u);
  EXPECT_EQ(m.per_label[1].predicted, 2u);
  EXPECT_EQ(m.per_label[1].correct, 1u);
  EXPECT_DOUBLE_EQ(m.per_label[1].precision(), 0.5);
  EXPECT_DOUBLE_EQ(m.per_label[1].recall(), 1.0);
}

TEST(Evaluate, MisalignmentIsAnInputError) {
  EXPECT_THROW(evaluate({{0}}, {{0}, {1}}, 2), InputError);
  EXPECT_THROW(evaluate({{0, 1}}, {{0}}, 2), InputError);
  EXPECT_THROW(evaluate({{5}}, {{0}}, 2), VocabularyError);
}

TEST(Evaluate, EmptyCorpus) {
  const auto m = evaluate({}, {}, 3, 0);
  EXPECT_EQ(m.tokens, 0u);
  EXPECT_EQ(m.accuracy, 0.0);
}

TEST(Evaluate, HammingLossIsLengthTimesErrorRate) {
  Rng rng(42);
  const auto cost = CostFunction::hamming(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<std::size_t> p(n), g(n);
    for (std::size_t t = 0; t < n; ++t) p[t] = rng.below(6), g[t] = rng.below(6);
    const auto m = evaluate({p}, {g}, 6);
    EXPECT_NEAR(direct_loss(p, g, cost), static_cast<double>(n) * (1.0 - m.accuracy), 1e-12);
  }
}

TEST(Cost, LocalCostsSumToTheSequenceLoss) {
  Rng rng(5);
  const auto cost = CostFunction::weighted_hamming(5, 0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<std::size_t> p(n), g(n);
    double sum = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      p[t] = rng.below(5), g[t] = rng.below(5);
      sum += local_cost(cost, p[t], g[t]);
    }
    EXPECT_DOUBLE_EQ(direct_loss(p, g, cost), sum);
  }
}

TEST(Cost, WeightedHammingPenalisesWrongDefaultPredictions) {
  const auto cost = CostFunction::weighted_hamming(4, 0, 2.0);
  EXPECT_EQ(local_cost(cost, 2, 2), 0.0);
  EXPECT_EQ(local_cost(cost, 0, 1), 2.0);
  EXPECT_EQ(local_cost(cost, 1, 2), 1.0);
  EXPECT_EQ(local_cost(cost, 1, 0), 1.0);
  EXPECT_THROW(local_cost(cost, 4, 0), VocabularyError);
}
