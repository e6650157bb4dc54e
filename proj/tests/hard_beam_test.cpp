#include "softbeam/hard_beam.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "test_support.hpp"

using namespace softbeam;
using softbeam::testing::random_ids;
using softbeam::testing::random_values;
using softbeam::testing::tiny_sizes;

namespace {

// Full-sort oracle: all entries sorted by (value desc, flat index asc).
std::vector<std::size_t> sort_all(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  return idx;
}

struct Instance {
  TaggerModel model;
  std::vector<std::size_t> tokens;
};

Instance random_instance(std::uint64_t seed, std::size_t labels, std::size_t length,
                         double scale = 1.0) {
  Rng rng(seed);
  auto sizes = tiny_sizes(labels, 4, 6);
  return {init_params(seed * 7 + 1, scale, sizes), random_ids(rng, length, sizes.input_vocab)};
}

}  // namespace

TEST(TopK, MaxExamples) {
  EXPECT_EQ(top_k_max(std::vector<double>{5, 1, 3, 2}, 2), (std::vector<double>{5, 3}));
  EXPECT_EQ(top_k_max(std::vector<double>{7, 7, 7, 7}, 2), (std::vector<double>{7, 7}));
}

TEST(TopK, ArgmaxExamples) {
  auto pairs = top_k_argmax(std::vector<double>{5, 1, 3, 2}, 2, 2);
  // one-based (1,1) and (2,1)
  EXPECT_EQ(pairs, (std::vector<IndexPair>{{0, 0}, {1, 0}}));
  auto ties = top_k_argmax(std::vector<double>{4, 4}, 2, 2);
  EXPECT_EQ(ties, (std::vector<IndexPair>{{0, 0}, {0, 1}}));
}

TEST(TopK, MatchesFullSortOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_values(rng, 21);
    auto order = sort_all(v);
    auto values = top_k_max(v, 3);
    auto pairs = top_k_argmax(v, 7, 3);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(values[i], v[order[i]]);
      EXPECT_EQ(pairs[i].row * 7 + pairs[i].col, order[i]);
      EXPECT_EQ(v[pairs[i].row * 7 + pairs[i].col], values[i]);
    }
  }
}

TEST(TopK, TooLargeKIsContractError) {
  EXPECT_THROW(top_k_max(std::vector<double>{1, 2}, 3), ContractError);
  EXPECT_THROW(top_k_argmax(std::vector<double>{1, 2}, 2, 3), ContractError);
}

TEST(BeamSearch, BeamOfOneIsGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(seed, 5, 6);
    auto enc = encode(inst.tokens, inst.model);
    auto beam = beam_search(enc, inst.model, 1).best;
    auto greedy = greedy_decode(enc, inst.model);
    EXPECT_EQ(beam.labels, greedy.labels);
    EXPECT_NEAR(beam.score, greedy.score, 1e-12);
  }
}

TEST(BeamSearch, FullWidthBeamEqualsExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto inst = random_instance(seed, 3, 3);
    auto enc = encode(inst.tokens, inst.model);
    auto beam = beam_search(enc, inst.model, 27).best;
    auto exact = exhaustive_search(enc, inst.model);
    EXPECT_EQ(beam.labels, exact.labels) << "seed " << seed;
    EXPECT_NEAR(beam.score, exact.score, 1e-12);
  }
}

TEST(BeamSearch, UnigramScorerGivesPerStepArgmax) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto inst = random_instance(seed, 4, 5);
    auto& m = inst.model;
    // Zero the rows of the output weight that read the decoder state, so f
    // depends only on the encoder context of the current position.
    auto w = m.output_weight.mutable_values();
    std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(m.sizes.hidden * m.sizes.labels), 0.0);
    auto enc = encode(inst.tokens, m);
    std::vector<std::size_t> expected;
    NoGradGuard g;
    for (std::size_t t = 0; t < enc.length(); ++t) {
      auto f = local_scores(Tensor::zeros({1, m.sizes.hidden}), enc.rows(t, 1), m);
      expected.push_back(top_k_order(f.values(), 1)[0]);
    }
    for (std::size_t k : {1, 2, 3, 6}) {
      EXPECT_EQ(beam_search(enc, m, k).best.labels, expected) << "k=" << k;
    }
  }
}

TEST(BeamSearch, TraceInvariants) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto inst = random_instance(seed, 4, 7);
    auto enc = encode(inst.tokens, inst.model);
    auto result = beam_search(enc, inst.model, 3);
    std::size_t previous = 1;
    for (const auto& step : result.trace) {
      EXPECT_EQ(step.live, previous);
      EXPECT_TRUE(std::is_sorted(step.scores.rbegin(), step.scores.rend()));
      for (auto b : step.backpointers) EXPECT_LT(b, step.live);
      previous = step.scores.size();
    }
    EXPECT_EQ(result.best.labels.size(), inst.tokens.size());
    EXPECT_NEAR(rescore(enc, result.best.labels, inst.model), result.best.score, 1e-6);
  }
}

TEST(BeamSearch, ScoreIsMonotoneInBeamWidth) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto inst = random_instance(seed, 4, 6);
    auto enc = encode(inst.tokens, inst.model);
    double last = -1e300;
    for (std::size_t k = 1; k <= 8; ++k) {
      const double s = beam_search(enc, inst.model, k).best.score;
      EXPECT_GE(s, last - 1e-9) << "seed " << seed << " k " << k;
      last = s;
    }
  }
}

TEST(BeamSearch, ZeroBeamIsContractError) {
  auto inst = random_instance(1, 3, 3);
  auto enc = encode(inst.tokens, inst.model);
  EXPECT_THROW(beam_search(enc, inst.model, 0), ContractError);
}

TEST(Greedy, IsDeterministic) {
  auto inst = random_instance(3, 5, 8);
  auto a = greedy_decode(inst.tokens, inst.model);
  auto b = greedy_decode(inst.tokens, inst.model);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.score, b.score);
}

TEST(Exhaustive, TwoCandidates) {
  auto inst = random_instance(5, 2, 1);
  auto enc = encode(inst.tokens, inst.model);
  auto best = exhaustive_search(enc, inst.model);
  NoGradGuard g;
  auto f = local_scores(decoder_start(inst.model, enc, 1).h, enc.rows(0, 1), inst.model);
  EXPECT_EQ(best.labels[0], f[1] > f[0] ? 1u : 0u);
  EXPECT_DOUBLE_EQ(best.score, std::max(f[0], f[1]));
}

TEST(Exhaustive, BeatsRandomSequences) {
  Rng rng(77);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = random_instance(seed, 4, 5);
    auto enc = encode(inst.tokens, inst.model);
    auto best = exhaustive_search(enc, inst.model);
    EXPECT_NEAR(rescore(enc, best.labels, inst.model), best.score, 1e-9);
    for (int i = 0; i < 100; ++i) {
      auto y = random_ids(rng, 5, 4);
      EXPECT_GE(best.score, rescore(enc, y, inst.model) - 1e-12);
    }
  }
}

TEST(Exhaustive, TooLargeSpaceIsContractError) {
  auto inst = random_instance(1, 4, 11);
  auto enc = encode(inst.tokens, inst.model);
  EXPECT_THROW(exhaustive_search(enc, inst.model), ContractError);
}

TEST(BeamSearch, CostAugmentedOffsetsMatchExhaustive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto inst = random_instance(seed, 3, 3);
    auto enc = encode(inst.tokens, inst.model);
    StepOffsets offsets(3, std::vector<double>(3, 0.0));
    offsets[1][2] = 1.0;
    offsets[2][0] = 1.0;
    auto beam = beam_search(enc, inst.model, 27, offsets).best;
    auto exact = exhaustive_search(enc, inst.model, offsets);
    EXPECT_EQ(beam.labels, exact.labels);
    EXPECT_NEAR(rescore(enc, beam.labels, inst.model, offsets), beam.score, 1e-9);
  }
}
