#pragma once

// Discrete beam search with backpointers, greedy decoding, and an exhaustive
// search used as a test oracle.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "softbeam/autodiff.hpp"
#include "softbeam/model.hpp"

namespace softbeam {

// A (row, column) position in a k x |V| candidate matrix: row is the
// backpointer into the previous beam, column the label. Zero-based.
struct IndexPair {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const IndexPair&) const = default;
};

// The k largest entries of a row-major rows x cols matrix, descending, ties
// in (row, column) scan order.
inline std::vector<double> top_k_max(std::span<const double> scores, std::size_t k) {
  std::vector<double> out;
  out.reserve(k);
  for (auto i : top_k_order(scores, k)) out.push_back(scores[i]);
  return out;
}

inline std::vector<IndexPair> top_k_argmax(std::span<const double> scores, std::size_t cols,
                                           std::size_t k) {
  if (cols == 0 || scores.size() % cols != 0) {
    throw DimensionError("top_k_argmax: entry count is not a multiple of the column count");
  }
  std::vector<IndexPair> out;
  out.reserve(k);
  for (auto i : top_k_order(scores, k)) out.push_back({i / cols, i % cols});
  return out;
}

struct DecodeResult {
  std::vector<std::size_t> labels;
  double score = 0.0;
};

struct BeamStep {
  std::size_t live = 0;                   // beam elements expanded at this step
  std::vector<double> candidate_scores;   // s~_t, [live x V]
  std::vector<std::size_t> backpointers;  // per new element, index into the previous beam
  std::vector<std::size_t> labels;        // per new element, label chosen at this step
  std::vector<double> scores;             // per new element, cumulative score, descending
};

struct BeamSearchResult {
  DecodeResult best;
  std::vector<BeamStep> trace;
};

// Traces backpointers from element `from` of the last step.
inline std::vector<std::size_t> follow_backpointers(const std::vector<BeamStep>& trace,
                                                    std::size_t from = 0) {
  std::vector<std::size_t> labels(trace.size());
  std::size_t i = from;
  for (std::size_t t = trace.size(); t-- > 0;) {
    labels[t] = trace[t].labels[i];
    i = trace[t].backpointers[i];
  }
  return labels;
}

// Per-step additive score offsets (cost augmentation); empty means none.
using StepOffsets = std::vector<std::vector<double>>;

namespace detail {

inline void check_offsets(const StepOffsets& offsets, std::size_t steps, std::size_t labels) {
  if (offsets.empty()) return;
  if (offsets.size() != steps) throw InputError("score offsets do not cover every step");
  for (const auto& o : offsets) {
    if (o.size() != labels) throw DimensionError("score offset row has the wrong size");
  }
}

}  // namespace detail

// Beam search over s(y) = sum_t f(h_t, y_t). The first step expands the single
// start hypothesis, so the beam holds min(k, live * |V|) distinct elements.
inline BeamSearchResult beam_search(const EncodedInput& enc, const TaggerModel& model,
                                    std::size_t k, const StepOffsets& offsets = {}) {
  if (k < 1) throw ContractError("beam size must be at least 1");
  NoGradGuard no_grad;
  const std::size_t steps = enc.length();
  const std::size_t vocab = model.sizes.labels;
  detail::check_offsets(offsets, steps, vocab);

  BeamSearchResult result;
  result.trace.reserve(steps);
  LstmState state = decoder_start(model, enc, 1);
  std::vector<double> scores{0.0};
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t live = scores.size();
    auto f = local_scores(state.h, enc.rows(t, live), model);
    BeamStep step;
    step.live = live;
    step.candidate_scores.resize(live * vocab);
    for (std::size_t i = 0; i < live; ++i) {
      for (std::size_t w = 0; w < vocab; ++w) {
        double s = scores[i] + f[i * vocab + w];
        if (!offsets.empty()) s += offsets[t][w];
        step.candidate_scores[i * vocab + w] = s;
      }
    }
    const std::size_t kept = std::min(k, live * vocab);
    for (const auto& [row, col] : top_k_argmax(step.candidate_scores, vocab, kept)) {
      step.backpointers.push_back(row);
      step.labels.push_back(col);
      step.scores.push_back(step.candidate_scores[row * vocab + col]);
    }
    scores = step.scores;
    if (t + 1 < steps) {
      LstmState prev{gather_rows(state.h, step.backpointers), gather_rows(state.c, step.backpointers)};
      state = recur(prev, label_embeddings(model, step.labels), enc.rows(t + 1, kept), model);
    }
    result.trace.push_back(std::move(step));
  }
  result.best.labels = follow_backpointers(result.trace, 0);
  result.best.score = scores[0];
  return result;
}

inline BeamSearchResult beam_search(std::span<const std::size_t> tokens, const TaggerModel& model,
                                    std::size_t k) {
  NoGradGuard no_grad;
  return beam_search(encode(tokens, model), model, k);
}

// Per-step argmax of f, feeding each choice back into the decoder.
inline DecodeResult greedy_decode(const EncodedInput& enc, const TaggerModel& model) {
  NoGradGuard no_grad;
  const std::size_t vocab = model.sizes.labels;
  DecodeResult out;
  LstmState state = decoder_start(model, enc, 1);
  for (std::size_t t = 0; t < enc.length(); ++t) {
    auto f = local_scores(state.h, enc.rows(t, 1), model);
    std::size_t best = 0;
    for (std::size_t w = 1; w < vocab; ++w) {
      if (f[w] > f[best]) best = w;
    }
    out.labels.push_back(best);
    out.score += f[best];
    if (t + 1 < enc.length()) {
      state = recur(state, label_embeddings(model, {best}), enc.rows(t + 1, 1), model);
    }
  }
  return out;
}

inline DecodeResult greedy_decode(std::span<const std::size_t> tokens, const TaggerModel& model) {
  NoGradGuard no_grad;
  return greedy_decode(encode(tokens, model), model);
}

// Re-scores a fixed label path by teacher forcing.
inline double rescore(const EncodedInput& enc, std::span<const std::size_t> labels,
                      const TaggerModel& model, const StepOffsets& offsets = {}) {
  NoGradGuard no_grad;
  detail::check_offsets(offsets, enc.length(), model.sizes.labels);
  double s = sequence_score(enc, labels, model).item();
  if (!offsets.empty()) {
    for (std::size_t t = 0; t < labels.size(); ++t) s += offsets[t][labels[t]];
  }
  return s;
}

inline constexpr double kMaxExhaustiveSpace = 1e6;

// True argmax of sum_t f over all |V|^T sequences, level by level; ties go to
// the lexicographically smallest sequence.
inline DecodeResult exhaustive_search(const EncodedInput& enc, const TaggerModel& model,
                                      const StepOffsets& offsets = {}) {
  NoGradGuard no_grad;
  const std::size_t steps = enc.length();
  const std::size_t vocab = model.sizes.labels;
  detail::check_offsets(offsets, steps, vocab);
  if (std::pow(static_cast<double>(vocab), static_cast<double>(steps)) > kMaxExhaustiveSpace) {
    throw ContractError("exhaustive search space |V|^T exceeds 1e6");
  }
  LstmState state = decoder_start(model, enc, 1);
  std::vector<double> scores{0.0};
  // parent[t][i] = prefix index at level t for node i at level t+1
  std::vector<std::vector<std::size_t>> parent(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t live = scores.size();
    auto f = local_scores(state.h, enc.rows(t, live), model);
    std::vector<double> next(live * vocab);
    std::vector<std::size_t> rows(live * vocab), labels(live * vocab);
    for (std::size_t i = 0; i < live; ++i) {
      for (std::size_t w = 0; w < vocab; ++w) {
        const std::size_t j = i * vocab + w;
        next[j] = scores[i] + f[j] + (offsets.empty() ? 0.0 : offsets[t][w]);
        rows[j] = i;
        labels[j] = w;
      }
    }
    parent[t] = rows;
    if (t + 1 < steps) {
      LstmState prev{gather_rows(state.h, rows), gather_rows(state.c, rows)};
      state = recur(prev, label_embeddings(model, labels), enc.rows(t + 1, next.size()), model);
    }
    scores = std::move(next);
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  DecodeResult out;
  out.score = scores[best];
  out.labels.resize(steps);
  std::size_t node = best;
  for (std::size_t t = steps; t-- > 0;) {
    out.labels[t] = node % vocab;
    node = parent[t][node];
  }
  return out;
}

}  // namespace softbeam
