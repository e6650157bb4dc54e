#pragma once

// Differentiable beam search. Every discrete choice of the hard search is
// replaced by the peaked selection matrices of continuous_top_k_argmax:
//
//   s~_t[i, w]  = s_{t,i} + f(h_{t,i}, w)          (+ d(w) for the hinge)
//   b~_{t,i}    = row_sum(p_i),  a_i = column_sum(p_i)
//   e_{t+1,i}   = a_i^T E
//   D_{t+1,i}   = a_i . D~_t + sum_j D_{t,j} b~_{t,i}[j]
//   s_{t+1,i}   = sum(s~_t * p_i)
//   h_{t+1,i}   = r(sum_j h_{t,j} b~_{t,i}[j], e_{t+1,i})
//   L           = peaked-softmax_alpha(s_T) . D_T
//
// The LSTM memory cell is mixed by the soft backpointers exactly like h.
// Only the first beam element starts live; the others start at
// kInactiveScore so the first expansion does not fill the beam with copies.

#include <cstddef>
#include <span>
#include <vector>

#include "softbeam/autodiff.hpp"
#include "softbeam/cost.hpp"
#include "softbeam/hard_beam.hpp"
#include "softbeam/model.hpp"
#include "softbeam/soft_topk.hpp"

namespace softbeam {

inline constexpr double kInactiveScore = -1e9;

struct SoftBeamOptions {
  std::size_t beam_size = 3;
  double alpha = 1.0;
  MaxGradient max_gradient = MaxGradient::flow;
};

struct SoftBeamStep {
  Tensor candidate_scores;  // s~_t, [k x V]
  Tensor backpointers;      // b~_t, [k x k], row i sums to 1
  Tensor contributions;     // a, [k x V]
  Tensor scores;            // s_{t+1}, [k]
  Tensor losses;            // D_{t+1}, [k]
  std::vector<std::size_t> map_backpointers;  // argmax of each b~_{t,i}
  std::vector<std::size_t> map_labels;        // argmax of each a_i
};

struct SoftBeamOutput {
  Tensor value;  // scalar objective
  std::vector<SoftBeamStep> trace;
};

namespace detail {

inline std::size_t argmax_row(const Tensor& m, std::size_t r) {
  const std::size_t c = m.cols();
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (m.at(r, j) > m.at(r, best)) best = j;
  }
  return best;
}

inline void check_soft_options(const SoftBeamOptions& opt) {
  if (opt.beam_size < 1) throw ContractError("beam size must be at least 1");
  if (!(opt.alpha > 0.0)) throw ContractError("alpha must be positive");
}

// Runs the relaxed search. `step_costs` (D~_t per step) drives the loss
// accumulator when non-empty; with `augment` it is also added to the scores.
inline std::vector<SoftBeamStep> soft_beam_run(const EncodedInput& enc, const TaggerModel& model,
                                               const SoftBeamOptions& opt,
                                               const std::vector<std::vector<double>>& step_costs,
                                               bool augment) {
  check_soft_options(opt);
  const std::size_t k = opt.beam_size;
  const std::size_t vocab = model.sizes.labels;
  const std::size_t steps = enc.length();
  const bool track_loss = !step_costs.empty();

  LstmState state = decoder_start(model, enc, k);
  std::vector<double> init(k, kInactiveScore);
  init[0] = 0.0;
  Tensor scores = Tensor::vector(std::move(init));
  Tensor losses = Tensor::zeros({k});
  const Tensor embeddings = slice_rows(model.label_embedding, 0, vocab);

  std::vector<SoftBeamStep> trace;
  trace.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    SoftBeamStep step;
    auto cand = add(local_scores(state.h, enc.rows(t, k), model), broadcast_cols(scores, vocab));
    Tensor step_cost;
    if (track_loss) {
      step_cost = Tensor::vector(step_costs[t]);
      if (augment) cand = add(cand, broadcast_rows(step_cost, k));
    }
    auto sel = continuous_top_k_argmax(cand, k, opt.alpha, opt.max_gradient);
    auto back = soft_backpointers(sel);
    auto contrib = vocab_contributions(sel);

    scores = reshape(matmul(sel.stacked, reshape(cand, {k * vocab, 1})), {k});
    if (track_loss) {
      losses = reshape(add(matmul(contrib, reshape(step_cost, {vocab, 1})),
                           matmul(back, reshape(losses, {k, 1}))),
                       {k});
    }
    if (t + 1 < steps) {
      LstmState mixed{matmul(back, state.h), matmul(back, state.c)};
      state = recur(mixed, matmul(contrib, embeddings), enc.rows(t + 1, k), model);
    }

    for (std::size_t i = 0; i < k; ++i) {
      step.map_backpointers.push_back(argmax_row(back, i));
      step.map_labels.push_back(argmax_row(contrib, i));
    }
    step.candidate_scores = std::move(cand);
    step.backpointers = std::move(back);
    step.contributions = std::move(contrib);
    step.scores = scores;
    step.losses = losses;
    trace.push_back(std::move(step));
  }
  return trace;
}

inline std::vector<std::vector<double>> gold_step_costs(std::span<const std::size_t> gold,
                                                        const CostFunction& cost) {
  std::vector<std::vector<double>> out;
  out.reserve(gold.size());
  for (auto g : gold) out.push_back(cost.local_costs(g));
  return out;
}

inline void check_gold(const EncodedInput& enc, std::span<const std::size_t> gold,
                       const TaggerModel& model) {
  if (gold.size() != enc.length()) {
    throw InputError("gold length " + std::to_string(gold.size()) + " differs from input length " +
                     std::to_string(enc.length()));
  }
  for (auto g : gold) {
    if (g >= model.sizes.labels) throw VocabularyError("gold label id out of range");
  }
}

}  // namespace detail

// Relaxed direct loss: L = peaked-softmax_alpha(s_T) . D_T.
inline SoftBeamOutput soft_beam_forward(const EncodedInput& enc, std::span<const std::size_t> gold,
                                        const TaggerModel& model, const SoftBeamOptions& opt,
                                        const CostFunction& cost) {
  detail::check_gold(enc, gold, model);
  auto trace = detail::soft_beam_run(enc, model, opt, detail::gold_step_costs(gold, cost), false);
  const auto& last = trace.back();
  auto value = dot(softmax_scaled(last.scores, opt.alpha), last.losses);
  return {std::move(value), std::move(trace)};
}

inline SoftBeamOutput soft_beam_forward(std::span<const std::size_t> tokens,
                                        std::span<const std::size_t> gold,
                                        const TaggerModel& model, const SoftBeamOptions& opt,
                                        const CostFunction& cost) {
  if (tokens.size() != gold.size()) throw InputError("input and gold lengths differ");
  return soft_beam_forward(encode(tokens, model), gold, model, opt, cost);
}

// Relaxed structured hinge: the search runs on f + d, its soft maximum
// s_max = peaked-softmax_alpha(s_T) . s_T is compared against the
// teacher-forced gold score, and the result is max(0, s_max - s(y*)).
inline SoftBeamOutput soft_hinge_forward(const EncodedInput& enc, std::span<const std::size_t> gold,
                                         const TaggerModel& model, const SoftBeamOptions& opt,
                                         const CostFunction& cost) {
  detail::check_gold(enc, gold, model);
  auto trace = detail::soft_beam_run(enc, model, opt, detail::gold_step_costs(gold, cost), true);
  const auto& s_final = trace.back().scores;
  auto s_max = dot(softmax_scaled(s_final, opt.alpha), s_final);
  auto value = maximum(sub(s_max, sequence_score(enc, gold, model)), 0.0);
  return {std::move(value), std::move(trace)};
}

inline SoftBeamOutput soft_hinge_forward(std::span<const std::size_t> tokens,
                                         std::span<const std::size_t> gold,
                                         const TaggerModel& model, const SoftBeamOptions& opt,
                                         const CostFunction& cost) {
  if (tokens.size() != gold.size()) throw InputError("input and gold lengths differ");
  return soft_hinge_forward(encode(tokens, model), gold, model, opt, cost);
}

// Soft forward pass driving states, scores and embeddings, followed by a
// trace of the MAP backpointers from the highest-scoring final element.
inline DecodeResult soft_beam_decode(const EncodedInput& enc, const TaggerModel& model,
                                     const SoftBeamOptions& opt) {
  NoGradGuard no_grad;
  auto trace = detail::soft_beam_run(enc, model, opt, {}, false);
  const auto& final_scores = trace.back().scores;
  std::size_t i = 0;
  for (std::size_t j = 1; j < final_scores.size(); ++j) {
    if (final_scores[j] > final_scores[i]) i = j;
  }
  DecodeResult out;
  out.score = final_scores[i];
  out.labels.resize(trace.size());
  for (std::size_t t = trace.size(); t-- > 0;) {
    out.labels[t] = trace[t].map_labels[i];
    i = trace[t].map_backpointers[i];
  }
  return out;
}

inline DecodeResult soft_beam_decode(std::span<const std::size_t> tokens, const TaggerModel& model,
                                     const SoftBeamOptions& opt) {
  NoGradGuard no_grad;
  return soft_beam_decode(encode(tokens, model), model, opt);
}

}  // namespace softbeam
