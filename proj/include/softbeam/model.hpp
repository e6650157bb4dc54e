#pragma once

// Encoder-decoder tagger: bidirectional LSTM encoder over input embeddings,
// LSTM decoder over label embeddings, and a fixed position-aligned attention
// that hands decoder step t the encoder context of input position t.
//
// Decoder step t sees the concatenation [h_t ; c_t] in the output scorer and
// [e_t ; c_t] as the recurrence input, where c_t = [fwd_t ; bwd_t].

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "softbeam/autodiff.hpp"
#include "softbeam/random.hpp"

namespace softbeam {

struct ModelSizes {
  std::size_t input_vocab = 0;  // includes the reserved unknown-token id
  std::size_t labels = 0;       // |V|, not counting the start symbol
  std::size_t input_embedding = 16;
  std::size_t label_embedding = 8;
  std::size_t hidden = 64;

  bool operator==(const ModelSizes&) const = default;
};

// Weights of one LSTM layer. Gate blocks along the 4H axis are ordered
// input, forget, candidate, output.
struct LstmParams {
  Tensor input_weight;   // [in x 4H]
  Tensor hidden_weight;  // [H x 4H]
  Tensor bias;           // [4H]
};

// Batched recurrent state, one row per hypothesis.
struct LstmState {
  Tensor h;  // [n x H]
  Tensor c;  // [n x H]
};

struct TaggerModel {
  ModelSizes sizes;
  Tensor input_embedding;  // [V_in x l_in]
  Tensor label_embedding;  // [(V+1) x l], last row is <s>
  LstmParams encoder_forward;
  LstmParams encoder_backward;
  LstmParams decoder;
  Tensor output_weight;  // [3H x V]
  Tensor output_bias;    // [V]

  std::size_t start_symbol() const { return sizes.labels; }

  // Fixed order; checkpoints and optimizer state rely on it.
  std::vector<std::pair<std::string, Tensor>> parameters() const {
    auto lstm = [](std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                   const LstmParams& p) {
      out.emplace_back(prefix + ".input_weight", p.input_weight);
      out.emplace_back(prefix + ".hidden_weight", p.hidden_weight);
      out.emplace_back(prefix + ".bias", p.bias);
    };
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("input_embedding", input_embedding);
    out.emplace_back("label_embedding", label_embedding);
    lstm(out, "encoder_forward", encoder_forward);
    lstm(out, "encoder_backward", encoder_backward);
    lstm(out, "decoder", decoder);
    out.emplace_back("output_weight", output_weight);
    out.emplace_back("output_bias", output_bias);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : parameters()) t.zero_grad();
  }

  // Deep copy with fresh leaves.
  TaggerModel clone() const {
    auto copy_leaf = [](const Tensor& t) {
      return Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                    t.requires_grad());
    };
    auto copy_lstm = [&](const LstmParams& p) {
      return LstmParams{copy_leaf(p.input_weight), copy_leaf(p.hidden_weight), copy_leaf(p.bias)};
    };
    TaggerModel m;
    m.sizes = sizes;
    m.input_embedding = copy_leaf(input_embedding);
    m.label_embedding = copy_leaf(label_embedding);
    m.encoder_forward = copy_lstm(encoder_forward);
    m.encoder_backward = copy_lstm(encoder_backward);
    m.decoder = copy_lstm(decoder);
    m.output_weight = copy_leaf(output_weight);
    m.output_bias = copy_leaf(output_bias);
    return m;
  }

  // Expected shape of every parameter, in parameters() order.
  static std::vector<Shape> expected_shapes(const ModelSizes& s) {
    const std::size_t h = s.hidden, g = 4 * s.hidden;
    return {
        {s.input_vocab, s.input_embedding},
        {s.labels + 1, s.label_embedding},
        {s.input_embedding, g}, {h, g}, {g},
        {s.input_embedding, g}, {h, g}, {g},
        {s.label_embedding + 2 * h, g}, {h, g}, {g},
        {3 * h, s.labels},
        {s.labels},
    };
  }

  void validate() const {
    if (sizes.labels < 2) throw ContractError("model needs at least 2 labels");
    if (sizes.hidden < 1) throw ContractError("hidden size must be at least 1");
    if (sizes.input_vocab < 1) throw ContractError("input vocabulary is empty");
    const auto shapes = expected_shapes(sizes);
    const auto params = parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].second.shape() != shapes[i]) {
        throw DimensionError("parameter " + params[i].first + " has shape " +
                             shape_string(params[i].second.shape()) + ", expected " +
                             shape_string(shapes[i]));
      }
    }
  }
};

// Uniform(-scale, scale) initialization in parameters() order, except the
// forget-gate bias blocks which start at `forget_bias`.
inline TaggerModel init_params(std::uint64_t seed, double scale, const ModelSizes& sizes,
                               double forget_bias = 1.0) {
  if (!(scale > 0.0)) throw ContractError("init scale must be positive");
  if (sizes.labels < 2) throw ContractError("model needs at least 2 labels");
  if (sizes.hidden < 1) throw ContractError("hidden size must be at least 1");
  Rng rng(seed);
  auto leaf = [&](Shape shape) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-scale, scale);
    return Tensor(std::move(shape), std::move(v), true);
  };
  const auto shapes = TaggerModel::expected_shapes(sizes);
  TaggerModel m;
  m.sizes = sizes;
  std::size_t i = 0;
  m.input_embedding = leaf(shapes[i++]);
  m.label_embedding = leaf(shapes[i++]);
  for (LstmParams* p : {&m.encoder_forward, &m.encoder_backward, &m.decoder}) {
    p->input_weight = leaf(shapes[i++]);
    p->hidden_weight = leaf(shapes[i++]);
    p->bias = leaf(shapes[i++]);
    auto b = p->bias.mutable_values();
    for (std::size_t j = sizes.hidden; j < 2 * sizes.hidden; ++j) b[j] = forget_bias;
  }
  m.output_weight = leaf(shapes[i++]);
  m.output_bias = leaf(shapes[i++]);
  return m;
}

// ---------------------------------------------------------------------------
// Forward building blocks

// One LSTM step for a batch of rows. `projected_input` is x * W_input, [n x 4H].
inline LstmState lstm_step(const LstmParams& p, const Tensor& projected_input,
                           const LstmState& state) {
  const std::size_t hd = p.hidden_weight.shape()[0];
  auto gates = add_row(add(projected_input, matmul(state.h, p.hidden_weight)), p.bias);
  auto in = sigmoid(slice_cols(gates, 0, hd));
  auto forget = sigmoid(slice_cols(gates, hd, 2 * hd));
  auto cand = tanh(slice_cols(gates, 2 * hd, 3 * hd));
  auto out = sigmoid(slice_cols(gates, 3 * hd, 4 * hd));
  auto c = add(mul(forget, state.c), mul(in, cand));
  auto h = mul(out, tanh(c));
  return {std::move(h), std::move(c)};
}

inline LstmState zero_state(std::size_t rows, std::size_t hidden) {
  return {Tensor::zeros({rows, hidden}), Tensor::zeros({rows, hidden})};
}

struct EncodedInput {
  Tensor context;  // [T x 2H], row t = [fwd_t ; bwd_t]

  std::size_t length() const { return context.rows(); }

  // Context of position t repeated for n hypotheses: [n x 2H].
  Tensor rows(std::size_t t, std::size_t n) const {
    return gather_rows(context, std::vector<std::size_t>(n, t));
  }
};

inline EncodedInput encode(std::span<const std::size_t> tokens, const TaggerModel& model) {
  if (tokens.empty()) throw InputError("cannot encode an empty sequence");
  for (auto id : tokens) {
    if (id >= model.sizes.input_vocab) {
      throw VocabularyError("input id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(model.sizes.input_vocab));
    }
  }
  const std::size_t n = tokens.size();
  const std::size_t hd = model.sizes.hidden;
  auto x = gather_rows(model.input_embedding, {tokens.begin(), tokens.end()});

  auto run = [&](const LstmParams& p, bool reverse) {
    auto projected = matmul(x, p.input_weight);
    std::vector<Tensor> hs(n);
    LstmState state = zero_state(1, hd);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      state = lstm_step(p, slice_rows(projected, t, t + 1), state);
      hs[t] = state.h;
    }
    return concat_rows(hs);
  };
  auto fwd = run(model.encoder_forward, false);
  auto bwd = run(model.encoder_backward, true);
  return {concat_cols({fwd, bwd})};
}

// f(h, .) for a batch of decoder states: [n x V].
inline Tensor local_scores(const Tensor& h, const Tensor& context_rows, const TaggerModel& model) {
  return add_row(matmul(concat_cols({h, context_rows}), model.output_weight), model.output_bias);
}

// Single-state form: h [H], c_t [2H] -> scores [V].
inline Tensor local_score(const Tensor& h, const Tensor& context, const TaggerModel& model) {
  if (h.size() != model.sizes.hidden || context.size() != 2 * model.sizes.hidden) {
    throw DimensionError("local_score: state or context has the wrong size");
  }
  auto scores = local_scores(reshape(h, {1, h.size()}), reshape(context, {1, context.size()}), model);
  return reshape(scores, {model.sizes.labels});
}

// r(h, e, c_next) for a batch: embeddings [n x l], context rows [n x 2H].
inline LstmState recur(const LstmState& state, const Tensor& embeddings,
                       const Tensor& context_rows, const TaggerModel& model) {
  auto x = concat_cols({embeddings, context_rows});
  return lstm_step(model.decoder, matmul(x, model.decoder.input_weight), state);
}

// Embedding rows for label ids (the start symbol is id V).
inline Tensor label_embeddings(const TaggerModel& model, std::vector<std::size_t> labels) {
  return gather_rows(model.label_embedding, std::move(labels));
}

// Decoder state for step 0 of n identical hypotheses: r(0, embedding(<s>), c_0).
inline LstmState decoder_start(const TaggerModel& model, const EncodedInput& enc, std::size_t n) {
  return recur(zero_state(n, model.sizes.hidden),
               label_embeddings(model, std::vector<std::size_t>(n, model.start_symbol())),
               enc.rows(0, n), model);
}

// Teacher-forced decoder rollout: per-step score rows [1 x V] given the
// label prefix `labels` (gold labels for training, any path for rescoring).
inline std::vector<Tensor> teacher_forced_scores(const EncodedInput& enc,
                                                 std::span<const std::size_t> labels,
                                                 const TaggerModel& model) {
  if (labels.size() != enc.length()) {
    throw InputError("label sequence length " + std::to_string(labels.size()) +
                     " differs from input length " + std::to_string(enc.length()));
  }
  for (auto y : labels) {
    if (y >= model.sizes.labels) throw VocabularyError("label id out of range");
  }
  std::vector<Tensor> out;
  out.reserve(labels.size());
  LstmState state = decoder_start(model, enc, 1);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    out.push_back(local_scores(state.h, enc.rows(t, 1), model));
    if (t + 1 < labels.size()) {
      state = recur(state, label_embeddings(model, {labels[t]}), enc.rows(t + 1, 1), model);
    }
  }
  return out;
}

// s(y) = sum_t f(h_t, y_t) along a teacher-forced rollout of y.
inline Tensor sequence_score(const EncodedInput& enc, std::span<const std::size_t> labels,
                             const TaggerModel& model) {
  auto steps = teacher_forced_scores(enc, labels, model);
  std::vector<Tensor> picked;
  picked.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) picked.push_back(element(steps[t], labels[t]));
  Tensor total = picked[0];
  for (std::size_t t = 1; t < picked.size(); ++t) total = add(total, picked[t]);
  return total;
}

}  // namespace softbeam
