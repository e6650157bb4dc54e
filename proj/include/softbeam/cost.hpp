#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softbeam/error.hpp"

namespace softbeam {

// Per-step decomposable cost d(w; gold).
//
// hamming:          0 if w == gold, else 1.
// weighted_hamming: 0 if w == gold; `default_penalty` when w is the default
//                   label ('O') and gold is not; `other_penalty` otherwise.
struct CostFunction {
  enum class Kind { hamming, weighted_hamming, zero };

  Kind kind = Kind::hamming;
  std::size_t labels = 0;
  std::optional<std::size_t> default_label;
  double default_penalty = 2.0;
  double other_penalty = 1.0;

  static CostFunction hamming(std::size_t labels) {
    return {Kind::hamming, labels, std::nullopt, 2.0, 1.0};
  }
  static CostFunction weighted_hamming(std::size_t labels, std::size_t default_label,
                                       double default_penalty = 2.0) {
    return {Kind::weighted_hamming, labels, default_label, default_penalty, 1.0};
  }
  // d == 0 everywhere; used for plain (not cost-augmented) search and fixtures.
  static CostFunction zero(std::size_t labels) {
    return {Kind::zero, labels, std::nullopt, 0.0, 0.0};
  }

  double operator()(std::size_t predicted, std::size_t gold) const {
    if (predicted >= labels || gold >= labels) {
      throw VocabularyError("cost: label id out of range");
    }
    if (kind == Kind::zero || predicted == gold) return 0.0;
    if (kind == Kind::weighted_hamming && predicted == default_label) return default_penalty;
    return other_penalty;
  }

  // D~_t: cost of every candidate label against gold label g.
  std::vector<double> local_costs(std::size_t gold) const {
    std::vector<double> out(labels);
    for (std::size_t w = 0; w < labels; ++w) out[w] = (*this)(w, gold);
    return out;
  }

  double max_local_cost() const {
    if (kind == Kind::zero) return 0.0;
    return kind == Kind::weighted_hamming ? std::max(default_penalty, other_penalty)
                                          : other_penalty;
  }
};

inline double local_cost(const CostFunction& cost, std::size_t predicted, std::size_t gold) {
  return cost(predicted, gold);
}

// L(y, y*) = sum_t d(y_t; y*_t).
inline double direct_loss(std::span<const std::size_t> predicted,
                          std::span<const std::size_t> gold, const CostFunction& cost) {
  if (predicted.size() != gold.size()) {
    throw InputError("direct_loss: predicted length " + std::to_string(predicted.size()) +
                     " differs from gold length " + std::to_string(gold.size()));
  }
  double total = 0.0;
  for (std::size_t t = 0; t < gold.size(); ++t) total += cost(predicted[t], gold[t]);
  return total;
}

}  // namespace softbeam
