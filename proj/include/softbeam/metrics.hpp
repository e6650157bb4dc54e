#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softbeam/error.hpp"

namespace softbeam {

struct LabelCounts {
  std::size_t support = 0;    // gold occurrences
  std::size_t predicted = 0;
  std::size_t correct = 0;

  double precision() const { return predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return support ? static_cast<double>(correct) / static_cast<double>(support) : 0.0; }
  double f1() const {
    const double d = static_cast<double>(support + predicted);
    return d > 0 ? 2.0 * static_cast<double>(correct) / d : 0.0;
  }
};

struct Metrics {
  std::size_t tokens = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  // Label-level F1 averaged over every label other than the default one that
  // occurs in the gold or the predictions.
  double macro_f1 = 0.0;
  std::vector<LabelCounts> per_label;
};

// `predicted` and `gold` are per-sentence label id sequences.
inline Metrics evaluate(const std::vector<std::vector<std::size_t>>& predicted,
                        const std::vector<std::vector<std::size_t>>& gold, std::size_t labels,
                        std::optional<std::size_t> default_label = std::nullopt) {
  if (predicted.size() != gold.size()) {
    throw InputError("evaluate: " + std::to_string(predicted.size()) + " predicted sentences vs " +
                     std::to_string(gold.size()) + " gold sentences");
  }
  Metrics m;
  m.per_label.assign(labels, {});
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i].size() != gold[i].size()) {
      throw InputError("evaluate: sentence " + std::to_string(i) + " has " + std::to_string(predicted[i].size()) +
                       " predicted labels vs " + std::to_string(gold[i].size()) + " gold labels");
    }
    for (std::size_t t = 0; t < gold[i].size(); ++t) {
      const auto p = predicted[i][t], g = gold[i][t];
      if (p >= labels || g >= labels) throw VocabularyError("evaluate: label id out of range");
      ++m.tokens;
      ++m.per_label[g].support;
      ++m.per_label[p].predicted;
      if (p == g) {
        ++m.correct;
        ++m.per_label[g].correct;
      }
    }
  }
  m.accuracy = m.tokens ? static_cast<double>(m.correct) / static_cast<double>(m.tokens) : 0.0;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t l = 0; l < labels; ++l) {
    if (default_label && l == *default_label) continue;
    const auto& c = m.per_label[l];
    if (c.support == 0 && c.predicted == 0) continue;
    total += c.f1();
    ++counted;
  }
  // Nothing but the default label anywhere means every prediction was right.
  m.macro_f1 = counted ? total / static_cast<double>(counted) : (m.tokens ? 1.0 : 0.0);
  return m;
}

}  // namespace softbeam
