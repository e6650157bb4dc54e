#pragma once

#include <optional>
#include <string>
#include <vector>

#include "softbeam/data.hpp"
#include "softbeam/hard_beam.hpp"
#include "softbeam/metrics.hpp"
#include "softbeam/soft_beam.hpp"

namespace softbeam {

enum class Decoder { greedy, hard_beam, soft_beam };

inline const char* decoder_name(Decoder d) {
  switch (d) {
    case Decoder::greedy: return "greedy";
    case Decoder::hard_beam: return "hard_beam";
    case Decoder::soft_beam: return "soft_beam";
  }
  return "?";
}

inline Decoder parse_decoder(const std::string& s) {
  if (s == "greedy") return Decoder::greedy;
  if (s == "hard_beam") return Decoder::hard_beam;
  if (s == "soft_beam") return Decoder::soft_beam;
  throw ConfigError("unknown decoder '" + s + "' (expected greedy, hard_beam or soft_beam)");
}

struct DecodeOptions {
  Decoder decoder = Decoder::hard_beam;
  std::size_t beam_size = 3;
  double alpha = 1.0;  // soft_beam only
};

inline std::vector<std::size_t> decode(std::span<const std::size_t> tokens, const TaggerModel& model,
                                       const DecodeOptions& opt) {
  NoGradGuard no_grad;
  auto enc = encode(tokens, model);
  switch (opt.decoder) {
    case Decoder::greedy: return greedy_decode(enc, model).labels;
    case Decoder::hard_beam: return beam_search(enc, model, opt.beam_size).best.labels;
    case Decoder::soft_beam: return soft_beam_decode(enc, model, {opt.beam_size, opt.alpha}).labels;
  }
  return {};
}

inline std::vector<std::vector<std::size_t>> decode_corpus(const TaggedCorpus& corpus, const TaggerModel& model,
                                                           const DecodeOptions& opt) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.push_back(decode(s.tokens, model, opt));
  return out;
}

inline std::vector<std::vector<std::size_t>> gold_labels(const TaggedCorpus& corpus) {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.sentences) out.push_back(s.labels);
  return out;
}

inline Metrics evaluate_decoder(const TaggedCorpus& corpus, const TaggerModel& model, const DecodeOptions& opt,
                                std::optional<std::size_t> default_label = std::nullopt) {
  return evaluate(decode_corpus(corpus, model, opt), gold_labels(corpus), corpus.labels.size(), default_label);
}

}  // namespace softbeam
