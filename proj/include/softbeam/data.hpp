#pragma once

// Tagged corpora: vocabularies, the token<TAB>label file format, synthetic
// task generators and hash-based splits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "softbeam/error.hpp"
#include "softbeam/random.hpp"

namespace softbeam {

inline constexpr const char* kUnknownToken = "<unk>";
inline constexpr const char* kStartLabel = "<s>";

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names) {
    for (auto& n : names) add(n);
  }

  std::size_t add(const std::string& name) {
    auto [it, inserted] = index_.emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t id(const std::string& name) const {
    auto found = find(name);
    if (!found) throw VocabularyError("unknown symbol '" + name + "'");
    return *found;
  }

  const std::string& name(std::size_t id) const {
    if (id >= names_.size()) throw VocabularyError("symbol id " + std::to_string(id) + " out of range");
    return names_[id];
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("vocab");
    for (const auto& n : names_) {
      h = fnv1a(n, h);
      h = fnv1a(std::string_view("\n", 1), h);
    }
    return h;
  }

  bool operator==(const Vocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

struct Sentence {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> labels;
};

// Input id 0 is always <unk>. The label vocabulary holds output labels only;
// the decoder's start symbol <s> takes id labels.size() and may not appear in
// data.
struct TaggedCorpus {
  std::vector<Sentence> sentences;
  Vocabulary inputs{{kUnknownToken}};
  Vocabulary labels;

  std::size_t size() const { return sentences.size(); }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.tokens.size();
    return n;
  }

  void validate() const {
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const auto& s = sentences[i];
      if (s.tokens.size() != s.labels.size()) {
        throw InputError("sentence " + std::to_string(i) + " has " + std::to_string(s.tokens.size()) +
                         " tokens but " + std::to_string(s.labels.size()) + " labels");
      }
      for (auto t : s.tokens) {
        if (t >= inputs.size()) throw VocabularyError("sentence " + std::to_string(i) + ": token id out of range");
      }
      for (auto l : s.labels) {
        if (l >= labels.size()) throw VocabularyError("sentence " + std::to_string(i) + ": label id out of range");
      }
    }
  }

  TaggedCorpus subset(const std::vector<std::size_t>& indices) const {
    TaggedCorpus out;
    out.inputs = inputs;
    out.labels = labels;
    out.sentences.reserve(indices.size());
    for (auto i : indices) out.sentences.push_back(sentences.at(i));
    return out;
  }
};

// ---------------------------------------------------------------------------
// TSV

struct RawSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;  // empty when the file has no label column
  std::size_t first_line = 0;       // 1-based
};

// One "token<TAB>label" (or bare "token" when labels are optional) per line,
// blank lines between sentences.
inline std::vector<RawSentence> read_tsv(std::istream& in, bool labels_required = true) {
  std::vector<RawSentence> out;
  RawSentence current;
  std::string line;
  std::size_t lineno = 0;
  std::optional<bool> has_labels;
  auto flush = [&] {
    if (!current.tokens.empty()) out.push_back(std::move(current));
    current = RawSentence{};
  };
  auto fail = [&](const std::string& what) {
    throw ParseError("line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    const bool labelled = tab != std::string::npos;
    if (labels_required && !labelled) fail("expected token<TAB>label");
    if (has_labels && *has_labels != labelled) fail("inconsistent number of columns");
    has_labels = labelled;
    std::string token = labelled ? line.substr(0, tab) : line;
    if (token.empty()) fail("empty token");
    if (current.tokens.empty()) current.first_line = lineno;
    current.tokens.push_back(std::move(token));
    if (labelled) {
      std::string label = line.substr(tab + 1);
      if (label.find('\t') != std::string::npos) fail("more than two columns");
      if (label.empty()) fail("empty label");
      if (label == kStartLabel) fail("label " + label + " is reserved");
      current.labels.push_back(std::move(label));
    }
  }
  flush();
  return out;
}

inline std::vector<RawSentence> read_tsv_file(const std::filesystem::path& path,
                                              bool labels_required = true) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return read_tsv(in, labels_required);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Maps raw sentences to ids. With `grow`, unseen symbols are added in
// first-seen order; otherwise unseen tokens become <unk> and unseen labels are
// a vocabulary error.
inline std::vector<Sentence> index_sentences(const std::vector<RawSentence>& raw, Vocabulary& inputs,
                                             Vocabulary& labels, bool grow_inputs, bool grow_labels) {
  std::vector<Sentence> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    Sentence s;
    for (const auto& t : r.tokens) {
      if (grow_inputs) {
        s.tokens.push_back(inputs.add(t));
      } else {
        s.tokens.push_back(inputs.find(t).value_or(0));
      }
    }
    for (const auto& l : r.labels) {
      if (grow_labels) {
        s.labels.push_back(labels.add(l));
      } else {
        auto id = labels.find(l);
        if (!id) throw VocabularyError("line " + std::to_string(r.first_line) + ": unknown label '" + l + "'");
        s.labels.push_back(*id);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline TaggedCorpus load_tsv(const std::filesystem::path& path) {
  TaggedCorpus c;
  c.sentences = index_sentences(read_tsv_file(path), c.inputs, c.labels, true, true);
  return c;
}

inline void write_tsv(std::ostream& out, const TaggedCorpus& c) {
  for (std::size_t i = 0; i < c.sentences.size(); ++i) {
    if (i > 0) out << '\n';
    const auto& s = c.sentences[i];
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      out << c.inputs.name(s.tokens[t]) << '\t' << c.labels.name(s.labels[t]) << '\n';
    }
  }
}

inline void write_tsv(const std::filesystem::path& path, const TaggedCorpus& c) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_tsv(out, c);
}

// ---------------------------------------------------------------------------
// Splits

enum class Split { train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

// 80/10/10 by a hash of (seed, sentence index).
inline Split split_of(std::size_t index, std::uint64_t seed) {
  const auto bucket = mix_seed(seed ^ 0x5eedULL, index) % 10;
  if (bucket < 8) return Split::train;
  return bucket == 8 ? Split::dev : Split::test;
}

struct CorpusSplits {
  TaggedCorpus train, dev, test;
};

inline CorpusSplits split_corpus(const TaggedCorpus& all, std::uint64_t seed) {
  std::vector<std::size_t> idx[3];
  for (std::size_t i = 0; i < all.size(); ++i) idx[static_cast<int>(split_of(i, seed))].push_back(i);
  return {all.subset(idx[0]), all.subset(idx[1]), all.subset(idx[2])};
}

// ---------------------------------------------------------------------------
// Long-range task
//
// Each input token x has one label per group g: y_t = table[x_t][g_t] where
// g_t is the group (label id mod groups) of the label `lag` positions back,
// and g_t = 0 for t < lag. Labels follow a Zipf law, so the label set has a
// long tail. The three labels of a token are distinct.

struct LongRangeParams {
  std::size_t sentences = 5000;
  std::size_t min_length = 5;
  std::size_t max_length = 20;
  std::size_t input_vocab = 300;
  std::size_t labels = 50;
  std::size_t groups = 3;
  std::size_t lag = 3;
  double zipf_exponent = 1.0;
  double token_zipf_exponent = 1.0;  // 0: uniform input tokens
  double noise = 0.0;  // chance of swapping y_t for another label of the same group
};

struct LongRangeRules {
  std::size_t groups = 3;
  std::size_t lag = 3;
  std::vector<std::vector<std::size_t>> table;  // [input word][group] -> label
};

namespace detail {

inline std::size_t sample_weighted(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  return static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                  cumulative.begin());
}

inline std::size_t sample_length(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  std::string n = std::to_string(i);
  return prefix + std::string(n.size() < width ? width - n.size() : 0, '0') + n;
}

}  // namespace detail

inline LongRangeRules longrange_rules(const LongRangeParams& p, std::uint64_t seed) {
  if (p.input_vocab < 2 || p.labels < 2 || p.groups < 1 || p.groups > p.labels) {
    throw ContractError("gen_longrange: sizes must be at least 2 and groups <= labels");
  }
  Rng rng(mix_seed(seed, 1));
  std::vector<double> cumulative(p.labels);
  double total = 0.0;
  for (std::size_t r = 0; r < p.labels; ++r) {
    total += std::pow(static_cast<double>(r + 1), -p.zipf_exponent);
    cumulative[r] = total;
  }
  // Zipf rank r is label perm[r], so frequent labels spread over groups.
  std::vector<std::size_t> perm(p.labels);
  for (std::size_t i = 0; i < p.labels; ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());

  LongRangeRules rules{p.groups, p.lag, {}};
  rules.table.assign(p.input_vocab, std::vector<std::size_t>(p.groups));
  for (auto& row : rules.table) {
    for (std::size_t g = 0; g < p.groups; ++g) {
      std::size_t y;
      do {
        y = perm[detail::sample_weighted(rng, cumulative)];
      } while (std::find(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(g), y) !=
               row.begin() + static_cast<std::ptrdiff_t>(g));
      row[g] = y;
    }
  }
  return rules;
}

// The rule-following tagger. `words` are generator word indices (input id - 1).
inline std::vector<std::size_t> longrange_oracle(const LongRangeRules& rules,
                                                 const std::vector<std::size_t>& words) {
  std::vector<std::size_t> y(words.size());
  for (std::size_t t = 0; t < words.size(); ++t) {
    const std::size_t g = t < rules.lag ? 0 : y[t - rules.lag] % rules.groups;
    y[t] = rules.table.at(words[t]).at(g);
  }
  return y;
}

inline TaggedCorpus gen_longrange(const LongRangeParams& p, std::uint64_t seed) {
  if (p.min_length < 1 || p.max_length < p.min_length) throw ContractError("gen_longrange: bad length range");
  const auto rules = longrange_rules(p, seed);
  TaggedCorpus c;
  for (std::size_t w = 0; w < p.input_vocab; ++w) c.inputs.add(detail::padded("w", w, 2));
  for (std::size_t y = 0; y < p.labels; ++y) c.labels.add(detail::padded("L", y, 2));
  std::vector<double> token_cdf(p.input_vocab);
  double total = 0.0;
  for (std::size_t r = 0; r < p.input_vocab; ++r) {
    total += std::pow(static_cast<double>(r + 1), -p.token_zipf_exponent);
    token_cdf[r] = total;
  }
  Rng rng(mix_seed(seed, 2));
  c.sentences.reserve(p.sentences);
  for (std::size_t i = 0; i < p.sentences; ++i) {
    const std::size_t n = detail::sample_length(rng, p.min_length, p.max_length);
    std::vector<std::size_t> words(n);
    for (auto& w : words) w = detail::sample_weighted(rng, token_cdf);
    Sentence s;
    s.labels = longrange_oracle(rules, words);
    if (p.noise > 0.0) {
      // Same-group swaps keep the dependency chain of later labels intact.
      for (std::size_t t = 0; t < n; ++t) {
        if (!rng.bernoulli(p.noise)) continue;
        const std::size_t g = s.labels[t] % rules.groups;
        const std::size_t members = (p.labels - g + rules.groups - 1) / rules.groups;
        s.labels[t] = g + rules.groups * static_cast<std::size_t>(rng.below(members));
      }
    }
    for (auto w : words) s.tokens.push_back(w + 1);
    c.sentences.push_back(std::move(s));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Skewed task
//
// Mostly 'O'. A trigger token announces an entity type and is followed by a
// span of 1-3 name tokens tagged B (I) E; name tokens are shared across types,
// and also occur untriggered as 'O' distractors, so the tag depends on the
// trigger up to three positions back. A weak trigger looks like any other but
// its span is an entity only with probability weak_entity_prob and 'O'
// otherwise, so those tokens are ambiguous.

struct SkewedParams {
  std::size_t sentences = 3750;
  std::size_t min_length = 5;
  std::size_t max_length = 20;
  std::size_t entity_types = 3;
  std::size_t triggers_per_type = 3;
  std::size_t name_tokens = 20;
  std::size_t filler_tokens = 40;
  double p_default = 0.85;
  double distractor_rate = 0.1;
  double weak_trigger_share = 0.5;  // share of spans opened by a weak trigger
  double weak_entity_prob = 0.3;
};

inline TaggedCorpus gen_skewed(const SkewedParams& p, std::uint64_t seed) {
  if (!(p.p_default > 0.5 && p.p_default < 1.0)) throw ContractError("gen_skewed: p_default must be in (0.5, 1)");
  if (p.entity_types < 1 || p.triggers_per_type < 1 || p.name_tokens < 1 || p.filler_tokens < 1) {
    throw ContractError("gen_skewed: sizes must be positive");
  }
  if (p.min_length < 1 || p.max_length < p.min_length) throw ContractError("gen_skewed: bad length range");
  if (!(p.weak_trigger_share >= 0.0 && p.weak_trigger_share <= 1.0) ||
      !(p.weak_entity_prob >= 0.0 && p.weak_entity_prob <= 1.0)) {
    throw ContractError("gen_skewed: weak trigger share and entity probability must be in [0, 1]");
  }
  static const char* kTypes[] = {"PER", "LOC", "ORG", "MISC", "EVT", "DATE", "NUM", "PRD"};
  if (p.entity_types > std::size(kTypes)) throw ContractError("gen_skewed: at most 8 entity types");

  TaggedCorpus c;
  c.labels.add("O");
  for (std::size_t e = 0; e < p.entity_types; ++e) {
    for (const char* part : {"B-", "I-", "E-"}) c.labels.add(std::string(part) + kTypes[e]);
  }
  std::vector<std::vector<std::size_t>> triggers(p.entity_types), weak(p.entity_types);
  for (std::size_t e = 0; e < p.entity_types; ++e) {
    for (std::size_t j = 0; j < p.triggers_per_type; ++j) {
      triggers[e].push_back(c.inputs.add(std::string("t") + kTypes[e] + std::to_string(j)));
      weak[e].push_back(c.inputs.add(std::string("w") + kTypes[e] + std::to_string(j)));
    }
  }
  std::vector<std::size_t> names, fillers;
  for (std::size_t j = 0; j < p.name_tokens; ++j) names.push_back(c.inputs.add(detail::padded("n", j, 2)));
  for (std::size_t j = 0; j < p.filler_tokens; ++j) fillers.push_back(c.inputs.add(detail::padded("f", j, 2)));

  // A span costs 1 + L tokens, L with mean 2, and is an entity with
  // probability r, so the entity share is 2qr / (1 + 2q) for trigger
  // probability q.
  const double r = 1.0 - p.weak_trigger_share * (1.0 - p.weak_entity_prob);
  const double share = 1.0 - p.p_default;
  if (r <= share) throw ContractError("gen_skewed: weak triggers leave too few entities for p_default");
  const double q = share / (2.0 * (r - share));
  Rng rng(mix_seed(seed, 3));
  c.sentences.reserve(p.sentences);
  for (std::size_t i = 0; i < p.sentences; ++i) {
    const std::size_t n = detail::sample_length(rng, p.min_length, p.max_length);
    Sentence s;
    while (s.tokens.size() < n) {
      if (s.tokens.size() + 1 < n && rng.bernoulli(q)) {
        const std::size_t e = static_cast<std::size_t>(rng.below(p.entity_types));
        const bool is_weak = rng.bernoulli(p.weak_trigger_share);
        const bool entity = !is_weak || rng.bernoulli(p.weak_entity_prob);
        s.tokens.push_back((is_weak ? weak : triggers)[e][rng.below(p.triggers_per_type)]);
        s.labels.push_back(0);
        const std::size_t len = std::min<std::size_t>(1 + rng.below(3), n - s.tokens.size());
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t part = j == 0 ? 0 : (j + 1 == len ? 2 : 1);
          s.tokens.push_back(names[rng.below(p.name_tokens)]);
          s.labels.push_back(entity ? 1 + 3 * e + part : 0);
        }
      } else if (rng.bernoulli(p.distractor_rate)) {
        s.tokens.push_back(names[rng.below(p.name_tokens)]);
        s.labels.push_back(0);
      } else {
        s.tokens.push_back(fillers[rng.below(p.filler_tokens)]);
        s.labels.push_back(0);
      }
    }
    c.sentences.push_back(std::move(s));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Manifest written next to generated corpora.

inline nlohmann::json corpus_manifest(const std::string& generator, const nlohmann::json& params,
                                      std::uint64_t seed, const CorpusSplits& splits) {
  return {
      {"generator", generator},
      {"params", params},
      {"seed", seed},
      {"split_rule", "mix_seed(seed ^ 0x5eed, index) % 10: 0-7 train, 8 dev, 9 test"},
      {"sentences", {{"train", splits.train.size()}, {"dev", splits.dev.size()}, {"test", splits.test.size()}}},
      {"input_vocab_hash", hex64(splits.train.inputs.hash())},
      {"label_vocab_hash", hex64(splits.train.labels.hash())},
  };
}

}  // namespace softbeam
