#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "softbeam/cost.hpp"
#include "softbeam/data.hpp"
#include "softbeam/decoding.hpp"
#include "softbeam/model.hpp"
#include "softbeam/soft_beam.hpp"

namespace softbeam {

// -sum_t log softmax(f(h_t, .))[y*_t] with gold labels fed to the decoder.
inline Tensor ce_loss(const EncodedInput& enc, std::span<const std::size_t> gold, const TaggerModel& model) {
  auto steps = teacher_forced_scores(enc, gold, model);
  Tensor total = element(log_softmax(steps[0]), gold[0]);
  for (std::size_t t = 1; t < steps.size(); ++t) total = add(total, element(log_softmax(steps[t]), gold[t]));
  return neg(total);
}

inline Tensor ce_loss(std::span<const std::size_t> tokens, std::span<const std::size_t> gold,
                      const TaggerModel& model) {
  if (tokens.size() != gold.size()) throw InputError("input and gold lengths differ");
  return ce_loss(encode(tokens, model), gold, model);
}

// ---------------------------------------------------------------------------
// Alpha schedules

struct AlphaSchedule {
  enum class Kind { constant, geometric };
  Kind kind = Kind::constant;
  double alpha0 = 1.0;
  double ratio = 1.5;
  double alpha_max = 1000.0;

  static AlphaSchedule constant(double a) { return {Kind::constant, a, 1.0, a}; }
  static AlphaSchedule geometric(double a0, double ratio, double a_max) {
    return {Kind::geometric, a0, ratio, a_max};
  }

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ConfigError("alpha0 must be a positive number");
    if (kind == Kind::geometric) {
      if (!(ratio >= 1.0)) throw ConfigError("annealing ratio must be >= 1");
      if (!(alpha_max >= alpha0)) throw ConfigError("alpha_max must be >= alpha0");
    }
  }
};

inline double anneal_alpha(const AlphaSchedule& s, std::size_t epoch) {
  if (s.kind == AlphaSchedule::Kind::constant) return s.alpha0;
  const double a = s.alpha0 * std::pow(s.ratio, static_cast<double>(epoch));
  return std::isfinite(a) ? std::min(a, s.alpha_max) : s.alpha_max;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

using ParameterList = std::vector<std::pair<std::string, Tensor>>;

inline double global_grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Clips the global gradient norm to `clip_norm`, then applies one Adam
// update. Returns the norm before clipping.
inline double optimizer_step(ParameterList& params, AdamState& state, const AdamConfig& cfg) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) {
    for (const auto& [name, p] : params) {
      for (double g : p.grad()) {
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in " + name);
      }
    }
    throw DivergenceError("gradient norm overflow");
  }
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  const double scale = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto& p = params[j].second;
    auto w = p.mutable_values();
    auto g = p.grad();
    auto& m = state.m[j];
    auto& v = state.v[j];
    if (m.size() != w.size()) throw DimensionError("optimizer state does not match " + params[j].first);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop

enum class Objective { ce, soft_direct, soft_hinge };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::ce: return "ce";
    case Objective::soft_direct: return "soft_direct";
    case Objective::soft_hinge: return "soft_hinge";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "ce") return Objective::ce;
  if (s == "soft_direct") return Objective::soft_direct;
  if (s == "soft_hinge") return Objective::soft_hinge;
  throw ConfigError("unknown objective '" + s + "' (expected ce, soft_direct or soft_hinge)");
}

enum class StopMetric { accuracy, macro_f1 };

struct TrainConfig {
  Objective objective = Objective::ce;
  std::size_t beam_size = 3;
  AlphaSchedule schedule;
  std::size_t epochs = 50;
  AdamConfig adam;
  std::uint64_t seed = 1;
  double init_scale = 0.1;
  std::size_t patience = 0;  // epochs without dev improvement before stopping; 0 = never
  std::optional<Decoder> stop_decoder;  // default: greedy for ce, hard_beam otherwise
  StopMetric stop_metric = StopMetric::accuracy;
  std::vector<Decoder> report_decoders;  // extra dev decoders logged each epoch
  double decode_alpha = 1000.0;          // soft_beam decoding in reports
  MaxGradient max_gradient = MaxGradient::flow;
  bool allow_cold_start = false;

  Decoder selection_decoder() const {
    if (stop_decoder) return *stop_decoder;
    return objective == Objective::ce ? Decoder::greedy : Decoder::hard_beam;
  }

  std::vector<Decoder> dev_decoders() const {
    std::vector<Decoder> out{selection_decoder()};
    for (auto d : report_decoders) {
      if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
    }
    return out;
  }

  void validate() const {
    schedule.validate();
    if (beam_size < 1) throw ConfigError("beam_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
    if (!(decode_alpha > 0.0)) throw ConfigError("decode_alpha must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 = starting point, before any update
  double alpha = 0.0;
  double objective = 0.0;  // mean training objective over the epoch
  std::vector<std::pair<Decoder, Metrics>> dev;
  double selection_score = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct TrainResult {
  TaggerModel best;
  std::size_t best_epoch = 0;
  double best_score = -1.0;
  std::vector<EpochRecord> history;
  AdamState optimizer;
  double final_alpha = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> warn;
};

inline Tensor objective_value(Objective o, std::span<const std::size_t> tokens, std::span<const std::size_t> gold,
                              const TaggerModel& model, const SoftBeamOptions& opt, const CostFunction& cost) {
  switch (o) {
    case Objective::ce: return ce_loss(tokens, gold, model);
    case Objective::soft_direct: return soft_beam_forward(tokens, gold, model, opt, cost).value;
    case Objective::soft_hinge: return soft_hinge_forward(tokens, gold, model, opt, cost).value;
  }
  return {};
}

inline double selection_score(const Metrics& m, StopMetric s) {
  return s == StopMetric::accuracy ? m.accuracy : m.macro_f1;
}

inline TrainResult train(const TaggedCorpus& train_set, const TaggedCorpus& dev, const TrainConfig& cfg,
                         const CostFunction& cost, const ModelSizes& sizes,
                         const std::optional<TaggerModel>& warm_start = std::nullopt,
                         std::optional<std::size_t> default_label = std::nullopt, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw InputError("training set is empty");
  if (dev.size() == 0) throw InputError("dev set is empty");
  if (cfg.objective != Objective::ce && !warm_start) {
    if (!cfg.allow_cold_start) {
      throw ConfigError(std::string(objective_name(cfg.objective)) + " needs a warm-start model");
    }
    if (hooks.warn) hooks.warn(std::string(objective_name(cfg.objective)) + " is starting from random parameters");
  }
  TaggerModel model = warm_start ? warm_start->clone() : init_params(mix_seed(cfg.seed, 11), cfg.init_scale, sizes);
  model.validate();
  if (model.sizes.labels != train_set.labels.size() || model.sizes.input_vocab != train_set.inputs.size()) {
    throw DimensionError("model vocabulary sizes do not match the corpus");
  }

  const auto decoders = cfg.dev_decoders();
  auto evaluate_dev = [&](EpochRecord& rec) {
    for (auto d : decoders) {
      rec.dev.emplace_back(d, evaluate_decoder(dev, model, {d, cfg.beam_size, cfg.decode_alpha}, default_label));
    }
    rec.selection_score = selection_score(rec.dev.front().second, cfg.stop_metric);
  };

  TrainResult result;
  auto params = model.parameters();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t stale = 0;

  auto record = [&](EpochRecord& rec) {
    if (rec.selection_score > result.best_score) {
      result.best_score = rec.selection_score;
      result.best_epoch = rec.epoch;
      result.best = model.clone();
      rec.improved = true;
      stale = 0;
    } else {
      ++stale;
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  };

  // A warm start is itself a candidate for the best-dev snapshot.
  if (warm_start) {
    auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.alpha = anneal_alpha(cfg.schedule, 0);
    evaluate_dev(rec);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(rec);
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    const double alpha = anneal_alpha(cfg.schedule, epoch);
    const SoftBeamOptions opt{cfg.beam_size, alpha, cfg.max_gradient};
    Rng rng(mix_seed(cfg.seed, 1000 + epoch));
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (auto i : order) {
      const auto& s = train_set.sentences[i];
      model.zero_grad();
      auto loss = objective_value(cfg.objective, s.tokens, s.labels, model, opt, cost);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError(std::string(objective_name(cfg.objective)) + " loss is " + std::to_string(value) +
                              " at epoch " + std::to_string(epoch + 1) + ", sentence " + std::to_string(i));
      }
      total += value;
      backward(loss);
      optimizer_step(params, result.optimizer, cfg.adam);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.alpha = alpha;
    rec.objective = total / static_cast<double>(train_set.size());
    evaluate_dev(rec);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(rec);
    result.final_alpha = alpha;
    if (cfg.patience > 0 && stale >= cfg.patience) break;
  }
  return result;
}

}  // namespace softbeam
