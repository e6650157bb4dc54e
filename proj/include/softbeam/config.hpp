#pragma once

// Experiment configuration (JSON). Every error names the offending field as a
// dotted path; unknown fields are rejected so typos do not pass silently.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "softbeam/data.hpp"
#include "softbeam/decoding.hpp"
#include "softbeam/training.hpp"

namespace softbeam {

using nlohmann::json;

class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(field(key) + ": required");
    return convert<T>(key);
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  ConfigReader child(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return ConfigReader(has(key) ? j_.at(key) : empty, field(key));
  }

  // The value at `key`, or nullptr when absent or null.
  const json* raw(const std::string& key) {
    used_.insert(key);
    return has(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
    }
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key) + ": expected a string");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key) + ": expected a number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) {
          throw ConfigError(field(key) + ": expected a non-negative integer");
        }
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

struct TaskConfig {
  enum class Kind { longrange, skewed, tsv };
  Kind kind = Kind::longrange;
  std::uint64_t seed = 7;
  LongRangeParams longrange;
  SkewedParams skewed;
  std::string train_path, dev_path, test_path;
  std::optional<std::string> default_label;
};

struct CostConfig {
  CostFunction::Kind kind = CostFunction::Kind::hamming;
  double default_penalty = 2.0;
};

struct GridEntry {
  std::string name;
  Objective objective = Objective::ce;
  AlphaSchedule schedule;
};

struct ExperimentConfig {
  TaskConfig task;
  ModelSizes sizes;  // vocabulary sizes are filled in from the corpus
  TrainConfig train;
  TrainConfig ce;
  CostConfig cost;
  std::vector<Decoder> decoders{Decoder::greedy, Decoder::hard_beam};
  double decode_alpha = 1000.0;
  std::size_t restarts = 1;
  std::vector<GridEntry> grid;
  std::optional<std::string> warm_start;
  std::string out = "runs/out";
  json canonical;  // parsed document without "out", for hashing

  std::uint64_t hash() const { return fnv1a(canonical.dump()); }
  std::string hash_hex() const { return hex64(hash()); }
};

inline AlphaSchedule parse_schedule(ConfigReader r, const AlphaSchedule& fallback) {
  const auto kind = r.get<std::string>("schedule", fallback.kind == AlphaSchedule::Kind::constant ? "constant" : "geometric");
  AlphaSchedule s;
  if (kind == "constant") {
    s = AlphaSchedule::constant(r.get<double>("alpha0", fallback.alpha0));
  } else if (kind == "geometric") {
    s = AlphaSchedule::geometric(r.get<double>("alpha0", fallback.alpha0), r.get<double>("ratio", fallback.ratio),
                                 r.get<double>("alpha_max", fallback.alpha_max));
  } else {
    throw ConfigError(r.field("schedule") + ": expected constant or geometric");
  }
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.where() + ": " + e.what());
  }
  return s;
}

inline TrainConfig parse_train(ConfigReader r, TrainConfig t) {
  if (auto o = r.optional<std::string>("objective")) t.objective = parse_objective(*o);
  t.beam_size = r.get<std::size_t>("beam_size", t.beam_size);
  t.schedule = parse_schedule(r.child("alpha"), t.schedule);
  t.epochs = r.get<std::size_t>("epochs", t.epochs);
  t.adam.learning_rate = r.get<double>("learning_rate", t.adam.learning_rate);
  t.adam.clip_norm = r.get<double>("clip_norm", t.adam.clip_norm);
  t.seed = r.get<std::uint64_t>("seed", t.seed);
  t.init_scale = r.get<double>("init_scale", t.init_scale);
  t.patience = r.get<std::size_t>("patience", t.patience);
  if (auto d = r.optional<std::string>("stop_decoder")) t.stop_decoder = parse_decoder(*d);
  if (auto m = r.optional<std::string>("stop_metric")) {
    if (*m == "accuracy") t.stop_metric = StopMetric::accuracy;
    else if (*m == "macro_f1") t.stop_metric = StopMetric::macro_f1;
    else throw ConfigError(r.field("stop_metric") + ": expected accuracy or macro_f1");
  }
  if (auto m = r.optional<std::string>("max_gradient")) {
    if (*m == "flow") t.max_gradient = MaxGradient::flow;
    else if (*m == "stop") t.max_gradient = MaxGradient::stop;
    else throw ConfigError(r.field("max_gradient") + ": expected flow or stop");
  }
  t.allow_cold_start = r.get<bool>("allow_cold_start", t.allow_cold_start);
  r.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.where() + ": " + e.what());
  }
  return t;
}

inline TaskConfig parse_task(ConfigReader r) {
  TaskConfig t;
  const auto kind = r.require<std::string>("kind");
  t.seed = r.get<std::uint64_t>("seed", t.seed);
  t.default_label = r.optional<std::string>("default_label");
  if (kind == "longrange") {
    t.kind = TaskConfig::Kind::longrange;
    auto& p = t.longrange;
    p.sentences = r.get("sentences", p.sentences);
    p.min_length = r.get("min_length", p.min_length);
    p.max_length = r.get("max_length", p.max_length);
    p.input_vocab = r.get("input_vocab", p.input_vocab);
    p.labels = r.get("labels", p.labels);
    p.groups = r.get("groups", p.groups);
    p.lag = r.get("lag", p.lag);
    p.zipf_exponent = r.get("zipf_exponent", p.zipf_exponent);
    p.token_zipf_exponent = r.get("token_zipf_exponent", p.token_zipf_exponent);
    p.noise = r.get("noise", p.noise);
    if (p.lag < 1) throw ConfigError(r.field("lag") + ": must be at least 1");
    if (p.input_vocab < 2 || p.labels < 2) throw ConfigError(r.where() + ": input_vocab and labels must be at least 2");
    if (p.groups < 1 || p.groups > p.labels) throw ConfigError(r.field("groups") + ": must be in [1, labels]");
    if (p.noise < 0.0 || p.noise >= 1.0) throw ConfigError(r.field("noise") + ": must be in [0, 1)");
  } else if (kind == "skewed") {
    t.kind = TaskConfig::Kind::skewed;
    auto& p = t.skewed;
    p.sentences = r.get("sentences", p.sentences);
    p.min_length = r.get("min_length", p.min_length);
    p.max_length = r.get("max_length", p.max_length);
    p.entity_types = r.get("entity_types", p.entity_types);
    p.triggers_per_type = r.get("triggers_per_type", p.triggers_per_type);
    p.name_tokens = r.get("name_tokens", p.name_tokens);
    p.filler_tokens = r.get("filler_tokens", p.filler_tokens);
    p.p_default = r.get("p_default", p.p_default);
    p.distractor_rate = r.get("distractor_rate", p.distractor_rate);
    p.weak_trigger_share = r.get("weak_trigger_share", p.weak_trigger_share);
    p.weak_entity_prob = r.get("weak_entity_prob", p.weak_entity_prob);
    if (!(p.p_default > 0.5 && p.p_default < 1.0)) throw ConfigError(r.field("p_default") + ": must be in (0.5, 1)");
    if (!t.default_label) t.default_label = "O";
  } else if (kind == "tsv") {
    t.kind = TaskConfig::Kind::tsv;
    t.train_path = r.require<std::string>("train");
    t.dev_path = r.require<std::string>("dev");
    t.test_path = r.get<std::string>("test", "");
  } else {
    throw ConfigError(r.field("kind") + ": expected longrange, skewed or tsv");
  }
  if (t.kind == TaskConfig::Kind::longrange || t.kind == TaskConfig::Kind::skewed) {
    const std::size_t lo = t.kind == TaskConfig::Kind::longrange ? t.longrange.min_length : t.skewed.min_length;
    const std::size_t hi = t.kind == TaskConfig::Kind::longrange ? t.longrange.max_length : t.skewed.max_length;
    if (lo < 1 || hi < lo) throw ConfigError(r.where() + ": need 1 <= min_length <= max_length");
  }
  r.finish();
  return t;
}

inline std::vector<GridEntry> default_grid() {
  return {
      {"CE", Objective::ce, AlphaSchedule::constant(1.0)},
      {"soft_hinge(alpha=1)", Objective::soft_hinge, AlphaSchedule::constant(1.0)},
      {"soft_hinge(annealed)", Objective::soft_hinge, AlphaSchedule::geometric(1.0, 1.5, 1000.0)},
      {"soft_direct(alpha=1)", Objective::soft_direct, AlphaSchedule::constant(1.0)},
      {"soft_direct(annealed)", Objective::soft_direct, AlphaSchedule::geometric(1.0, 1.5, 1000.0)},
  };
}

inline ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  ConfigReader r(doc, "");
  c.task = parse_task(r.child("task"));

  auto m = r.child("model");
  c.sizes.input_embedding = m.get("input_embedding", std::size_t{16});
  c.sizes.label_embedding = m.get("label_embedding", std::size_t{8});
  c.sizes.hidden = m.get("hidden", std::size_t{64});
  const double init_scale = m.get("init_scale", 0.1);
  m.finish();
  if (c.sizes.hidden < 1 || c.sizes.input_embedding < 1 || c.sizes.label_embedding < 1) {
    throw ConfigError("model: sizes must be positive");
  }
  if (!(init_scale > 0.0)) throw ConfigError("model.init_scale: must be positive");

  TrainConfig base;
  base.init_scale = init_scale;
  c.train = parse_train(r.child("train"), base);
  TrainConfig ce_base = c.train;
  ce_base.objective = Objective::ce;
  ce_base.schedule = AlphaSchedule::constant(1.0);
  ce_base.stop_decoder.reset();
  c.ce = parse_train(r.child("ce"), ce_base);
  if (c.ce.objective != Objective::ce) throw ConfigError("ce.objective: the warm-start stage must use ce");

  auto cost = r.child("cost");
  const auto kind = cost.get<std::string>("kind", c.task.default_label ? "weighted_hamming" : "hamming");
  if (kind == "hamming") c.cost.kind = CostFunction::Kind::hamming;
  else if (kind == "weighted_hamming") c.cost.kind = CostFunction::Kind::weighted_hamming;
  else throw ConfigError("cost.kind: expected hamming or weighted_hamming");
  c.cost.default_penalty = cost.get("default_penalty", c.cost.default_penalty);
  cost.finish();
  if (c.cost.kind == CostFunction::Kind::weighted_hamming && !c.task.default_label) {
    throw ConfigError("cost.kind: weighted_hamming needs task.default_label");
  }
  if (!(c.cost.default_penalty >= 0.0)) throw ConfigError("cost.default_penalty: must be >= 0");

  if (const json* list = r.raw("decoders")) {
    c.decoders.clear();
    if (!list->is_array()) throw ConfigError("decoders: expected a list");
    for (const auto& d : *list) {
      if (!d.is_string()) throw ConfigError("decoders: expected decoder names");
      c.decoders.push_back(parse_decoder(d.get<std::string>()));
    }
  }
  if (c.decoders.empty()) throw ConfigError("decoders: at least one decoder is required");
  c.decode_alpha = r.get("decode_alpha", c.decode_alpha);
  if (!(c.decode_alpha > 0.0)) throw ConfigError("decode_alpha: must be positive");
  c.train.decode_alpha = c.ce.decode_alpha = c.decode_alpha;
  c.restarts = r.get("restarts", c.restarts);
  if (c.restarts < 1) throw ConfigError("restarts: must be at least 1");

  if (const json* list = r.raw("grid")) {
    if (!list->is_array() || list->empty()) throw ConfigError("grid: expected a non-empty list");
    for (std::size_t i = 0; i < list->size(); ++i) {
      ConfigReader g((*list)[i], "grid[" + std::to_string(i) + "]");
      GridEntry e;
      e.objective = parse_objective(g.require<std::string>("objective"));
      e.name = g.get<std::string>("name", objective_name(e.objective));
      e.schedule = parse_schedule(g.child("alpha"), AlphaSchedule::constant(1.0));
      g.finish();
      c.grid.push_back(std::move(e));
    }
  } else {
    c.grid = default_grid();
  }
  c.warm_start = r.optional<std::string>("warm_start");
  c.out = r.get<std::string>("out", c.out);
  r.finish();

  c.canonical = doc;
  c.canonical.erase("out");
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_json_file(path)); }

}  // namespace softbeam
