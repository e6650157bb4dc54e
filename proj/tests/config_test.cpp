#include <gtest/gtest.h>

#include "softbeam/config.hpp"

using namespace softbeam;

namespace {

// Every document needs a task kind; tests patch in the rest.
ExperimentConfig parse_with_task(json doc) {
  if (!doc.contains("task")) doc["task"] = {{"kind", "longrange"}};
  return parse_config(doc);
}

std::string config_error(const json& doc) {
  try {
    parse_with_task(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsFromAMinimalDocument) {
  const auto c = parse_with_task(json::object());
  EXPECT_EQ(c.task.kind, TaskConfig::Kind::longrange);
  EXPECT_EQ(c.train.objective, Objective::ce);
  EXPECT_EQ(c.ce.objective, Objective::ce);
  EXPECT_EQ(c.restarts, 1u);
  EXPECT_EQ(c.grid.size(), 5u);
  EXPECT_EQ(c.decoders, (std::vector<Decoder>{Decoder::greedy, Decoder::hard_beam}));
  EXPECT_EQ(c.cost.kind, CostFunction::Kind::hamming);
}

TEST(Config, FullDocument) {
  const auto c = parse_config(json::parse(R"({
    "task": {"kind": "skewed", "seed": 3, "sentences": 100, "p_default": 0.9},
    "model": {"hidden": 12, "input_embedding": 5, "label_embedding": 4, "init_scale": 0.2},
    "train": {"objective": "soft_hinge", "beam_size": 4, "epochs": 7, "learning_rate": 0.002, "seed": 9,
              "alpha": {"schedule": "geometric", "alpha0": 0.5, "ratio": 2, "alpha_max": 64},
              "stop_metric": "macro_f1", "patience": 3},
    "ce": {"epochs": 2, "learning_rate": 0.01},
    "cost": {"kind": "weighted_hamming", "default_penalty": 3},
    "decoders": ["hard_beam", "soft_beam"],
    "decode_alpha": 500,
    "restarts": 3,
    "grid": [{"objective": "ce"}, {"name": "sd", "objective": "soft_direct", "alpha": {"schedule": "constant", "alpha0": 2}}],
    "out": "somewhere"
  })"));
  EXPECT_EQ(c.task.kind, TaskConfig::Kind::skewed);
  EXPECT_EQ(c.task.skewed.sentences, 100u);
  EXPECT_DOUBLE_EQ(c.task.skewed.p_default, 0.9);
  EXPECT_EQ(c.task.default_label, std::optional<std::string>("O"));
  EXPECT_EQ(c.sizes.hidden, 12u);
  EXPECT_EQ(c.train.objective, Objective::soft_hinge);
  EXPECT_EQ(c.train.beam_size, 4u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_DOUBLE_EQ(c.train.init_scale, 0.2);
  EXPECT_EQ(c.train.schedule.kind, AlphaSchedule::Kind::geometric);
  EXPECT_DOUBLE_EQ(c.train.schedule.alpha0, 0.5);
  EXPECT_DOUBLE_EQ(c.train.schedule.alpha_max, 64.0);
  EXPECT_EQ(c.train.stop_metric, StopMetric::macro_f1);
  // The CE stage inherits what it does not override, except the objective.
  EXPECT_EQ(c.ce.objective, Objective::ce);
  EXPECT_EQ(c.ce.epochs, 2u);
  EXPECT_EQ(c.ce.beam_size, 4u);
  EXPECT_EQ(c.ce.seed, 9u);
  EXPECT_EQ(c.ce.schedule.kind, AlphaSchedule::Kind::constant);
  EXPECT_DOUBLE_EQ(c.cost.default_penalty, 3.0);
  EXPECT_EQ(c.decoders.size(), 2u);
  EXPECT_EQ(c.decode_alpha, 500.0);
  EXPECT_EQ(c.restarts, 3u);
  ASSERT_EQ(c.grid.size(), 2u);
  EXPECT_EQ(c.grid[0].name, "ce");
  EXPECT_EQ(c.grid[1].name, "sd");
  EXPECT_DOUBLE_EQ(c.grid[1].schedule.alpha0, 2.0);
  EXPECT_EQ(c.out, "somewhere");
}

TEST(Config, ErrorsNameTheFieldPath) {
  EXPECT_NE(config_error(json::parse(R"({"train": {"epochs": "ten"}})")).find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"alpha": {"ratio": 0.5, "schedule": "geometric"}}})")).find("alpha"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"lerning_rate": 0.1}})")).find("train.lerning_rate"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"task": {"kind": "ccg"}})")).find("task.kind"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"decoders": []})")).find("decoders"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"decoders": ["viterbi"]})")).find("viterbi"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"restarts": 0})")).find("restarts"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"grid": [{"objective": "soft_direct", "extra": 1}]})")).find("grid[0].extra"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"ce": {"objective": "soft_direct"}})")).find("ce.objective"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"cost": {"kind": "weighted_hamming"}})")).find("default_label"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"task": {"kind": "tsv"}})")).find("task.train"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"model": {"hidden": -3}})")).find("model.hidden"), std::string::npos);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  const auto a = parse_with_task(json::parse(R"({"restarts": 2, "out": "a"})"));
  const auto b = parse_with_task(json::parse(R"({"out": "b", "restarts": 2})"));
  const auto c = parse_with_task(json::parse(R"({"restarts": 3, "out": "a"})"));
  EXPECT_EQ(a.hash_hex(), b.hash_hex());
  EXPECT_NE(a.hash_hex(), c.hash_hex());
  EXPECT_EQ(a.hash_hex().size(), 16u);
}

TEST(Config, TaskKindIsRequired) {
  EXPECT_THROW(parse_config(json::object()), ConfigError);
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}
