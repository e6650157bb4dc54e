#pragma once

// JSON checkpoints: model sizes, both vocabularies (with hashes), every named
// parameter block, and the manifest of the run that produced it. Doubles are
// written with round-trip precision.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "softbeam/data.hpp"
#include "softbeam/model.hpp"

namespace softbeam {

inline constexpr const char* kCheckpointFormat = "softbeam-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TaggerModel model;
  Vocabulary inputs;
  Vocabulary labels;
  std::optional<std::string> default_label;
  nlohmann::json manifest = nlohmann::json::object();
};

inline nlohmann::json sizes_to_json(const ModelSizes& s) {
  return {{"input_vocab", s.input_vocab},         {"labels", s.labels}, {"input_embedding", s.input_embedding},
          {"label_embedding", s.label_embedding}, {"hidden", s.hidden}};
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : c.model.parameters()) {
    params[name] = {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  nlohmann::json j = {
      {"format", kCheckpointFormat},
      {"version", kCheckpointVersion},
      {"sizes", sizes_to_json(c.model.sizes)},
      {"inputs", c.inputs.names()},
      {"labels", c.labels.names()},
      {"input_vocab_hash", hex64(c.inputs.hash())},
      {"label_vocab_hash", hex64(c.labels.hash())},
      {"parameters", std::move(params)},
      {"manifest", c.manifest},
  };
  j["default_label"] = c.default_label ? nlohmann::json(*c.default_label) : nlohmann::json(nullptr);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != kCheckpointFormat) throw CheckpointError("not a softbeam checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + j.at("version").dump());
    }
    Checkpoint c;
    const auto& s = j.at("sizes");
    ModelSizes sizes;
    sizes.input_vocab = s.at("input_vocab").get<std::size_t>();
    sizes.labels = s.at("labels").get<std::size_t>();
    sizes.input_embedding = s.at("input_embedding").get<std::size_t>();
    sizes.label_embedding = s.at("label_embedding").get<std::size_t>();
    sizes.hidden = s.at("hidden").get<std::size_t>();
    c.inputs = Vocabulary(j.at("inputs").get<std::vector<std::string>>());
    c.labels = Vocabulary(j.at("labels").get<std::vector<std::string>>());
    if (hex64(c.inputs.hash()) != j.at("input_vocab_hash").get<std::string>() ||
        hex64(c.labels.hash()) != j.at("label_vocab_hash").get<std::string>()) {
      throw CheckpointError("vocabulary hash mismatch");
    }
    if (c.inputs.size() != sizes.input_vocab || c.labels.size() != sizes.labels) {
      throw CheckpointError("vocabulary sizes disagree with model sizes");
    }
    if (!j.at("default_label").is_null()) c.default_label = j.at("default_label").get<std::string>();
    c.model = init_params(0, 1.0, sizes);
    const auto& params = j.at("parameters");
    for (auto& [name, t] : c.model.parameters()) {
      if (!params.contains(name)) throw CheckpointError("missing parameter block " + name);
      const auto& block = params.at(name);
      if (block.at("shape").get<Shape>() != t.shape()) throw CheckpointError("shape mismatch in " + name);
      const auto values = block.at("values").get<std::vector<double>>();
      if (values.size() != t.size()) throw CheckpointError("value count mismatch in " + name);
      std::copy(values.begin(), values.end(), t.mutable_values().begin());
    }
    if (params.size() != c.model.parameters().size()) throw CheckpointError("unexpected parameter blocks");
    c.model.validate();
    c.manifest = j.value("manifest", nlohmann::json::object());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << checkpoint_to_json(c).dump() << '\n';
  if (!out) throw CheckpointError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace softbeam
