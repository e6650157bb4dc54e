#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "softbeam/checkpoint.hpp"
#include "softbeam/decoding.hpp"
#include "test_support.hpp"

using namespace softbeam;
using namespace softbeam::testing;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.inputs.add("a");
  c.inputs.add("b");
  for (const char* l : {"O", "X", "Y"}) c.labels.add(l);
  c.model = init_params(4, 0.4, tiny_sizes(3, 5, c.inputs.size()));
  c.default_label = "O";
  c.manifest = {{"seed", 4}};
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "softbeam_checkpoint_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const auto c = sample();
  const auto path = temp_file("round.json");
  save_checkpoint(path, c);
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(back.inputs == c.inputs);
  EXPECT_TRUE(back.labels == c.labels);
  EXPECT_EQ(back.default_label, c.default_label);
  EXPECT_EQ(back.manifest["seed"], 4);
  EXPECT_EQ(back.model.sizes, c.model.sizes);
  const auto a = c.model.parameters(), b = back.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.size(), b[i].second.size());
    for (std::size_t j = 0; j < a[i].second.size(); ++j) EXPECT_EQ(a[i].second.values()[j], b[i].second.values()[j]);
  }
  const std::vector<std::size_t> tokens{1, 0, 1, 1};
  EXPECT_EQ(decode(tokens, c.model, {Decoder::hard_beam, 2, 1.0}), decode(tokens, back.model, {Decoder::hard_beam, 2, 1.0}));
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto j = checkpoint_to_json(sample());
  auto expect_error = [](const nlohmann::json& doc) { EXPECT_THROW(checkpoint_from_json(doc), CheckpointError); };
  auto bad = j;
  bad["format"] = "other";
  expect_error(bad);
  bad = j;
  bad["version"] = 99;
  expect_error(bad);
  bad = j;
  bad["labels"][1] = "Z";
  expect_error(bad);
  bad = j;
  bad["parameters"].erase("output_bias");
  expect_error(bad);
  bad = j;
  bad["parameters"]["output_bias"]["values"].push_back(1.0);
  expect_error(bad);
  bad = j;
  bad["parameters"]["output_bias"]["shape"] = {7};
  expect_error(bad);
  bad = j;
  bad["sizes"]["labels"] = 4;
  expect_error(bad);
  bad = j;
  bad.erase("sizes");
  expect_error(bad);
}

TEST(Checkpoint, UnreadableFiles) {
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), CheckpointError);
  const auto path = temp_file("garbage.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}
