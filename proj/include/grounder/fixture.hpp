#ifndef GROUNDER_FIXTURE_HPP_
#define GROUNDER_FIXTURE_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grounder/embedding.hpp"
#include "grounder/models.hpp"
#include "grounder/numerics.hpp"
#include "grounder/proposals.hpp"
#include "grounder/query_parser.hpp"

namespace grounder {

// Synthetic planted-blob world. Every image holds one rectangular blob of an
// entity class on a noisy background. Channels [0, 3) carry RGB centered on
// mid-gray, so the gray background is 0 and the blob's RGB is its color
// name. The remaining channels carry semantic evidence: a class prototype
// inside the blob, a gender pattern for persons, and a texture pattern
// everywhere outside the blob.
struct FixtureConfig {
  std::uint64_t seed = 7;
  int images = 200;
  int height = 16;
  int width = 16;
  int channels = 16;
  int min_blob = 4;
  int max_blob = 7;
  double semantic_noise = 0.3;
  double color_noise = 0.05;
  // Every fifth image (index % 5 == 4) is held out.
  int holdout_period = 5;
};



struct FixtureImage {
  std::string id;
  std::string entity;
  std::vector<std::string> attributes;
  std::vector<std::string> colors;
  Box box;
  bool held_out = false;
  FeatureMap features;
  FeatureMap color_labels;  // C = 1; color index on the blob, -1 elsewhere
};

// Deterministic in cfg.
std::vector<FixtureImage> make_fixture_images(const FixtureConfig& cfg);

// 16-d hand-built word vectors covering the fixture and demo vocabulary.
EmbeddingTable fixture_embeddings();

// person{people}, dog{puppy}; attributes man, woman; colors red, green, blue.
Lexicon fixture_lexicon();

// Wider vocabulary used by the parse examples.
Lexicon demo_lexicon();

struct FixturePaths {
  std::filesystem::path root;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path embeddings;
  std::filesystem::path lexicon;
  std::filesystem::path demo_lexicon;
};

// Writes features/, labels/, train.jsonl, test.jsonl, embeddings.txt and
// lexicon.json, demo_lexicon.json under `dir` (created if needed).
FixturePaths write_fixture(const std::filesystem::path& dir, const FixtureConfig& cfg = {});

}  // namespace grounder

#endif  // GROUNDER_FIXTURE_HPP_
