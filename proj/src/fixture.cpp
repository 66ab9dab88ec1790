#include "grounder/fixture.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "grounder/errors.hpp"
#include "grounder/fmap_io.hpp"
#include "grounder/rng.hpp"

namespace grounder {

namespace {

const std::array<std::string, 2> kEntities = {"person", "dog"};
const std::array<std::string, 2> kAttributes = {"man", "woman"};
const std::array<std::string, 3> kColors = {"red", "green", "blue"};

// Semantic channels switched on inside the blob.
const std::array<std::array<int, 2>, 2> kEntityChannels = {{{3, 4}, {5, 6}}};
const std::array<std::array<int, 2>, 2> kAttributeChannels = {{{7, 8}, {9, 10}}};
// Background texture; pooled features are normalized per pixel, so the
// background needs a direction of its own rather than just low magnitude.
const std::array<int, 2> kBackgroundChannels = {11, 12};

const std::array<std::array<float, 3>, 3> kRgb = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

// Axes: 0 person, 1 animal, 2 male, 3 female, 4 age, 5 color, 6 red,
// 7 green, 8 blue, 9 dark, 10 light, 11 clothing, 12 vehicle, 13 feline,
// 14 and 15 filler.
struct WordRow {
  const char* token;
  std::array<double, 16> v;
};

const WordRow kWords[] = {
    {"person", {1.0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0, 0, 0.1, 0}},
    {"people", {0.95, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0, 0, 0.15, 0.1}},
    {"man", {0.7, 0, 0.7, 0, 0.1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0}},
    {"woman", {0.7, 0, 0, 0.7, 0.1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0}},
    {"boy", {0.6, 0, 0.6, 0, -0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1}},
    {"girl", {0.6, 0, 0, 0.6, -0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1}},
    {"older", {0.45, 0, 0, 0, 0.85, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0}},
    {"young", {0.4, 0.1, 0, 0, -0.85, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1, 0}},
    {"dog", {0, 1.0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1}},
    {"puppy", {0, 0.9, 0, 0, -0.4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.1}},
    {"cat", {0, 0.8, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.6, 0, 0}},
    {"car", {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0.1}},
    {"red", {0, 0, 0, 0, 0, 0.6, 0.8, 0, 0, 0, 0, 0, 0, 0, 0, 0}},
    {"green", {0, 0, 0, 0, 0, 0.6, 0, 0.8, 0, 0, 0, 0, 0, 0, 0, 0}},
    {"blue", {0, 0, 0, 0, 0, 0.6, 0, 0, 0.8, 0, 0, 0, 0, 0, 0, 0}},
    {"navy", {0, 0, 0, 0, 0, 0.5, 0, 0, 0.75, 0.45, 0, 0, 0, 0, 0, 0}},
    {"crimson", {0, 0, 0, 0, 0, 0.5, 0.75, 0, 0, 0.3, 0, 0, 0, 0, 0, 0}},
    {"black", {0, 0, 0, 0, 0, 0.6, 0, 0, 0, 0.8, 0, 0, 0, 0, 0, 0}},
    {"white", {0, 0, 0, 0, 0, 0.6, 0, 0, 0, 0, 0.8, 0, 0, 0, 0, 0}},
    {"shirt", {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0.2}},
};

std::string image_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img_%03d", i);
  return buf;
}

}  // namespace

std::vector<FixtureImage> make_fixture_images(const FixtureConfig& cfg) {
  if (cfg.images < 1 || cfg.height < cfg.max_blob || cfg.width < cfg.max_blob ||
      cfg.min_blob < 1 || cfg.min_blob > cfg.max_blob || cfg.holdout_period < 2) {
    throw ConfigError("fixture: inconsistent size settings");
  }
  if (cfg.channels < 13) throw ConfigError("fixture: need at least 13 channels");
  Rng rng({cfg.seed, 0xF1C7u});
  std::vector<FixtureImage> out;
  out.reserve(static_cast<std::size_t>(cfg.images));
  for (int i = 0; i < cfg.images; ++i) {
    FixtureImage img;
    img.id = image_id(i);
    const int entity = i % 2;
    img.entity = kEntities[static_cast<std::size_t>(entity)];
    int attribute = -1;
    if (entity == 0) {
      attribute = (i / 2) % 2;
      img.attributes.push_back(kAttributes[static_cast<std::size_t>(attribute)]);
    }
    const int color = static_cast<int>(rng.below(kColors.size()));
    img.colors.push_back(kColors[static_cast<std::size_t>(color)]);
    img.held_out = i % cfg.holdout_period == cfg.holdout_period - 1;

    Box& b = img.box;
    b.w = rng.uniform_int(cfg.min_blob, cfg.max_blob);
    b.h = rng.uniform_int(cfg.min_blob, cfg.max_blob);
    b.x = rng.uniform_int(0, cfg.width - b.w);
    b.y = rng.uniform_int(0, cfg.height - b.h);
    b.score = 1.0;

    img.features = FeatureMap(cfg.height, cfg.width, cfg.channels);
    img.color_labels = FeatureMap(cfg.height, cfg.width, 1);
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const bool inside = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
        auto px = img.features.pixel(y, x);
        for (int c = 0; c < kColorInputChannels; ++c) {
          const auto ci = static_cast<std::size_t>(c);
          const double rgb = inside ? kRgb[static_cast<std::size_t>(color)][ci] : 0.5;
          px[ci] = static_cast<float>(rgb - 0.5 + cfg.color_noise * rng.normal());
        }
        for (int c = kColorInputChannels; c < cfg.channels; ++c) {
          px[static_cast<std::size_t>(c)] = static_cast<float>(cfg.semantic_noise * rng.normal());
        }
        if (!inside) {
          for (int c : kBackgroundChannels) px[static_cast<std::size_t>(c)] += 1.0f;
        } else {
          for (int c : kEntityChannels[static_cast<std::size_t>(entity)]) {
            px[static_cast<std::size_t>(c)] += 1.0f;
          }
          if (attribute >= 0) {
            for (int c : kAttributeChannels[static_cast<std::size_t>(attribute)]) {
              px[static_cast<std::size_t>(c)] += 1.0f;
            }
          }
        }
        img.color_labels.pixel(y, x)[0] = inside ? static_cast<float>(color) : -1.0f;
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

EmbeddingTable fixture_embeddings() {
  EmbeddingTable table;
  for (const auto& w : kWords) table.insert(w.token, WordVector(w.v.begin(), w.v.end()));
  return table;
}

Lexicon fixture_lexicon() {
  Lexicon lex;
  lex.entity_classes = {{"person", {"people"}}, {"dog", {"puppy"}}};
  lex.attribute_corpus = {kAttributes.begin(), kAttributes.end()};
  lex.color_names = {kColors.begin(), kColors.end()};
  return lex;
}

Lexicon demo_lexicon() {
  Lexicon lex;
  lex.entity_classes = {{"person", {"people"}}, {"dog", {"puppy"}}, {"cat", {}}};
  lex.attribute_corpus = {"man", "woman", "older", "young", "boy", "girl"};
  lex.color_names = {"red", "green", "blue", "black", "white"};
  return lex;
}

FixturePaths write_fixture(const std::filesystem::path& dir, const FixtureConfig& cfg) {
  namespace fs = std::filesystem;
  FixturePaths paths;
  paths.root = dir;
  paths.train_manifest = dir / "train.jsonl";
  paths.test_manifest = dir / "test.jsonl";
  paths.embeddings = dir / "embeddings.txt";
  paths.lexicon = dir / "lexicon.json";
  paths.demo_lexicon = dir / "demo_lexicon.json";
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "labels");

  std::ofstream train(paths.train_manifest);
  std::ofstream test(paths.test_manifest);
  if (!train || !test) throw Error("fixture: cannot write manifests under " + dir.string());
  for (const auto& img : make_fixture_images(cfg)) {
    const std::string features = "features/" + img.id + ".fmap";
    const std::string labels = "labels/" + img.id + "_colors.fmap";
    write_fmap(dir / features, img.features);
    write_fmap(dir / labels, img.color_labels);
    nlohmann::ordered_json rec;
    rec["features_path"] = features;
    rec["entity"] = img.entity;
    rec["attributes"] = img.attributes;
    rec["colors"] = img.colors;
    rec["color_labels_path"] = labels;
    rec["box"] = {{"x", img.box.x}, {"y", img.box.y}, {"w", img.box.w}, {"h", img.box.h}};
    (img.held_out ? test : train) << rec.dump() << '\n';
  }
  std::ofstream emb(paths.embeddings);
  write_embeddings(emb, fixture_embeddings());
  std::ofstream lex(paths.lexicon);
  lex << lexicon_to_json(fixture_lexicon());
  std::ofstream demo(paths.demo_lexicon);
  demo << lexicon_to_json(demo_lexicon());
  if (!train || !test || !emb || !lex || !demo) {
    throw Error("fixture: write failed under " + dir.string());
  }
  return paths;
}

}  // namespace grounder
