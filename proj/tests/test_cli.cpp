#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "app.hpp"
#include "grounder/errors.hpp"
#include "grounder/fixture.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = app::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// A small fixture and a config with fast training settings, plus entity and
// color models trained through the CLI once for the whole suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<testing::TempDir>("cli");
    FixtureConfig fc;
    fc.images = 40;
    paths_ = write_fixture(dir_->path() / "fx", fc);
    config_ = dir_->path() / "config.json";
    write_file(config_, R"({
      "embeddings": "fx/embeddings.txt",
      "lexicon": "fx/lexicon.json",
      "manifest": "fx/train.jsonl",
      "train": {"sketch_dim": 32, "head_hidden": 8, "latent_dim": 8, "latent_hidden": 8,
                "stage1_epochs": 3, "stage2_epochs": 3, "color_epochs": 15}
    })");
    entity_ = dir_->path() / "entity.gmdl";
    color_ = dir_->path() / "color.gmdl";
    const auto e = run_cli({"train-entity", "--config", config_.string(), "--out",
                            entity_.string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto c = run_cli({"train-color", "--config", config_.string(), "--out",
                            color_.string()});
    ASSERT_EQ(c.code, 0) << c.err;
  }
  static void TearDownTestSuite() { dir_.reset(); }

  static std::unique_ptr<testing::TempDir> dir_;
  static FixturePaths paths_;
  static fs::path config_, entity_, color_;
};

std::unique_ptr<testing::TempDir> CliTest::dir_;
FixturePaths CliTest::paths_;
fs::path CliTest::config_, CliTest::entity_, CliTest::color_;

TEST_F(CliTest, ParseExample) {
  const auto o = run_cli({"parse", "--query", "older man in blue", "--lexicon",
                          paths_.demo_lexicon.string(), "--embeddings",
                          paths_.embeddings.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  EXPECT_EQ(j["entity"], "person");
  EXPECT_EQ(j["attributes"], json({"older", "man"}));
  EXPECT_EQ(j["colors"], json({"blue"}));
  EXPECT_EQ(j["residual"], json::array());
}

TEST_F(CliTest, EmptyQueryIsValidationError) {
  const auto o = run_cli({"parse", "--query", "  ", "--config", config_.string()});
  EXPECT_EQ(o.code, app::kExitValidation);
  EXPECT_FALSE(o.err.empty());
}

TEST(Cli, SelftestPasses) {
  const auto o = run_cli({"selftest"});
  EXPECT_EQ(o.code, 0) << o.out;
  std::istringstream lines(o.out);
  std::string line;
  int passes = 0;
  while (std::getline(lines, line)) passes += line.rfind("PASS ", 0) == 0 ? 1 : 0;
  EXPECT_EQ(passes, 7);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, app::kExitValidation);
  EXPECT_EQ(run_cli({"--help"}).code, app::kExitOk);
  EXPECT_EQ(run_cli({"ground", "--help"}).code, app::kExitOk);
  const auto unknown_cmd = run_cli({"frobnicate"});
  EXPECT_EQ(unknown_cmd.code, app::kExitValidation);
  EXPECT_NE(unknown_cmd.err.find("unknown subcommand"), std::string::npos);
  const auto unknown_flag = run_cli({"parse", "--query", "dog", "--bogus", "1"});
  EXPECT_EQ(unknown_flag.code, app::kExitValidation);
  EXPECT_EQ(run_cli({"parse"}).code, app::kExitValidation);
  EXPECT_EQ(run_cli({"selftest", "--threads", "0"}).code, app::kExitValidation);
}

TEST_F(CliTest, ConfigErrorsExitOne) {
  const auto bad_key = dir_->path() / "bad_key.json";
  write_file(bad_key, R"({"embedings": "x"})");
  const auto o = run_cli({"parse", "--query", "dog", "--config", bad_key.string()});
  EXPECT_EQ(o.code, app::kExitValidation);
  EXPECT_NE(o.err.find("embedings"), std::string::npos) << o.err;

  const auto bad_nested = dir_->path() / "bad_nested.json";
  write_file(bad_nested, R"({"train": {"lr": 0.1}})");
  EXPECT_EQ(run_cli({"selftest", "--config", bad_nested.string()}).code, app::kExitValidation);

  const auto bad_type = dir_->path() / "bad_type.json";
  write_file(bad_type, R"({"seed": "seven"})");
  EXPECT_EQ(run_cli({"selftest", "--config", bad_type.string()}).code, app::kExitValidation);

  const auto malformed = dir_->path() / "malformed.json";
  write_file(malformed, "{");
  EXPECT_EQ(run_cli({"selftest", "--config", malformed.string()}).code, app::kExitValidation);

  EXPECT_EQ(run_cli({"selftest", "--config", (dir_->path() / "none.json").string()}).code,
            app::kExitValidation);
}

TEST_F(CliTest, MissingInputsExitOne) {
  const auto o = run_cli({"ground", "--config", config_.string(), "--features",
                          (dir_->path() / "nope.fmap").string(), "--query", "dog",
                          "--entity-model", entity_.string()});
  EXPECT_EQ(o.code, app::kExitValidation);
  const auto no_model = run_cli({"ground", "--config", config_.string(), "--features",
                                 (paths_.root / "features" / "img_000.fmap").string(),
                                 "--query", "dog"});
  EXPECT_EQ(no_model.code, app::kExitValidation);
}

TEST(RunConfig, ParsesAndResolvesRelativePaths) {
  const auto cfg = app::parse_run_config(
      json::parse(R"({"embeddings": "e.txt", "lexicon": "/abs/l.json", "seed": 5,
                      "threads": 2, "train": {"learning_rate": 0.01, "batch_size": 4},
                      "grounding": {"sim_threshold": 0.6, "heat_threshold": 0.4,
                                    "reject_below_threshold": false}})"),
      "/base");
  EXPECT_EQ(cfg.embeddings, fs::path("/base/e.txt"));
  EXPECT_EQ(cfg.lexicon, fs::path("/abs/l.json"));
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.threads, std::optional<int>(2));
  EXPECT_EQ(cfg.train.learning_rate, 0.01);
  EXPECT_EQ(cfg.train.batch_size, 4);
  EXPECT_EQ(cfg.grounding.sim_threshold, 0.6);
  EXPECT_EQ(cfg.grounding.proposals.heat_threshold, 0.4);
  EXPECT_FALSE(cfg.grounding.reject_below_threshold);
  EXPECT_THROW(app::parse_run_config(json::parse(R"({"grounding": {"bogus": 1}})"), "/"),
               ConfigError);
  EXPECT_THROW(app::parse_run_config(json::parse(R"({"threads": 0})"), "/"), ConfigError);
  EXPECT_THROW(app::parse_run_config(json::parse("[1]"), "/"), ConfigError);
}

TEST(RunConfig, ThreadResolutionOrder) {
  app::RunConfig cfg;
  ::unsetenv("GROUNDER_THREADS");
  EXPECT_EQ(app::resolve_threads(cfg), 1);
  ::setenv("GROUNDER_THREADS", "3", 1);
  EXPECT_EQ(app::resolve_threads(cfg), 3);
  cfg.threads = 2;
  EXPECT_EQ(app::resolve_threads(cfg), 2);
  cfg.threads.reset();
  ::setenv("GROUNDER_THREADS", "many", 1);
  EXPECT_THROW(app::resolve_threads(cfg), ConfigError);
  ::unsetenv("GROUNDER_THREADS");
}

TEST_F(CliTest, CounterfactualColorIsRejected) {
  // img_000 is a person; pick the first color it does not have.
  const auto images = make_fixture_images([] {
    FixtureConfig fc;
    fc.images = 1;
    return fc;
  }());
  const std::string present = images[0].colors[0];
  const std::string absent = present == "green" ? "red" : "green";
  const auto out_dir = dir_->path() / "cf_out";
  const auto o = run_cli({"ground", "--config", config_.string(), "--features",
                          (paths_.root / "features" / "img_000.fmap").string(), "--query",
                          "person in " + absent, "--entity-model", entity_.string(),
                          "--color-model", color_.string(), "--out-dir", out_dir.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto summary = json::parse(o.out);
  EXPECT_TRUE(summary["rejected"].get<bool>());
  EXPECT_EQ(summary["boxes"], json::array());
  EXPECT_TRUE(summary["selected"].is_null());
  EXPECT_EQ(summary["region_score"].get<double>(), 0.0);
  EXPECT_EQ(json::parse(slurp(out_dir / "boxes.json")), json::array());
  EXPECT_EQ(json::parse(slurp(out_dir / "summary.json")), summary);
  for (const char* name : {"me.fmap", "mc.fmap", "g.fmap"}) {
    EXPECT_TRUE(fs::exists(out_dir / name)) << name;
  }
  EXPECT_FALSE(fs::exists(out_dir / "ma.fmap"));
}

TEST_F(CliTest, GroundWritesPgmOnRequest) {
  const auto out_dir = dir_->path() / "pgm_out";
  const auto o = run_cli({"ground", "--config", config_.string(), "--features",
                          (paths_.root / "features" / "img_001.fmap").string(), "--query",
                          "dog", "--entity-model", entity_.string(), "--out-dir",
                          out_dir.string(), "--pgm", "--no-reject"});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(out_dir / "g.pgm"));
  EXPECT_EQ(slurp(out_dir / "g.pgm").substr(0, 2), "P5");
  EXPECT_FALSE(json::parse(o.out)["rejected"].get<bool>());
}

TEST_F(CliTest, FlagsOverrideConfig) {
  const auto a = dir_->path() / "c1.gmdl";
  const auto b = dir_->path() / "c2.gmdl";
  ASSERT_EQ(run_cli({"train-color", "--config", config_.string(), "--out", a.string(),
                     "--epochs", "1"})
                .code,
            0);
  ASSERT_EQ(run_cli({"train-color", "--config", config_.string(), "--out", b.string()}).code,
            0);
  EXPECT_NE(slurp(a), slurp(b));
  EXPECT_EQ(slurp(b), slurp(color_));
}

TEST_F(CliTest, EvalCommandsWriteReports) {
  const auto report = dir_->path() / "report.json";
  const auto csv = dir_->path() / "roc.csv";
  const auto o = run_cli({"eval-cf", "--config", config_.string(), "--manifest",
                          paths_.test_manifest.string(), "--entity-model", entity_.string(),
                          "--color-model", color_.string(), "--out", report.string(), "--csv",
                          csv.string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto head = json::parse(o.out);
  const auto full = json::parse(slurp(report));
  EXPECT_EQ(head["auc"], full["auc"]);
  EXPECT_GE(full["auc"].get<double>(), 0.0);
  EXPECT_LE(full["auc"].get<double>(), 1.0);
  EXPECT_EQ(slurp(csv).rfind("fpr,tpr,threshold\n", 0), 0u);
  EXPECT_EQ(run_cli({"eval-cf", "--config", config_.string(), "--entity-model",
                     entity_.string(), "--template", "nonsense"})
                .code,
            app::kExitValidation);

  const auto loc = run_cli({"eval-loc", "--config", config_.string(), "--manifest",
                            paths_.test_manifest.string(), "--entity-model", entity_.string(),
                            "--iou", "0.3"});
  ASSERT_EQ(loc.code, 0) << loc.err;
  const auto lj = json::parse(loc.out);
  EXPECT_EQ(lj["n_cases"].get<int>(), 8);
  EXPECT_EQ(lj["iou_threshold"].get<double>(), 0.3);
}

TEST_F(CliTest, Align) {
  const auto scores = dir_->path() / "scores.json";
  write_file(scores, "[[0.6, 0.5, 0.1], [0.9, 0.2, 0.4]]");
  const auto g = run_cli({"align", "--scores", scores.string(), "--mode", "greedy-unique"});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(json::parse(g.out),
            json::parse(R"({"mode": "greedy-unique", "frames": [1, 0], "unassigned": []})"));
  const auto a = run_cli({"align", "--scores", scores.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(json::parse(a.out)["frames"], json({0, 0}));
  write_file(scores, "[[0.5], [0.9]]");
  const auto u = run_cli({"align", "--scores", scores.string(), "--mode", "greedy-unique"});
  EXPECT_EQ(json::parse(u.out)["frames"], json::parse("[null, 0]"));
  EXPECT_EQ(json::parse(u.out)["unassigned"], json({0}));
  write_file(scores, "{}");
  EXPECT_EQ(run_cli({"align", "--scores", scores.string()}).code, app::kExitValidation);
  EXPECT_EQ(run_cli({"align", "--scores", scores.string(), "--mode", "zigzag"}).code,
            app::kExitValidation);
}

}  // namespace
}  // namespace grounder
