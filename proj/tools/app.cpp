#include "app.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "grounder/benchmark.hpp"
#include "grounder/dictionary.hpp"
#include "grounder/errors.hpp"
#include "grounder/evaluation.hpp"
#include "grounder/fmap_io.hpp"
#include "grounder/models.hpp"
#include "grounder/numerics.hpp"
#include "grounder/proposals.hpp"
#include "grounder/query_parser.hpp"
#include "grounder/rng.hpp"
#include "grounder/sketch_attention.hpp"

namespace grounder::app {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// ---- Config file ----

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

std::string key_name(const std::string& where, const char* key) { return where + key; }

void read_double(const Json& j, const char* key, double& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) throw ConfigError(key_name(where, key) + " must be a number");
  dst = j[key].get<double>();
}

void read_int(const Json& j, const char* key, int& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j[key].is_number_integer()) throw ConfigError(key_name(where, key) + " must be an integer");
  dst = j[key].get<int>();
}

void read_bool(const Json& j, const char* key, bool& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j[key].is_boolean()) throw ConfigError(key_name(where, key) + " must be a boolean");
  dst = j[key].get<bool>();
}

void read_path(const Json& j, const char* key, std::optional<fs::path>& dst,
               const fs::path& base_dir) {
  if (!j.contains(key)) return;
  if (!j[key].is_string()) throw ConfigError(std::string(key) + " must be a string");
  const fs::path p = j[key].get<std::string>();
  dst = p.is_absolute() ? p : base_dir / p;
}

void parse_train(const Json& j, TrainConfig& t) {
  const std::string where = "train.";
  check_keys(j,
             {"learning_rate", "momentum", "grad_clip", "stage1_epochs", "stage2_epochs",
              "color_epochs", "batch_size", "attention_l2", "mil_top_t", "pixel_loss_weight",
              "class_reweighting", "fine_tune_atoms", "sketch_dim", "head_hidden",
              "latent_dim", "latent_hidden", "color_hidden"},
             where);
  read_double(j, "learning_rate", t.learning_rate, where);
  read_double(j, "momentum", t.momentum, where);
  read_double(j, "grad_clip", t.grad_clip, where);
  read_int(j, "stage1_epochs", t.stage1_epochs, where);
  read_int(j, "stage2_epochs", t.stage2_epochs, where);
  read_int(j, "color_epochs", t.color_epochs, where);
  read_int(j, "batch_size", t.batch_size, where);
  read_double(j, "attention_l2", t.attention_l2, where);
  read_int(j, "mil_top_t", t.mil_top_t, where);
  read_double(j, "pixel_loss_weight", t.pixel_loss_weight, where);
  read_bool(j, "class_reweighting", t.class_reweighting, where);
  read_bool(j, "fine_tune_atoms", t.fine_tune_atoms, where);
  read_int(j, "sketch_dim", t.sketch_dim, where);
  read_int(j, "head_hidden", t.head_hidden, where);
  read_int(j, "latent_dim", t.latent_dim, where);
  read_int(j, "latent_hidden", t.latent_hidden, where);
  read_int(j, "color_hidden", t.color_hidden, where);
}

void parse_grounding(const Json& j, GroundingConfig& g) {
  const std::string where = "grounding.";
  check_keys(j,
             {"sim_threshold", "reject_below_threshold", "heat_threshold", "scales", "stride",
              "nms_iou", "area_penalty", "windows_per_scale"},
             where);
  read_double(j, "sim_threshold", g.sim_threshold, where);
  read_bool(j, "reject_below_threshold", g.reject_below_threshold, where);
  auto& p = g.proposals;
  read_double(j, "heat_threshold", p.heat_threshold, where);
  read_int(j, "stride", p.stride, where);
  read_double(j, "nms_iou", p.nms_iou, where);
  read_double(j, "area_penalty", p.area_penalty, where);
  read_int(j, "windows_per_scale", p.windows_per_scale, where);
  if (j.contains("scales")) {
    const auto& s = j["scales"];
    if (!s.is_array()) throw ConfigError("grounding.scales must be an array of [w, h] pairs");
    p.scales.clear();
    for (const auto& pair : s) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
        throw ConfigError("grounding.scales entries must be [w, h] number pairs");
      }
      p.scales.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
  }
}

// ---- Flags ----

struct Flags {
  std::string config;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string embeddings, lexicon, entity_model, attribute_model, color_model, manifest;
  double learning_rate = 0, momentum = 0, grad_clip = 0, attention_l2 = 0,
         pixel_loss_weight = 0;
  int stage1_epochs = 0, stage2_epochs = 0, color_epochs = 0, batch_size = 0, mil_top_t = 0;
  bool fine_tune_atoms = false, no_reweighting = false;
  double sim_threshold = 0, heat_threshold = 0, nms_iou = 0, area_penalty = 0;
  bool no_reject = false;

  std::string query, features, out, out_dir, csv, scores;
  std::string caption = "word-entity";
  std::string mode = "argmax";
  std::vector<std::string> attributes;
  double iou = 0.5;
  bool pgm = false, verbose = false;
};

// Options registered on a subcommand, so the overlay only looks at those.
struct Registered {
  CLI::App* app = nullptr;
  bool given(const std::string& name) const {
    const CLI::Option* opt = app->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  }
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file; flags override it")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Seed for every random choice");
  sub->add_option("--threads", f.threads, "Worker cap (fallback: GROUNDER_THREADS)")
      ->check(CLI::PositiveNumber);
}

void add_grounding_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--sim-threshold", f.sim_threshold, "Cosine needed to resolve a token");
  sub->add_option("--heat-threshold", f.heat_threshold, "Heat needed for a proposal pixel");
  sub->add_option("--nms-iou", f.nms_iou, "NMS overlap threshold");
  sub->add_option("--area-penalty", f.area_penalty, "Box selection area penalty");
  sub->add_flag("--no-reject", f.no_reject, "Propose boxes even when G stays below threshold");
}

void add_train_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--lr", f.learning_rate, "Learning rate");
  sub->add_option("--momentum", f.momentum, "Momentum");
  sub->add_option("--grad-clip", f.grad_clip, "Gradient norm bound, 0 disables");
  sub->add_option("--batch-size", f.batch_size, "Batch size");
  sub->add_flag("--no-reweighting", f.no_reweighting, "Disable inverse-frequency weights");
  sub->add_flag("--verbose", f.verbose, "Print per-epoch statistics to stderr");
}

RunConfig build_config(const Registered& r, const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  auto path_flag = [&](const char* name, const std::string& value,
                       std::optional<fs::path>& dst) {
    if (r.given(name)) dst = value;
  };
  path_flag("--embeddings", f.embeddings, cfg.embeddings);
  path_flag("--lexicon", f.lexicon, cfg.lexicon);
  path_flag("--entity-model", f.entity_model, cfg.entity_model);
  path_flag("--attr-model", f.attribute_model, cfg.attribute_model);
  path_flag("--color-model", f.color_model, cfg.color_model);
  path_flag("--manifest", f.manifest, cfg.manifest);
  if (r.given("--seed")) cfg.seed = f.seed;
  if (r.given("--threads")) cfg.threads = f.threads;
  auto& t = cfg.train;
  if (r.given("--lr")) t.learning_rate = f.learning_rate;
  if (r.given("--momentum")) t.momentum = f.momentum;
  if (r.given("--grad-clip")) t.grad_clip = f.grad_clip;
  if (r.given("--stage1-epochs")) t.stage1_epochs = f.stage1_epochs;
  if (r.given("--stage2-epochs")) t.stage2_epochs = f.stage2_epochs;
  if (r.given("--epochs")) t.color_epochs = f.color_epochs;
  if (r.given("--batch-size")) t.batch_size = f.batch_size;
  if (r.given("--lambda")) t.attention_l2 = f.attention_l2;
  if (r.given("--mil-t")) t.mil_top_t = f.mil_top_t;
  if (r.given("--pixel-weight")) t.pixel_loss_weight = f.pixel_loss_weight;
  if (r.given("--fine-tune-atoms")) t.fine_tune_atoms = true;
  if (r.given("--no-reweighting")) t.class_reweighting = false;
  auto& g = cfg.grounding;
  if (r.given("--sim-threshold")) g.sim_threshold = f.sim_threshold;
  if (r.given("--heat-threshold")) g.proposals.heat_threshold = f.heat_threshold;
  if (r.given("--nms-iou")) g.proposals.nms_iou = f.nms_iou;
  if (r.given("--area-penalty")) g.proposals.area_penalty = f.area_penalty;
  if (r.given("--no-reject")) g.reject_below_threshold = false;
  t.seed = cfg.seed;
  t.threads = resolve_threads(cfg);
  t.validate();
  g.proposals.validate();
  if (!(g.sim_threshold > 0.0 && g.sim_threshold <= 1.0)) {
    throw ConfigError("sim_threshold must be in (0, 1]");
  }
  return cfg;
}

// Paths a command reads must exist before any work starts.
fs::path require_file(const std::optional<fs::path>& p, const std::string& flag) {
  if (!p) throw ConfigError("missing " + flag + " (flag or config key)");
  if (!fs::exists(*p)) throw NotFoundError(flag + ": no such file " + p->string());
  return *p;
}

std::optional<fs::path> optional_file(const std::optional<fs::path>& p,
                                      const std::string& flag) {
  if (p) require_file(p, flag);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

TrainObserver make_observer(bool verbose, std::ostream& err) {
  if (!verbose) return {};
  return [&err](const EpochStats& s) {
    OrderedJson j;
    j["stage"] = s.stage;
    j["epoch"] = s.epoch;
    j["loss"] = s.mean_loss;
    j["mean_r2"] = s.mean_r2;
    j["parameter_norm"] = s.parameter_norm;
    err << j.dump() << '\n';
  };
}

struct LoadedModels {
  std::optional<EntityModel> entity;
  std::optional<AttributeModel> attributes;
  std::optional<ColorModel> color;
  GroundingModels view() const {
    return {entity ? &*entity : nullptr, attributes ? &*attributes : nullptr,
            color ? &*color : nullptr};
  }
};

LoadedModels load_models(const RunConfig& cfg) {
  LoadedModels m;
  m.entity = load_entity_model(require_file(cfg.entity_model, "--entity-model"));
  if (auto p = optional_file(cfg.attribute_model, "--attr-model")) {
    m.attributes = load_attribute_model(*p);
  }
  if (auto p = optional_file(cfg.color_model, "--color-model")) m.color = load_color_model(*p);
  return m;
}

CaptionTemplate parse_caption(const std::string& name) {
  if (name == "word-entity") return CaptionTemplate::kWordEntity;
  if (name == "attribute-entity-color") return CaptionTemplate::kAttributeEntityColor;
  throw ConfigError("unknown caption template '" + name + "'");
}

// ---- Commands ----

int cmd_parse(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const Lexicon lexicon = load_lexicon(require_file(cfg.lexicon, "--lexicon"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  lexicon.validate(table);
  out << parsed_query_to_json(parse_query(f.query, lexicon, table, cfg.grounding.sim_threshold))
      << '\n';
  return kExitOk;
}

int cmd_ground(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const fs::path features = require_file(fs::path(f.features), "--features");
  const Lexicon lexicon = load_lexicon(require_file(cfg.lexicon, "--lexicon"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  const LoadedModels models = load_models(cfg);
  lexicon.validate(table);
  const FeatureMap v = read_fmap(features);
  const GroundingResult r = ground(f.query, v, models.view(), lexicon, table, cfg.grounding);
  if (!f.out_dir.empty()) {
    const fs::path dir = f.out_dir;
    fs::create_directories(dir);
    auto emit = [&](const std::string& name, const AttentionMap& map) {
      write_fmap(dir / (name + ".fmap"), map.to_feature_map());
      if (f.pgm) write_pgm(dir / (name + ".pgm"), map.to_feature_map());
    };
    emit("me", r.me);
    if (r.ma) emit("ma", *r.ma);
    if (r.mc) emit("mc", *r.mc);
    emit("g", r.g);
    write_text(dir / "boxes.json", boxes_to_json(r.boxes) + "\n");
    write_text(dir / "summary.json", grounding_summary_json(r));
  }
  out << grounding_summary_json(r);
  return kExitOk;
}

int cmd_train_entity(const RunConfig& cfg, const Flags& f, std::ostream& out,
                     std::ostream& err) {
  const DatasetManifest manifest = load_manifest(require_file(cfg.manifest, "--manifest"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  const EntityModel model = train_entity(manifest, table, cfg.train, make_observer(f.verbose, err));
  save_model(f.out, model);
  OrderedJson j;
  j["model"] = f.out;
  j["kind"] = "entity";
  j["classes"] = model.class_names;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_train_attr(const RunConfig& cfg, const Flags& f, std::ostream& out, std::ostream& err) {
  const DatasetManifest manifest = load_manifest(require_file(cfg.manifest, "--manifest"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  std::vector<std::string> names = f.attributes;
  if (names.empty()) names = load_lexicon(require_file(cfg.lexicon, "--lexicon")).attribute_corpus;
  const AttributeModel model =
      train_attributes(manifest, table, names, cfg.train, make_observer(f.verbose, err));
  save_model(f.out, model);
  OrderedJson j;
  j["model"] = f.out;
  j["kind"] = "attribute";
  j["attributes"] = model.dictionary.names;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_train_color(const RunConfig& cfg, const Flags& f, std::ostream& out,
                    std::ostream& err) {
  const DatasetManifest manifest = load_manifest(require_file(cfg.manifest, "--manifest"));
  const Lexicon lexicon = load_lexicon(require_file(cfg.lexicon, "--lexicon"));
  const ColorModel model =
      train_color(manifest, lexicon.color_names, cfg.train, make_observer(f.verbose, err));
  save_model(f.out, model);
  OrderedJson j;
  j["model"] = f.out;
  j["kind"] = "color";
  j["colors"] = model.color_names;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_eval_cf(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(require_file(cfg.manifest, "--manifest"));
  const Lexicon lexicon = load_lexicon(require_file(cfg.lexicon, "--lexicon"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  const LoadedModels models = load_models(cfg);
  lexicon.validate(table);
  const auto annotations = annotations_from_manifest(manifest);
  const CounterfactualCorpus corpus{lexicon.attribute_corpus, lexicon.color_names};
  const EvalReport report =
      evaluate_counterfactual(annotations, corpus, models.view(), lexicon, table, cfg.grounding,
                              parse_caption(f.caption), cfg.train.threads);
  const std::string json = report_to_json(report);
  if (f.out.empty()) {
    out << json << '\n';
  } else {
    write_text(f.out, json + "\n");
    OrderedJson j;
    j["report"] = f.out;
    j["auc"] = report.roc.auc;
    out << j.dump() << '\n';
  }
  if (!f.csv.empty()) write_text(f.csv, roc_to_csv(report.roc));
  return kExitOk;
}

int cmd_eval_loc(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const DatasetManifest manifest = load_manifest(require_file(cfg.manifest, "--manifest"));
  const Lexicon lexicon = load_lexicon(require_file(cfg.lexicon, "--lexicon"));
  const EmbeddingTable table = load_embeddings(require_file(cfg.embeddings, "--embeddings"));
  const LoadedModels models = load_models(cfg);
  lexicon.validate(table);
  const auto annotations = annotations_from_manifest(manifest);
  const EvalReport report = evaluate_localization(annotations, models.view(), lexicon, table,
                                                  cfg.grounding, f.iou, cfg.train.threads);
  OrderedJson j;
  j["accuracy"] = *report.accuracy;
  j["n_cases"] = report.n_cases;
  j["iou_threshold"] = f.iou;
  out << j.dump() << '\n';
  return kExitOk;
}

int cmd_align(const Flags& f, std::ostream& out) {
  const fs::path path = require_file(fs::path(f.scores), "--scores");
  std::ifstream in(path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw FormatError(path.string() + ": expected an array of rows");
  std::vector<std::vector<double>> scores;
  for (const auto& row : j) {
    if (!row.is_array()) throw FormatError(path.string() + ": every row must be an array");
    std::vector<double> r;
    for (const auto& v : row) {
      if (!v.is_number()) throw FormatError(path.string() + ": scores must be numbers");
      r.push_back(v.get<double>());
    }
    scores.push_back(std::move(r));
  }
  AlignMode mode;
  if (f.mode == "argmax") {
    mode = AlignMode::kArgmax;
  } else if (f.mode == "greedy-unique") {
    mode = AlignMode::kGreedyUnique;
  } else {
    throw ConfigError("unknown align mode '" + f.mode + "'");
  }
  const Alignment a = align_captions(scores, mode);
  OrderedJson result;
  result["mode"] = f.mode;
  result["frames"] = OrderedJson::array();
  for (const auto& frame : a.frame) {
    if (frame) {
      result["frames"].push_back(*frame);
    } else {
      result["frames"].push_back(nullptr);
    }
  }
  result["unassigned"] = a.unassigned;
  out << result.dump() << '\n';
  return kExitOk;
}

int cmd_selftest(const RunConfig& cfg, std::ostream& out) {
  const auto checks = run_selftest(cfg.seed);
  bool all = true;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  out << (all ? "all checks passed" : "some checks failed") << '\n';
  return all ? kExitOk : kExitRuntime;
}

// ---- Self-test checks ----

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::string format_error(const GradCheckReport& worst) {
  std::ostringstream s;
  s << "max relative error " << worst.max_relative_error;
  if (!worst.passed) s << " at " << worst.offending_parameter;
  return s.str();
}

SelfCheck check_sketch_estimator(std::uint64_t seed) {
  Rng rng({seed, 0x51u});
  std::vector<double> x(8), y(8);
  for (int i = 0; i < 8; ++i) {
    x[static_cast<std::size_t>(i)] = rng.normal();
    y[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] + 0.5 * rng.normal();
  }
  const double exact = dot(x, y);
  double total = 0.0;
  const int trials = 2000;
  for (int s = 0; s < trials; ++s) {
    const auto sketch_seed = seed * 1000003u + static_cast<std::uint64_t>(s);
    const SketchParams p = make_sketch_params(sketch_seed, 8, 8);
    total += dot(count_sketch(std::span<const double>(x), p),
                 count_sketch(std::span<const double>(y), p));
  }
  const double rel = std::abs(total / trials - exact) / std::abs(exact);
  return {"sketch-inner-product", rel <= 0.05, "relative error " + std::to_string(rel)};
}

SelfCheck check_fft_identity(std::uint64_t seed) {
  Rng rng({seed, 0x52u});
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int dt = 5, dv = 6, d = 16;
    const SketchParams pt = make_sketch_params(rng.next(), dt, d);
    const SketchParams pv = make_sketch_params(rng.next(), dv, d);
    std::vector<double> t(dt);
    std::vector<float> v(dv);
    for (auto& e : t) e = rng.normal();
    for (auto& e : v) e = static_cast<float>(rng.normal());
    const FeatureMap map(1, 1, dv, v);
    const Eigen::MatrixXd fast = mcb_pool_matrix(t, map, pt, pv, McbNormalization::kNone);
    std::vector<double> direct(d, 0.0);
    for (int i = 0; i < dt; ++i) {
      for (int j = 0; j < dv; ++j) {
        const auto bucket = (pt.bucket[static_cast<std::size_t>(i)] +
                             pv.bucket[static_cast<std::size_t>(j)]) % static_cast<unsigned>(d);
        direct[bucket] += pt.sign[static_cast<std::size_t>(i)] *
                          pv.sign[static_cast<std::size_t>(j)] * t[static_cast<std::size_t>(i)] *
                          static_cast<double>(v[static_cast<std::size_t>(j)]);
      }
    }
    for (int b = 0; b < d; ++b) {
      worst = std::max(worst, std::abs(fast(0, b) - direct[static_cast<std::size_t>(b)]));
    }
  }
  return {"fft-convolution-identity", worst <= 1e-6, "max abs error " + std::to_string(worst)};
}

SelfCheck check_dictionary_algebra(std::uint64_t seed) {
  Rng rng({seed, 0x53u});
  AttributeDictionary dict;
  dict.names = {"a", "b", "c"};
  dict.atoms = random_matrix(rng, 3, 4);
  const LatentTransforms id = LatentTransforms::identity(4);
  double worst = 0.0;
  bool in_range = true;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(4);
    for (auto& e : x) e = rng.normal();
    const auto fixed = dict_score_fixed(dict, x);
    const auto latent = dict_score_latent(dict, x, id);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
      worst = std::max(worst, std::abs(fixed[i] - latent[i]));
      in_range = in_range && fixed[i] > 0.0 && fixed[i] <= 1.0;
    }
  }
  std::vector<double> atom(4);
  for (int c = 0; c < 4; ++c) atom[static_cast<std::size_t>(c)] = dict.atoms(1, c);
  const bool exact_one = dict_score_fixed(dict, atom)[1] == 1.0;
  return {"dictionary-score-algebra", worst <= 1e-9 && in_range && exact_one,
          "identity-transform gap " + std::to_string(worst)};
}

SelfCheck check_merge(std::uint64_t) {
  const AttentionMap me(4, 4, 1.0f);
  const AttentionMap ma(4, 4, 0.3f);
  const AttentionMap mc(4, 4, 0.5f);
  const AttentionMap g = merge_maps(me, ma, mc);
  bool ok = true;
  for (std::size_t p = 0; p < g.size(); ++p) ok = ok && std::abs(g[p] - 0.8) < 1e-6;
  const AttentionMap zero(4, 4, 0.0f);
  const AttentionMap gz = merge_maps(zero, AttentionMap(4, 4, 1.0f), AttentionMap(4, 4, 1.0f));
  for (std::size_t p = 0; p < gz.size(); ++p) ok = ok && gz[p] == 0.0f;
  return {"merge-contract", ok, "G = Me (Ma + Mc) clamped to [0, 1]"};
}

// Zero biases put relu inputs exactly on the kink for pixels whose earlier
// units are all inactive; a small offset keeps the check point differentiable.
void jitter_biases(Mlp& mlp, Rng& rng) {
  for (auto& layer : mlp.layers()) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * rng.normal();
  }
}

SelfCheck check_gradients(std::uint64_t seed) {
  Rng rng({seed, 0x54u});
  const int pixels = 12, channels = 5, sketch = 8, atom_dim = 4;
  auto head = AttentionHeadParams::make_default(sketch, rng, 6);
  jitter_biases(head.mlp(), rng);
  const Eigen::MatrixXd w = random_matrix(rng, 3, channels);
  auto transforms = LatentTransforms::make_default(channels, atom_dim, rng, 6, 5);
  jitter_biases(transforms.phi, rng);
  jitter_biases(transforms.psi, rng);
  const Eigen::MatrixXd atoms = random_matrix(rng, 2, atom_dim, 0.5);
  const AttributeLossConfig acfg{{0.7, 1.3}, 0.8, 0.05, 3};

  // A tied top-T selection is not differentiable; redraw the sample.
  for (int attempt = 0; attempt < 10; ++attempt) {
    const Eigen::MatrixXd features = random_matrix(rng, pixels, channels);
    const Eigen::MatrixXd phi = random_matrix(rng, pixels, sketch);
    AttributeSample as;
    as.phi = {phi, phi * 0.5};
    as.features = features;
    as.labels = {1, 0};
    GradCheckProblem attribute_problem;
    try {
      attribute_problem = attribute_grad_problem(head, atoms, transforms, as, acfg);
    } catch (const TieError&) {
      continue;
    }
    const EntitySample es{phi, features, 1, 1.3};
    const auto entity = grad_check(entity_grad_problem(head, w, es, 0.1), 1e-5, 1e-4);
    const auto attribute = grad_check(attribute_problem, 1e-5, 1e-4);

    const int widths[] = {kColorInputChannels, 6, 4};
    const Activation acts[] = {Activation::kRelu, Activation::kIdentity};
    Mlp color = Mlp::glorot(widths, acts, rng);
    jitter_biases(color, rng);
    std::vector<int> labels(pixels);
    for (int i = 0; i < pixels; ++i) labels[static_cast<std::size_t>(i)] = i % 5 - 1;
    const auto colors = grad_check(
        color_grad_problem(color, features.leftCols(kColorInputChannels), labels), 1e-5, 1e-4);

    const GradCheckReport* worst = &entity;
    for (const auto* r : {&attribute, &colors}) {
      if (r->max_relative_error > worst->max_relative_error) worst = r;
    }
    return {"analytic-gradients", entity.passed && attribute.passed && colors.passed,
            format_error(*worst)};
  }
  return {"analytic-gradients", false, "every drawn sample had a tied top-T selection"};
}

SelfCheck check_roc(std::uint64_t seed) {
  Rng rng({seed, 0x55u});
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pos(7), neg(9);
    for (auto& s : pos) s = std::round(rng.uniform() * 10.0) / 10.0;
    for (auto& s : neg) s = std::round(rng.uniform() * 10.0) / 10.0;
    double wins = 0.0;
    for (double p : pos) {
      for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    }
    const double oracle = wins / static_cast<double>(pos.size() * neg.size());
    worst = std::max(worst, std::abs(roc_auc(pos, neg).auc - oracle));
    worst = std::max(worst, std::abs(roc_auc(neg, pos).auc - (1.0 - oracle)));
  }
  return {"roc-auc-pairwise", worst <= 1e-12, "max gap " + std::to_string(worst)};
}

SelfCheck check_nms(std::uint64_t seed) {
  Rng rng({seed, 0x56u});
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> boxes;
    for (int i = 0; i < 12; ++i) {
      Box b;
      b.x = rng.uniform_int(0, 10);
      b.y = rng.uniform_int(0, 10);
      b.w = rng.uniform_int(1, 6);
      b.h = rng.uniform_int(1, 6);
      b.score = rng.uniform();
      boxes.push_back(b);
    }
    const auto once = nms(boxes, 0.5);
    ok = ok && nms(once, 0.5) == once;
    for (std::size_t i = 0; i < once.size(); ++i) {
      for (std::size_t j = i + 1; j < once.size(); ++j) ok = ok && iou(once[i], once[j]) < 0.5;
    }
  }
  return {"nms-idempotent", ok, "50 random box sets"};
}

}  // namespace

RunConfig parse_run_config(const Json& j, const fs::path& base_dir) {
  check_keys(j,
             {"embeddings", "lexicon", "entity_model", "attribute_model", "color_model",
              "manifest", "seed", "threads", "train", "grounding"},
             "");
  RunConfig cfg;
  read_path(j, "embeddings", cfg.embeddings, base_dir);
  read_path(j, "lexicon", cfg.lexicon, base_dir);
  read_path(j, "entity_model", cfg.entity_model, base_dir);
  read_path(j, "attribute_model", cfg.attribute_model, base_dir);
  read_path(j, "color_model", cfg.color_model, base_dir);
  read_path(j, "manifest", cfg.manifest, base_dir);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("threads")) {
    int threads = 0;
    read_int(j, "threads", threads, "");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    cfg.threads = threads;
  }
  if (j.contains("train")) parse_train(j["train"], cfg.train);
  if (j.contains("grounding")) parse_grounding(j["grounding"], cfg.grounding);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

int resolve_threads(const RunConfig& cfg) {
  if (cfg.threads) return *cfg.threads;
  const char* env = std::getenv("GROUNDER_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (*end != '\0' || value < 1 || value > 1024) {
    throw ConfigError(std::string("GROUNDER_THREADS must be a positive integer, got '") + env +
                      "'");
  }
  return static_cast<int>(value);
}

std::vector<SelfCheck> run_selftest(std::uint64_t seed) {
  return {check_sketch_estimator(seed), check_fft_identity(seed), check_dictionary_algebra(seed),
          check_merge(seed),            check_gradients(seed),    check_roc(seed),
          check_nms(seed)};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Textual grounding with entity, attribute and color attention", "grounder"};
  app.require_subcommand(1, 1);
  Flags f;

  auto* parse = app.add_subcommand("parse", "Split a query into entity, attributes and colors");
  add_common(parse, f);
  parse->add_option("--query", f.query, "Query text")->required();
  parse->add_option("--lexicon", f.lexicon, "Lexicon JSON");
  parse->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  parse->add_option("--sim-threshold", f.sim_threshold, "Cosine needed to resolve a token");

  auto* ground_cmd = app.add_subcommand("ground", "Ground a query in one feature map");
  add_common(ground_cmd, f);
  ground_cmd->add_option("--features", f.features, "FMAP feature file")->required();
  ground_cmd->add_option("--query", f.query, "Query text")->required();
  ground_cmd->add_option("--lexicon", f.lexicon, "Lexicon JSON");
  ground_cmd->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  ground_cmd->add_option("--entity-model", f.entity_model, "Entity model file");
  ground_cmd->add_option("--attr-model", f.attribute_model, "Attribute model file");
  ground_cmd->add_option("--color-model", f.color_model, "Color model file");
  ground_cmd->add_option("--out-dir", f.out_dir, "Directory for maps, boxes and summary");
  ground_cmd->add_flag("--pgm", f.pgm, "Also write PGM heatmaps");
  add_grounding_flags(ground_cmd, f);

  auto* train_e = app.add_subcommand("train-entity", "Train the entity module");
  add_common(train_e, f);
  train_e->add_option("--manifest", f.manifest, "Training manifest (JSON lines)");
  train_e->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  train_e->add_option("--out", f.out, "Model file to write")->required();
  train_e->add_option("--stage1-epochs", f.stage1_epochs, "Classifier epochs");
  train_e->add_option("--stage2-epochs", f.stage2_epochs, "Attention epochs");
  train_e->add_option("--lambda", f.attention_l2, "Attention L2 weight");
  add_train_flags(train_e, f);

  auto* train_a = app.add_subcommand("train-attr", "Train the attribute module");
  add_common(train_a, f);
  train_a->add_option("--manifest", f.manifest, "Training manifest (JSON lines)");
  train_a->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  train_a->add_option("--lexicon", f.lexicon, "Lexicon JSON (attribute corpus)");
  train_a->add_option("--attributes", f.attributes, "Attribute names (default: lexicon corpus)");
  train_a->add_option("--out", f.out, "Model file to write")->required();
  train_a->add_option("--stage1-epochs", f.stage1_epochs, "Latent transform epochs");
  train_a->add_option("--stage2-epochs", f.stage2_epochs, "Attention epochs");
  train_a->add_option("--lambda", f.attention_l2, "Attention L2 weight");
  train_a->add_option("--mil-t", f.mil_top_t, "Top-T pixels for the MIL loss, 0 for default");
  train_a->add_option("--pixel-weight", f.pixel_loss_weight, "Weight of the pixel loss");
  train_a->add_flag("--fine-tune-atoms", f.fine_tune_atoms, "Let dictionary atoms train");
  add_train_flags(train_a, f);

  auto* train_c = app.add_subcommand("train-color", "Train the color module");
  add_common(train_c, f);
  train_c->add_option("--manifest", f.manifest, "Training manifest with color labels");
  train_c->add_option("--lexicon", f.lexicon, "Lexicon JSON (color names)");
  train_c->add_option("--out", f.out, "Model file to write")->required();
  train_c->add_option("--epochs", f.color_epochs, "Epochs");
  add_train_flags(train_c, f);

  auto* eval_cf = app.add_subcommand("eval-cf", "Counterfactual ROC over a manifest");
  add_common(eval_cf, f);
  eval_cf->add_option("--manifest", f.manifest, "Evaluation manifest (JSON lines)");
  eval_cf->add_option("--lexicon", f.lexicon, "Lexicon JSON");
  eval_cf->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  eval_cf->add_option("--entity-model", f.entity_model, "Entity model file");
  eval_cf->add_option("--attr-model", f.attribute_model, "Attribute model file");
  eval_cf->add_option("--color-model", f.color_model, "Color model file");
  eval_cf->add_option("--template", f.caption, "word-entity or attribute-entity-color");
  eval_cf->add_option("--out", f.out, "Report JSON path (default: stdout)");
  eval_cf->add_option("--csv", f.csv, "ROC CSV path");
  add_grounding_flags(eval_cf, f);

  auto* eval_loc = app.add_subcommand("eval-loc", "Localization accuracy over a manifest");
  add_common(eval_loc, f);
  eval_loc->add_option("--manifest", f.manifest, "Evaluation manifest (JSON lines)");
  eval_loc->add_option("--lexicon", f.lexicon, "Lexicon JSON");
  eval_loc->add_option("--embeddings", f.embeddings, "GloVe-format word vectors");
  eval_loc->add_option("--entity-model", f.entity_model, "Entity model file");
  eval_loc->add_option("--attr-model", f.attribute_model, "Attribute model file");
  eval_loc->add_option("--color-model", f.color_model, "Color model file");
  eval_loc->add_option("--iou", f.iou, "IoU needed for a hit")->check(CLI::Range(0.0, 1.0));
  add_grounding_flags(eval_loc, f);

  auto* align = app.add_subcommand("align", "Assign captions to frames");
  add_common(align, f);
  align->add_option("--scores", f.scores, "JSON matrix, captions x frames")->required();
  align->add_option("--mode", f.mode, "argmax or greedy-unique");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in property checks");
  add_common(selftest, f);

  if (!args.empty() && !args.front().starts_with('-') &&
      app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return kExitValidation;
  }
  std::vector<std::string> argv_store{"grounder"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    CLI::App* shown = &app;
    for (auto* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return kExitValidation;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const RunConfig cfg = build_config(Registered{sub}, f);
    const std::string name = sub->get_name();
    if (name == "parse") return cmd_parse(cfg, f, out);
    if (name == "ground") return cmd_ground(cfg, f, out);
    if (name == "train-entity") return cmd_train_entity(cfg, f, out, err);
    if (name == "train-attr") return cmd_train_attr(cfg, f, out, err);
    if (name == "train-color") return cmd_train_color(cfg, f, out, err);
    if (name == "eval-cf") return cmd_eval_cf(cfg, f, out);
    if (name == "eval-loc") return cmd_eval_loc(cfg, f, out);
    if (name == "align") return cmd_align(f, out);
    return cmd_selftest(cfg, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace grounder::app
