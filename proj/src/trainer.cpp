#include "grounder/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grounder/errors.hpp"
#include "grounder/fmap_io.hpp"
#include "grounder/numerics.hpp"
#include "grounder/parallel.hpp"
#include "grounder/rng.hpp"
#include "grounder/sketch_attention.hpp"

namespace grounder {

namespace {

using Json = nlohmann::json;

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void momentum_step(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad,
                   Eigen::MatrixXd& velocity, double lr, double mu) {
  velocity = mu * velocity - lr * grad;
  param += velocity;
}

// Scale that brings a gradient of the given squared norm within the bound.
double clip_scale(double squared_norm, double bound) {
  if (bound <= 0.0) return 1.0;
  const double norm = std::sqrt(squared_norm);
  return norm > bound ? bound / norm : 1.0;
}

double mlp_squared_norm(const Mlp& m) {
  double s = 0.0;
  for (const auto& l : m.layers()) s += l.weights.squaredNorm() + l.bias.squaredNorm();
  return s;
}

void check_finite(double loss, const std::string& stage, int epoch, std::size_t batch,
                  double parameter_norm) {
  if (std::isfinite(loss)) return;
  std::ostringstream msg;
  msg << stage << ": non-finite loss at epoch " << epoch << ", batch " << batch
      << " (parameter norm " << parameter_norm << ")";
  throw TrainingError(msg.str());
}

struct LoadedRecord {
  FeatureMap features;
  Eigen::MatrixXd rows;  // P x C
};

std::vector<LoadedRecord> load_features(const DatasetManifest& manifest) {
  std::vector<LoadedRecord> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    LoadedRecord r;
    r.features = read_fmap(rec.features_path);
    if (!out.empty()) {
      const auto& first = out.front().features;
      if (r.features.height() != first.height() || r.features.width() != first.width() ||
          r.features.channels() != first.channels()) {
        throw DataError("manifest: " + rec.features_path.string() +
                        " differs in shape from the first record");
      }
    }
    r.rows = feature_rows(r.features);
    out.push_back(std::move(r));
  }
  return out;
}

Eigen::VectorXd pooled(const Eigen::MatrixXd& rows) {
  return rows.colwise().mean().transpose();
}

// Sketch seeds derived from the training seed.
std::uint64_t text_sketch_seed(std::uint64_t seed) { return seed * 2 + 1; }
std::uint64_t visual_sketch_seed(std::uint64_t seed) { return seed * 2 + 2; }

std::vector<double> row_vector(const Eigen::MatrixXd& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

void append(std::vector<double>& out, const std::vector<double>& v) {
  out.insert(out.end(), v.begin(), v.end());
}

std::vector<double> flatten_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  }
  return out;
}

void assign_matrix(Eigen::MatrixXd& m, std::span<const double> v) {
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v[k++];
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (stage1_epochs < 1 || stage2_epochs < 1 || color_epochs < 1) {
    throw ConfigError("epochs must be >= 1");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(attention_l2 >= 0.0)) throw ConfigError("attention_l2 must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (mil_top_t < 0) throw ConfigError("mil_top_t must be >= 0");
  if (!(pixel_loss_weight >= 0.0)) throw ConfigError("pixel_loss_weight must be >= 0");
  if (sketch_dim < 1 || !is_power_of_two(static_cast<std::size_t>(sketch_dim))) {
    throw ConfigError("sketch_dim must be a power of two");
  }
  if (head_hidden < 1 || latent_dim < 1 || latent_hidden < 1 || color_hidden < 1) {
    throw ConfigError("layer widths must be >= 1");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

// ---- Manifest ----

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": expected an object");
    ManifestRecord rec;
    try {
      if (!j.contains("features_path")) throw FormatError(where + ": missing features_path");
      rec.features_path = resolve(j.at("features_path").get<std::string>());
      if (j.contains("entity") && !j["entity"].is_null()) {
        rec.entity = j["entity"].get<std::string>();
      }
      if (j.contains("attributes")) {
        rec.attributes = j["attributes"].get<std::vector<std::string>>();
      }
      if (j.contains("colors")) rec.colors = j["colors"].get<std::vector<std::string>>();
      if (j.contains("color_labels_path") && !j["color_labels_path"].is_null()) {
        rec.color_labels_path = resolve(j["color_labels_path"].get<std::string>());
      }
      if (j.contains("box") && !j["box"].is_null()) {
        const auto& b = j["box"];
        Box box;
        box.x = b.at("x").get<int>();
        box.y = b.at("y").get<int>();
        box.w = b.at("w").get<int>();
        box.h = b.at("h").get<int>();
        if (box.w < 1 || box.h < 1 || box.x < 0 || box.y < 0) {
          throw FormatError(where + ": invalid box");
        }
        rec.box = box;
      }
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open manifest " + path.string());
  auto manifest = parse_manifest(in, path.parent_path());
  for (const auto& rec : manifest.records) {
    if (!std::filesystem::exists(rec.features_path)) {
      throw NotFoundError("manifest " + path.string() + ": missing " +
                          rec.features_path.string());
    }
  }
  return manifest;
}

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ConfigError("class_weights: no classes");
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw ConfigError("class_weights: class " + std::to_string(i) + " has no examples");
    }
    w.push_back(1.0 / static_cast<double>(counts[i]));
  }
  // Balanced counts give exactly 1, so reweighting leaves the loss untouched.
  if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end()) {
    return std::vector<double>(counts.size(), 1.0);
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return w;
}

// ---- Losses ----

double classifier_loss(const Eigen::MatrixXd& w, const Eigen::VectorXd& f, int label,
                       double weight, Eigen::MatrixXd* d_weights, Eigen::VectorXd* d_features) {
  if (label < 0 || label >= w.rows()) throw DimensionError("classifier_loss: label out of range");
  if (f.size() != w.cols()) throw DimensionError("classifier_loss: feature width mismatch");
  const Eigen::VectorXd logits = w * f;
  const double m = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  const double z = e.sum();
  const Eigen::VectorXd p = e / z;
  const double loss = weight * (std::log(z) + m - logits(label));
  Eigen::VectorXd d_logits = weight * p;
  d_logits(label) -= weight;
  if (d_weights != nullptr) *d_weights += d_logits * f.transpose();
  if (d_features != nullptr) *d_features = w.transpose() * d_logits;
  return loss;
}

EntityGrad EntityGrad::zeros_like(const AttentionHeadParams& head, const Eigen::MatrixXd& w) {
  EntityGrad g;
  g.head = MlpGrad::zeros_like(head.mlp());
  g.classifier = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  return g;
}

double entity_attention_loss(const AttentionHeadParams& head, const Eigen::MatrixXd& w,
                             const EntitySample& s,
                             double lambda, EntityGrad* grad, double* mean_r2) {
  const double pixels = static_cast<double>(s.features.rows());
  const MlpTape tape = forward_tape(head.mlp(), s.phi);
  const Eigen::VectorXd r = tape.output().col(0);
  const Eigen::VectorXd f = s.features.transpose() * r / pixels;
  Eigen::VectorXd d_f;
  const double ce =
      classifier_loss(w, f, s.label, s.weight, grad ? &grad->classifier : nullptr, &d_f);
  const double r2 = r.squaredNorm() / pixels;
  if (mean_r2 != nullptr) *mean_r2 = r2;
  if (grad != nullptr) {
    const Eigen::MatrixXd d_r = s.features * d_f / pixels + (2.0 * lambda) * r;
    backward(head.mlp(), tape, d_r, &grad->head);
  }
  return ce + lambda * r.squaredNorm();
}

AttributeGrad AttributeGrad::zeros_like(const AttentionHeadParams& head,
                                        const LatentTransforms& t,
                                        const Eigen::MatrixXd& atoms) {
  AttributeGrad g;
  g.head = MlpGrad::zeros_like(head.mlp());
  g.phi = MlpGrad::zeros_like(t.phi);
  g.psi = MlpGrad::zeros_like(t.psi);
  g.atoms = Eigen::MatrixXd::Zero(atoms.rows(), atoms.cols());
  return g;
}

namespace {

// Routes a latent-score backward pass into an AttributeGrad and returns the
// feature gradient.
Eigen::MatrixXd latent_backward_into(const LatentTransforms& t, const LatentScoreTape& tape,
                                     const Eigen::MatrixXd& d_scores, AttributeGrad* grad) {
  LatentScoreGrad lg;
  lg.phi = std::move(grad->phi);
  lg.psi = std::move(grad->psi);
  latent_scores_backward(t, tape, d_scores, &lg);
  grad->phi = std::move(lg.phi);
  grad->psi = std::move(lg.psi);
  grad->atoms += lg.atoms;
  return lg.features;
}

}  // namespace

namespace {

// Global and pixel terms for attribute i given its attention column r.
// Accumulates transform/atom gradients into *grad and returns dL/dr.
double attribute_terms(const Eigen::MatrixXd& atoms, const LatentTransforms& transforms,
                       const Eigen::MatrixXd& features, const Eigen::VectorXd& r,
                       std::size_t i, int label, const AttributeLossConfig& cfg,
                       AttributeGrad* grad, Eigen::VectorXd* d_r, std::vector<double>* scores_out) {
  const auto col = static_cast<Eigen::Index>(i);
  const Eigen::Index pixels = features.rows();
  const double p_count = static_cast<double>(pixels);
  const double weight = cfg.weights[i];

  // Global term on the attended mean feature.
  const Eigen::MatrixXd f = (features.transpose() * r / p_count).transpose();
  const LatentScoreTape g_tape = latent_scores(f, atoms, transforms);
  const double y = g_tape.scores(0, col);
  double loss = weight * binary_cross_entropy(y, label);

  // Pixel term on R(p) v(p).
  const Eigen::MatrixXd x = features.array().colwise() * r.array();
  const LatentScoreTape p_tape = latent_scores(x, atoms, transforms);
  std::vector<double> scores(static_cast<std::size_t>(pixels));
  for (Eigen::Index p = 0; p < pixels; ++p) {
    scores[static_cast<std::size_t>(p)] = p_tape.scores(p, col);
  }
  const MilLoss mil = mil_topT_loss(scores, label, cfg.top_t);
  loss += weight * cfg.pixel_weight * mil.loss;
  if (scores_out != nullptr) *scores_out = std::move(scores);
  if (grad == nullptr) return loss;

  Eigen::MatrixXd d_global = Eigen::MatrixXd::Zero(1, atoms.rows());
  d_global(0, col) = weight * binary_cross_entropy_derivative(y, label);
  const Eigen::MatrixXd d_f = latent_backward_into(transforms, g_tape, d_global, grad);

  Eigen::MatrixXd d_pixel = Eigen::MatrixXd::Zero(pixels, atoms.rows());
  for (Eigen::Index p = 0; p < pixels; ++p) {
    d_pixel(p, col) = weight * cfg.pixel_weight * mil.gradient[static_cast<std::size_t>(p)];
  }
  const Eigen::MatrixXd d_x = latent_backward_into(transforms, p_tape, d_pixel, grad);
  if (d_r != nullptr) {
    *d_r = features * d_f.transpose().col(0) / p_count;
    *d_r += d_x.cwiseProduct(features).rowwise().sum();
  }
  return loss;
}

void check_attribute_inputs(std::size_t n_attr, std::size_t labels,
                            const AttributeLossConfig& cfg) {
  if (labels != n_attr || cfg.weights.size() != n_attr) {
    throw DimensionError("attribute loss: per-attribute inputs disagree with the dictionary");
  }
}

}  // namespace

double attribute_loss(const AttentionHeadParams& head, const Eigen::MatrixXd& atoms,
                      const LatentTransforms& transforms, const AttributeSample& s,
                      const AttributeLossConfig& cfg, AttributeGrad* grad, double* mean_r2,
                      std::vector<std::vector<double>>* pixel_scores) {
  const auto n_attr = static_cast<std::size_t>(atoms.rows());
  check_attribute_inputs(n_attr, s.labels.size(), cfg);
  if (s.phi.size() != n_attr) {
    throw DimensionError("attribute_loss: one pooled map per attribute required");
  }
  double loss = 0.0;
  double r2_total = 0.0;
  if (pixel_scores != nullptr) pixel_scores->assign(n_attr, {});
  for (std::size_t i = 0; i < n_attr; ++i) {
    const MlpTape tape = forward_tape(head.mlp(), s.phi[i]);
    const Eigen::VectorXd r = tape.output().col(0);
    r2_total += r.squaredNorm();
    Eigen::VectorXd d_r;
    loss += attribute_terms(atoms, transforms, s.features, r, i, s.labels[i], cfg, grad, &d_r,
                            pixel_scores ? &(*pixel_scores)[i] : nullptr);
    if (grad == nullptr) continue;
    d_r += (2.0 * cfg.lambda) * r;
    backward(head.mlp(), tape, d_r, &grad->head);
  }
  if (mean_r2 != nullptr) {
    *mean_r2 = r2_total / (static_cast<double>(s.features.rows()) * static_cast<double>(n_attr));
  }
  return loss + cfg.lambda * r2_total;
}

double attribute_plain_loss(const Eigen::MatrixXd& atoms, const LatentTransforms& transforms,
                            const Eigen::MatrixXd& features, std::span<const int> labels,
                            const AttributeLossConfig& cfg, AttributeGrad* grad) {
  const auto n_attr = static_cast<std::size_t>(atoms.rows());
  check_attribute_inputs(n_attr, labels.size(), cfg);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(features.rows());
  double loss = 0.0;
  for (std::size_t i = 0; i < n_attr; ++i) {
    loss += attribute_terms(atoms, transforms, features, ones, i, labels[i], cfg, grad, nullptr,
                            nullptr);
  }
  return loss;
}

double color_loss(const Mlp& transform, const Eigen::MatrixXd& pixels,
                  std::span<const int> labels, MlpGrad* grad) {
  if (static_cast<std::size_t>(pixels.rows()) != labels.size()) {
    throw DimensionError("color_loss: one label per pixel required");
  }
  const MlpTape tape = forward_tape(transform, pixels);
  const Eigen::MatrixXd& logits = tape.output();
  const int classes = static_cast<int>(logits.cols());
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  double loss = 0.0;
  double labeled = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] >= 0) labeled += 1.0;
  }
  if (labeled == 0.0) return 0.0;
  for (Eigen::Index p = 0; p < logits.rows(); ++p) {
    const int label = labels[static_cast<std::size_t>(p)];
    if (label < 0) continue;
    if (label >= classes) throw DataError("color_loss: label out of range");
    const double m = logits.row(p).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(p).array() - m).exp().matrix();
    const double z = e.sum();
    loss += std::log(z) + m - logits(p, label);
    d_logits.row(p) = e / z / labeled;
    d_logits(p, label) -= 1.0 / labeled;
  }
  if (grad != nullptr) backward(transform, tape, d_logits, grad);
  return loss / labeled;
}

// ---- Training ----

EntityModel train_entity(const DatasetManifest& manifest, const EmbeddingTable& table,
                         const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  if (manifest.records.empty()) throw ConfigError("train_entity: empty manifest");
  std::set<std::string> class_set;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    if (!rec.entity) {
      throw ConfigError("train_entity: record " + std::to_string(i) + " has no entity label");
    }
    class_set.insert(*rec.entity);
  }
  if (class_set.size() < 2) throw ConfigError("train_entity: need at least two classes");

  EntityModel model;
  model.class_names.assign(class_set.begin(), class_set.end());
  for (const auto& name : model.class_names) table.lookup(name);

  const auto data = load_features(manifest);
  const std::size_t n = data.size();
  const int channels = data.front().features.channels();
  const int k = static_cast<int>(model.class_names.size());
  std::vector<int> labels(n);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = model.class_index(*manifest.records[i].entity);
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  const std::vector<double> weights =
      cfg.class_reweighting ? class_weights(counts) : std::vector<double>(counts.size(), 1.0);

  Rng init_rng({cfg.seed, 0x1u});
  Rng order_rng({cfg.seed, 0x2u});
  {
    const int widths[] = {channels, k};
    const Activation acts[] = {Activation::kIdentity};
    const Mlp linear = Mlp::glorot(widths, acts, init_rng);
    model.classifier_weights = linear.layers().front().weights;
  }
  Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(k, channels);
  auto classifier_norm = [&] {
    return model.classifier_weights.squaredNorm();
  };

  // Stage 1: classifier on pooled features.
  std::vector<Eigen::VectorXd> pooled_features(n);
  for (std::size_t i = 0; i < n; ++i) pooled_features[i] = pooled(data[i].rows);
  for (int epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, order_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      Eigen::MatrixXd g = Eigen::MatrixXd::Zero(k, channels);
      double loss = 0.0;
      for (std::size_t idx : batch) {
        loss += classifier_loss(model.classifier_weights, pooled_features[idx], labels[idx],
                                weights[static_cast<std::size_t>(labels[idx])], &g);
      }
      check_finite(loss, "train_entity stage 1", epoch, bi, std::sqrt(classifier_norm()));
      g /= static_cast<double>(batch.size());
      g *= clip_scale(g.squaredNorm(), cfg.grad_clip);
      momentum_step(model.classifier_weights, g, vw, cfg.learning_rate, cfg.momentum);
      epoch_loss += loss;
    }
    if (observer) {
      observer({"entity-classifier", epoch, epoch_loss / static_cast<double>(n), 0.0,
                std::sqrt(classifier_norm())});
    }
  }

  // Stage 2: attention head over MCB(label word, v), classifier continues.
  model.text_sketch = make_sketch_params(text_sketch_seed(cfg.seed),
                                         static_cast<int>(table.dim()), cfg.sketch_dim);
  model.visual_sketch = make_sketch_params(visual_sketch_seed(cfg.seed), channels,
                                           cfg.sketch_dim);
  model.head = AttentionHeadParams::make_default(cfg.sketch_dim, init_rng, cfg.head_hidden);
  std::vector<Eigen::MatrixXf> phis(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& word = table.lookup(model.class_names[static_cast<std::size_t>(labels[i])]);
    phis[i] = mcb_pool_matrix(word, data[i].features, model.text_sketch, model.visual_sketch)
                  .cast<float>();
  }
  MomentumState head_state = MomentumState::for_mlp(model.head.mlp());
  vw.setZero();
  auto total_norm = [&] {
    return std::sqrt(classifier_norm() + mlp_squared_norm(model.head.mlp()));
  };
  struct SampleOut {
    double loss = 0.0;
    double r2 = 0.0;
    EntityGrad grad;
  };
  for (int epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    double epoch_loss = 0.0;
    double epoch_r2 = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, order_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      auto outs = map_indices<SampleOut>(batch.size(), cfg.threads, [&](std::size_t j) {
        const std::size_t idx = batch[j];
        EntitySample sample{phis[idx].cast<double>(), data[idx].rows, labels[idx],
                            weights[static_cast<std::size_t>(labels[idx])]};
        SampleOut o;
        o.grad = EntityGrad::zeros_like(model.head, model.classifier_weights);
        o.loss = entity_attention_loss(model.head, model.classifier_weights, sample,
                                       cfg.attention_l2, &o.grad, &o.r2);
        return o;
      });
      EntityGrad g = EntityGrad::zeros_like(model.head, model.classifier_weights);
      double loss = 0.0;
      for (const auto& o : outs) {
        loss += o.loss;
        epoch_r2 += o.r2;
        g.head.add(o.grad.head);
        g.classifier += o.grad.classifier;
      }
      check_finite(loss, "train_entity stage 2", epoch, bi, total_norm());
      g.head.scale(1.0 / static_cast<double>(batch.size()));
      g.classifier /= static_cast<double>(batch.size());
      const double clip =
          clip_scale(g.head.squared_norm() + g.classifier.squaredNorm(), cfg.grad_clip);
      g.head.scale(clip);
      g.classifier *= clip;
      sgd_step(model.head.mlp(), g.head, head_state, cfg.learning_rate, cfg.momentum);
      momentum_step(model.classifier_weights, g.classifier, vw, cfg.learning_rate, cfg.momentum);
      epoch_loss += loss;
    }
    if (observer) {
      observer({"entity-attention", epoch, epoch_loss / static_cast<double>(n),
                epoch_r2 / static_cast<double>(n), total_norm()});
    }
  }
  model.validate();
  return model;
}

AttributeModel train_attributes(const DatasetManifest& manifest, const EmbeddingTable& table,
                                const std::vector<std::string>& attribute_names,
                                const TrainConfig& cfg, const TrainObserver& observer) {
  cfg.validate();
  if (manifest.records.empty()) throw ConfigError("train_attributes: empty manifest");
  if (attribute_names.empty()) throw ConfigError("train_attributes: no attribute names");
  AttributeModel model;
  model.dictionary = AttributeDictionary::from_table(attribute_names, table);
  model.dictionary.frozen = !cfg.fine_tune_atoms;
  const auto n_attr = static_cast<std::size_t>(model.dictionary.size());

  std::vector<std::vector<int>> labels(manifest.records.size(), std::vector<int>(n_attr, 0));
  std::vector<std::size_t> counts(n_attr, 0);
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    for (const auto& token : manifest.records[r].attributes) {
      const int idx = model.dictionary.index_of(token);
      if (idx < 0) {
        throw ConfigError("train_attributes: record " + std::to_string(r) + " uses '" +
                          token + "', which is not in the dictionary");
      }
      labels[r][static_cast<std::size_t>(idx)] = 1;
    }
    for (std::size_t i = 0; i < n_attr; ++i) counts[i] += static_cast<std::size_t>(labels[r][i]);
  }
  const std::vector<double> weights =
      cfg.class_reweighting ? class_weights(counts) : std::vector<double>(n_attr, 1.0);

  const auto data = load_features(manifest);
  const std::size_t n = data.size();
  const int channels = data.front().features.channels();
  const std::size_t pixels = data.front().features.pixel_count();
  const std::size_t top_t =
      cfg.mil_top_t > 0 ? static_cast<std::size_t>(cfg.mil_top_t) : default_top_t(pixels);

  Rng init_rng({cfg.seed, 0x11u});
  Rng order_rng({cfg.seed, 0x12u});
  model.transforms = LatentTransforms::make_default(channels, model.dictionary.dim(), init_rng,
                                                    cfg.latent_dim, cfg.latent_hidden);
  MomentumState phi_state = MomentumState::for_mlp(model.transforms.phi);
  MomentumState psi_state = MomentumState::for_mlp(model.transforms.psi);
  Eigen::MatrixXd atom_velocity = Eigen::MatrixXd::Zero(model.dictionary.atoms.rows(),
                                                        model.dictionary.atoms.cols());
  auto apply = [&](AttributeGrad& g, double scale, MomentumState* head_state) {
    double sq = scale * scale * (g.phi.squared_norm() + g.psi.squared_norm());
    if (head_state != nullptr) sq += scale * scale * g.head.squared_norm();
    if (!model.dictionary.frozen) sq += scale * scale * g.atoms.squaredNorm();
    scale *= clip_scale(sq, cfg.grad_clip);
    g.phi.scale(scale);
    g.psi.scale(scale);
    sgd_step(model.transforms.phi, g.phi, phi_state, cfg.learning_rate, cfg.momentum);
    sgd_step(model.transforms.psi, g.psi, psi_state, cfg.learning_rate, cfg.momentum);
    if (head_state != nullptr) {
      g.head.scale(scale);
      sgd_step(model.head.mlp(), g.head, *head_state, cfg.learning_rate, cfg.momentum);
    }
    if (!model.dictionary.frozen) {
      momentum_step(model.dictionary.atoms, g.atoms * scale, atom_velocity,
                    cfg.learning_rate, cfg.momentum);
    }
  };
  auto total_norm = [&] {
    double s = mlp_squared_norm(model.transforms.phi) + mlp_squared_norm(model.transforms.psi);
    if (!model.head.mlp().empty()) s += mlp_squared_norm(model.head.mlp());
    return std::sqrt(s);
  };

  // Stage 1: latent transforms with the attention fixed at one.
  const AttributeLossConfig loss_cfg{weights, cfg.pixel_loss_weight, cfg.attention_l2, top_t};
  for (int epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, order_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      AttributeGrad g = AttributeGrad::zeros_like(model.head, model.transforms,
                                                  model.dictionary.atoms);
      double loss = 0.0;
      for (std::size_t idx : batch) {
        loss += attribute_plain_loss(model.dictionary.atoms, model.transforms, data[idx].rows,
                                     labels[idx], loss_cfg, &g);
      }
      check_finite(loss, "train_attributes stage 1", epoch, bi, total_norm());
      apply(g, 1.0 / static_cast<double>(batch.size()), nullptr);
      epoch_loss += loss;
    }
    if (observer) {
      observer({"attribute-latent", epoch, epoch_loss / static_cast<double>(n), 0.0,
                total_norm()});
    }
  }

  // Stage 2: attention head per attribute word, joint global + pixel loss.
  model.text_sketch = make_sketch_params(text_sketch_seed(cfg.seed), model.dictionary.dim(),
                                         cfg.sketch_dim);
  model.visual_sketch = make_sketch_params(visual_sketch_seed(cfg.seed), channels,
                                           cfg.sketch_dim);
  model.head = AttentionHeadParams::make_default(cfg.sketch_dim, init_rng, cfg.head_hidden);
  MomentumState head_state = MomentumState::for_mlp(model.head.mlp());
  std::vector<std::vector<Eigen::MatrixXf>> phis(n);
  auto refresh_phis = [&] {
    for (std::size_t r = 0; r < n; ++r) {
      phis[r].clear();
      for (std::size_t i = 0; i < n_attr; ++i) {
        const auto atom = row_vector(model.dictionary.atoms, static_cast<Eigen::Index>(i));
        phis[r].push_back(mcb_pool_matrix(atom, data[r].features, model.text_sketch,
                                          model.visual_sketch)
                              .cast<float>());
      }
    }
  };
  refresh_phis();
  struct SampleOut {
    double loss = 0.0;
    double r2 = 0.0;
    AttributeGrad grad;
  };
  for (int epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    double epoch_loss = 0.0;
    double epoch_r2 = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, order_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      auto outs = map_indices<SampleOut>(batch.size(), cfg.threads, [&](std::size_t j) {
        const std::size_t idx = batch[j];
        AttributeSample sample;
        for (const auto& phi : phis[idx]) sample.phi.push_back(phi.cast<double>());
        sample.features = data[idx].rows;
        sample.labels = labels[idx];
        SampleOut o;
        o.grad = AttributeGrad::zeros_like(model.head, model.transforms,
                                           model.dictionary.atoms);
        o.loss = attribute_loss(model.head, model.dictionary.atoms, model.transforms, sample,
                                loss_cfg, &o.grad, &o.r2);
        return o;
      });
      AttributeGrad g =
          AttributeGrad::zeros_like(model.head, model.transforms, model.dictionary.atoms);
      double loss = 0.0;
      for (const auto& o : outs) {
        loss += o.loss;
        epoch_r2 += o.r2;
        g.head.add(o.grad.head);
        g.phi.add(o.grad.phi);
        g.psi.add(o.grad.psi);
        g.atoms += o.grad.atoms;
      }
      check_finite(loss, "train_attributes stage 2", epoch, bi, total_norm());
      apply(g, 1.0 / static_cast<double>(batch.size()), &head_state);
      epoch_loss += loss;
    }
    // Fine-tuned atoms move the text side of the pooled maps.
    if (!model.dictionary.frozen) refresh_phis();
    if (observer) {
      observer({"attribute-attention", epoch, epoch_loss / static_cast<double>(n),
                epoch_r2 / static_cast<double>(n), total_norm()});
    }
  }
  model.validate();
  return model;
}

ColorModel train_color(const DatasetManifest& manifest,
                       const std::vector<std::string>& color_names, const TrainConfig& cfg,
                       const TrainObserver& observer) {
  cfg.validate();
  if (color_names.empty()) throw ConfigError("train_color: no color names");
  struct ColorRecord {
    Eigen::MatrixXd pixels;
    std::vector<int> labels;
  };
  std::vector<ColorRecord> records;
  const int classes = static_cast<int>(color_names.size());
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    const auto& rec = manifest.records[r];
    if (!rec.color_labels_path) continue;
    const FeatureMap v = read_fmap(rec.features_path);
    const FeatureMap lab = read_fmap(*rec.color_labels_path);
    if (lab.channels() != 1 || lab.height() != v.height() || lab.width() != v.width()) {
      throw DataError("train_color: record " + std::to_string(r) +
                      " has a label map of the wrong shape");
    }
    if (v.channels() < kColorInputChannels) {
      throw DataError("train_color: record " + std::to_string(r) + " has too few channels");
    }
    ColorRecord cr;
    cr.pixels = feature_rows(v.slice_channels(0, kColorInputChannels));
    bool any = false;
    for (std::size_t p = 0; p < lab.pixel_count(); ++p) {
      const float value = lab.pixel(p)[0];
      const int label = static_cast<int>(std::lround(value));
      if (label < -1 || label >= classes || static_cast<float>(label) != value) {
        throw DataError("train_color: record " + std::to_string(r) + " (" +
                        rec.color_labels_path->string() + ") has label " +
                        std::to_string(value) + " outside [0, " + std::to_string(classes) +
                        ")");
      }
      any = any || label >= 0;
      cr.labels.push_back(label);
    }
    if (any) records.push_back(std::move(cr));
  }
  if (records.empty()) throw ConfigError("train_color: no labeled pixels in the manifest");

  ColorModel model;
  model.color_names = color_names;
  model.channel_offset = 0;
  Rng init_rng({cfg.seed, 0x21u});
  Rng order_rng({cfg.seed, 0x22u});
  const int widths[] = {kColorInputChannels, cfg.color_hidden, classes};
  const Activation acts[] = {Activation::kRelu, Activation::kIdentity};
  model.transform = Mlp::glorot(widths, acts, init_rng);
  MomentumState state = MomentumState::for_mlp(model.transform);
  const std::size_t n = records.size();
  for (int epoch = 1; epoch <= cfg.color_epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto batches = epoch_batches(n, cfg.batch_size, order_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      MlpGrad g = MlpGrad::zeros_like(model.transform);
      double loss = 0.0;
      for (std::size_t idx : batch) {
        loss += color_loss(model.transform, records[idx].pixels, records[idx].labels, &g);
      }
      check_finite(loss, "train_color", epoch, bi, std::sqrt(mlp_squared_norm(model.transform)));
      g.scale(1.0 / static_cast<double>(batch.size()));
      g.scale(clip_scale(g.squared_norm(), cfg.grad_clip));
      sgd_step(model.transform, g, state, cfg.learning_rate, cfg.momentum);
      epoch_loss += loss;
    }
    if (observer) {
      observer({"color", epoch, epoch_loss / static_cast<double>(n), 0.0,
                std::sqrt(mlp_squared_norm(model.transform))});
    }
  }
  model.validate();
  return model;
}

// ---- Gradient verification ----

GradCheckReport grad_check(const GradCheckProblem& problem, double eps, double tolerance,
                           double floor) {
  std::size_t total = 0;
  for (const auto& b : problem.blocks) total += b.size;
  if (total != problem.point.size() || total != problem.analytic.size()) {
    throw DimensionError("grad_check: block sizes do not match the parameter vector");
  }
  const FeatureVector numeric = finite_difference_grad(problem.loss, problem.point, eps);
  GradCheckReport report;
  std::size_t offset = 0;
  for (const auto& block : problem.blocks) {
    double worst = 0.0;
    for (std::size_t i = 0; i < block.size; ++i) {
      const double a = problem.analytic[offset + i];
      const double num = numeric[offset + i];
      const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      worst = std::max(worst, err);
      if (err > report.max_relative_error || report.offending_parameter.empty()) {
        if (err >= report.max_relative_error) {
          report.max_relative_error = err;
          report.offending_parameter = block.name + "[" + std::to_string(i) + "]";
        }
      }
    }
    report.block_errors.emplace_back(block.name, worst);
    offset += block.size;
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

GradCheckProblem entity_grad_problem(const AttentionHeadParams& head, const Eigen::MatrixXd& w,
                                     const EntitySample& sample, double lambda) {
  GradCheckProblem problem;
  const std::size_t head_n = head.mlp().parameter_count();
  problem.blocks = {{"head", head_n}, {"classifier", static_cast<std::size_t>(w.size())}};
  problem.point = head.mlp().flatten();
  append(problem.point, flatten_matrix(w));
  EntityGrad g = EntityGrad::zeros_like(head, w);
  entity_attention_loss(head, w, sample, lambda, &g);
  problem.analytic = g.head.flatten();
  append(problem.analytic, flatten_matrix(g.classifier));
  problem.loss = [head, w, sample, lambda, head_n](std::span<const double> x) {
    AttentionHeadParams h = head;
    h.mlp().assign(x.subspan(0, head_n));
    Eigen::MatrixXd wm = w;
    assign_matrix(wm, x.subspan(head_n, static_cast<std::size_t>(w.size())));
    return entity_attention_loss(h, wm, sample, lambda, nullptr);
  };
  return problem;
}

GradCheckProblem attribute_grad_problem(const AttentionHeadParams& head,
                                        const Eigen::MatrixXd& atoms,
                                        const LatentTransforms& transforms,
                                        const AttributeSample& sample,
                                        const AttributeLossConfig& cfg,
                                        double tie_tolerance) {
  std::vector<std::vector<double>> scores;
  AttributeGrad g = AttributeGrad::zeros_like(head, transforms, atoms);
  attribute_loss(head, atoms, transforms, sample, cfg, &g, nullptr, &scores);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mil_selection_tied(scores[i], cfg.top_t, tie_tolerance)) {
      throw TieError("attribute " + std::to_string(i) +
                     ": top-T selection is tied at the check point");
    }
  }
  const std::size_t head_n = head.mlp().parameter_count();
  const std::size_t phi_n = transforms.phi.parameter_count();
  const std::size_t psi_n = transforms.psi.parameter_count();
  const std::size_t atom_n = static_cast<std::size_t>(atoms.size());
  GradCheckProblem problem;
  problem.blocks = {{"head", head_n}, {"phi", phi_n}, {"psi", psi_n}, {"atoms", atom_n}};
  problem.point = head.mlp().flatten();
  append(problem.point, transforms.phi.flatten());
  append(problem.point, transforms.psi.flatten());
  append(problem.point, flatten_matrix(atoms));
  problem.analytic = g.head.flatten();
  append(problem.analytic, g.phi.flatten());
  append(problem.analytic, g.psi.flatten());
  append(problem.analytic, flatten_matrix(g.atoms));
  problem.loss = [=](std::span<const double> x) {
    AttentionHeadParams h = head;
    LatentTransforms t = transforms;
    Eigen::MatrixXd a = atoms;
    h.mlp().assign(x.subspan(0, head_n));
    t.phi.assign(x.subspan(head_n, phi_n));
    t.psi.assign(x.subspan(head_n + phi_n, psi_n));
    assign_matrix(a, x.subspan(head_n + phi_n + psi_n, atom_n));
    return attribute_loss(h, a, t, sample, cfg, nullptr);
  };
  return problem;
}

GradCheckProblem color_grad_problem(const Mlp& transform, const Eigen::MatrixXd& pixels,
                                    std::vector<int> labels) {
  GradCheckProblem problem;
  problem.blocks = {{"transform", transform.parameter_count()}};
  problem.point = transform.flatten();
  MlpGrad g = MlpGrad::zeros_like(transform);
  color_loss(transform, pixels, labels, &g);
  problem.analytic = g.flatten();
  problem.loss = [transform, pixels, labels](std::span<const double> x) {
    Mlp m = transform;
    m.assign(x);
    return color_loss(m, pixels, labels, nullptr);
  };
  return problem;
}

}  // namespace grounder
