#ifndef GROUNDER_TRAINER_HPP_
#define GROUNDER_TRAINER_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grounder/dictionary.hpp"
#include "grounder/embedding.hpp"
#include "grounder/models.hpp"
#include "grounder/proposals.hpp"

namespace grounder {

struct TrainConfig {
  std::uint64_t seed = 1;
  double learning_rate = 0.05;
  double momentum = 0.9;
  // Bound on the L2 norm of each batch-mean gradient; 0 disables clipping.
  double grad_clip = 1.0;
  int stage1_epochs = 30;
  int stage2_epochs = 60;
  int color_epochs = 30;
  int batch_size = 8;
  double attention_l2 = 1e-3;  // lambda
  int mil_top_t = 0;           // 0 selects default_top_t
  double pixel_loss_weight = 1.0;
  bool class_reweighting = true;
  bool fine_tune_atoms = false;
  int sketch_dim = 256;
  int head_hidden = 64;
  int latent_dim = 32;
  int latent_hidden = 32;
  int color_hidden = 16;
  // Per-sample work in a batch fans out over this many threads; results are
  // reduced in sample order, so the value never changes the output.
  int threads = 1;

  // Throws ConfigError on an out-of-range field.
  void validate() const;
};

struct ManifestRecord {
  std::filesystem::path features_path;  // resolved against the manifest dir
  std::optional<std::string> entity;
  std::vector<std::string> attributes;
  std::vector<std::string> colors;
  std::optional<std::filesystem::path> color_labels_path;
  std::optional<Box> box;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

// JSON lines; relative paths resolve against base_dir. Blank lines are
// skipped. Throws FormatError naming the line on malformed input.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);

// w_i proportional to 1 / count_i, scaled to mean 1. Throws ConfigError on
// an empty list or a zero count.
std::vector<double> class_weights(std::span<const std::size_t> counts);

struct EpochStats {
  std::string stage;
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_r2 = 0.0;  // attention stages only
  double parameter_norm = 0.0;
};
using TrainObserver = std::function<void(const EpochStats&)>;

// Classes are the distinct entity labels in ascending order. Stage 1 fits
// the classifier on pooled features; stage 2 adds the attention head.
// Throws ConfigError for unlabeled records or fewer than two classes and
// TrainingError if a loss turns non-finite.
EntityModel train_entity(const DatasetManifest& manifest, const EmbeddingTable& table,
                         const TrainConfig& cfg, const TrainObserver& observer = {});

// Dictionary = attribute_names (every name needs an embedding and at least
// one positive record). Throws ConfigError for a record token outside it.
AttributeModel train_attributes(const DatasetManifest& manifest,
                                const EmbeddingTable& table,
                                const std::vector<std::string>& attribute_names,
                                const TrainConfig& cfg,
                                const TrainObserver& observer = {});

// Uses records with color labels; each labeled pixel holds an index into
// color_names and -1 marks unlabeled pixels. Throws DataError naming the
// record on an out-of-range label.
ColorModel train_color(const DatasetManifest& manifest,
                       const std::vector<std::string>& color_names,
                       const TrainConfig& cfg, const TrainObserver& observer = {});

// ---- Loss functions with analytic gradients ----

// weight * CE(softmax(W f), label). dL/dW accumulates into *d_weights and
// dL/df is written to *d_features when those are non-null.
double classifier_loss(const Eigen::MatrixXd& w, const Eigen::VectorXd& features, int label,
                       double weight, Eigen::MatrixXd* d_weights,
                       Eigen::VectorXd* d_features = nullptr);

struct EntitySample {
  Eigen::MatrixXd phi;       // P x sketch_dim, pooled with the label word
  Eigen::MatrixXd features;  // P x channels
  int label = 0;
  double weight = 1.0;
};

struct EntityGrad {
  MlpGrad head;
  Eigen::MatrixXd classifier;
  static EntityGrad zeros_like(const AttentionHeadParams& head, const Eigen::MatrixXd& w);
};

// weight * CE(classifier(mean(R v)), label) + lambda * |R|^2, the penalty
// summed over pixels. *mean_r2 receives mean(R^2) for logging.
double entity_attention_loss(const AttentionHeadParams& head, const Eigen::MatrixXd& w,
                             const EntitySample& sample,
                             double lambda, EntityGrad* grad, double* mean_r2 = nullptr);

struct AttributeSample {
  std::vector<Eigen::MatrixXd> phi;  // per attribute, P x sketch_dim
  Eigen::MatrixXd features;          // P x channels
  std::vector<int> labels;           // per attribute, 0 or 1
};

struct AttributeLossConfig {
  std::vector<double> weights;  // per attribute
  double pixel_weight = 1.0;
  double lambda = 1e-3;
  std::size_t top_t = 1;
};

struct AttributeGrad {
  MlpGrad head;
  MlpGrad phi;
  MlpGrad psi;
  Eigen::MatrixXd atoms;
  static AttributeGrad zeros_like(const AttentionHeadParams& head,
                                  const LatentTransforms& t, const Eigen::MatrixXd& atoms);
};

// Sum over attributes of weight_i * [BCE(global score_i, label_i)
// + pixel_weight * MIL top-T loss on the pixel scores] + lambda * sum_i |R_i|^2.
// The global feature is mean(R_i v); pixel features are R_i(p) v(p).
// `pixel_scores`, when given, receives each attribute's pixel score column.
double attribute_loss(const AttentionHeadParams& head, const Eigen::MatrixXd& atoms,
                      const LatentTransforms& transforms, const AttributeSample& sample,
                      const AttributeLossConfig& cfg, AttributeGrad* grad,
                      double* mean_r2 = nullptr,
                      std::vector<std::vector<double>>* pixel_scores = nullptr);

// The same loss with R fixed at one and no attention penalty; used before
// the attention head exists.
double attribute_plain_loss(const Eigen::MatrixXd& atoms, const LatentTransforms& transforms,
                            const Eigen::MatrixXd& features, std::span<const int> labels,
                            const AttributeLossConfig& cfg, AttributeGrad* grad);

// Mean cross-entropy of softmax(transform(x_p)) over pixels with label >= 0.
double color_loss(const Mlp& transform, const Eigen::MatrixXd& pixels,
                  std::span<const int> labels, MlpGrad* grad);

// ---- Gradient verification ----

struct GradBlock {
  std::string name;
  std::size_t size = 0;
};

// Loss as a function of the concatenated parameter blocks, the point to
// check, and the analytic gradient there.
struct GradCheckProblem {
  std::vector<GradBlock> blocks;
  std::function<double(std::span<const double>)> loss;
  std::vector<double> point;
  std::vector<double> analytic;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string offending_parameter;  // "block[index]" of the worst entry
  std::vector<std::pair<std::string, double>> block_errors;
  bool passed = false;
};

// Relative error per entry is |a - n| / max(|a|, |n|, floor). Throws
// DimensionError when the sizes disagree.
GradCheckReport grad_check(const GradCheckProblem& problem, double eps, double tolerance,
                           double floor = 1e-5);

// Grad-check problems over every trainable block of each loss. The
// attribute variant throws TieError if a top-T selection is within
// tie_tolerance of changing; callers jitter the sample and retry.
GradCheckProblem entity_grad_problem(const AttentionHeadParams& head,
                                     const Eigen::MatrixXd& w,
                                     const EntitySample& sample, double lambda);
GradCheckProblem attribute_grad_problem(const AttentionHeadParams& head,
                                        const Eigen::MatrixXd& atoms,
                                        const LatentTransforms& transforms,
                                        const AttributeSample& sample,
                                        const AttributeLossConfig& cfg,
                                        double tie_tolerance = 1e-4);
GradCheckProblem color_grad_problem(const Mlp& transform, const Eigen::MatrixXd& pixels,
                                    std::vector<int> labels);

}  // namespace grounder

#endif  // GROUNDER_TRAINER_HPP_
