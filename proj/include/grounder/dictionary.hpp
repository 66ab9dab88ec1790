#ifndef GROUNDER_DICTIONARY_HPP_
#define GROUNDER_DICTIONARY_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "grounder/embedding.hpp"
#include "grounder/mlp.hpp"
#include "grounder/numerics.hpp"

namespace grounder {

// Attribute word vectors stacked row-wise; row i is the atom for names[i].
struct AttributeDictionary {
  std::vector<std::string> names;
  Eigen::MatrixXd atoms;  // C x d
  // Atoms stay fixed during training unless this is cleared.
  bool frozen = true;

  int size() const { return static_cast<int>(names.size()); }
  int dim() const { return static_cast<int>(atoms.cols()); }
  // -1 if absent.
  int index_of(const std::string& name) const;

  // Throws NotFoundError for names missing from the table.
  static AttributeDictionary from_table(const std::vector<std::string>& names,
                                        const EmbeddingTable& table);
  bool operator==(const AttributeDictionary& o) const {
    return names == o.names && atoms == o.atoms && frozen == o.frozen;
  }
};

// Names as a JSON array plus atoms in FMAP layout (H = C, W = 1, C = d).
void save_dictionary(const AttributeDictionary& dict,
                     const std::filesystem::path& names_json,
                     const std::filesystem::path& atoms_fmap);
AttributeDictionary load_dictionary(const std::filesystem::path& names_json,
                                    const std::filesystem::path& atoms_fmap);

// phi maps features into the latent space, psi maps dictionary atoms there.
struct LatentTransforms {
  Mlp phi;
  Mlp psi;

  int latent_dim() const { return phi.output_dim(); }
  // linear -> relu -> linear for both, Glorot init.
  static LatentTransforms make_default(int feature_dim, int atom_dim, Rng& rng,
                                       int latent_dim = 32, int hidden = 32);
  // Single identity layer on each side; requires feature_dim == atom_dim.
  static LatentTransforms identity(int dim);
  bool operator==(const LatentTransforms& o) const {
    return phi == o.phi && psi == o.psi;
  }
};

// Per-class logistic regression weights.
struct LogisticWeights {
  Eigen::MatrixXd weights;  // K x d
  Eigen::VectorXd bias;     // K
};

// 1 / (1 + exp(-w.x)).
double logistic_score(std::span<const double> w, std::span<const double> x);
std::vector<double> logistic_scores(const LogisticWeights& lw,
                                    std::span<const double> x);

// y_i = 2 / (1 + exp(|d_i - x|^2)).
std::vector<double> dict_score_fixed(const AttributeDictionary& dict,
                                     std::span<const double> x);

// y_i = 2 / (1 + exp(|psi(D)_i - phi(x)|^2)).
std::vector<double> dict_score_latent(const AttributeDictionary& dict,
                                      std::span<const double> x,
                                      const LatentTransforms& transforms);

// The modified sigmoid 2 / (1 + exp(d)) and its derivative in d.
double dictionary_sigmoid(double squared_distance);
double dictionary_sigmoid_derivative(double squared_distance);

// Batched latent scoring used by training and per-pixel grounding. Rows of
// `features` are samples; the result is N x C.
struct LatentScoreTape {
  MlpTape phi;
  MlpTape psi;
  Eigen::MatrixXd scores;     // N x C
  Eigen::MatrixXd distances;  // N x C squared distances
};

LatentScoreTape latent_scores(const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& atoms,
                              const LatentTransforms& transforms);

struct LatentScoreGrad {
  MlpGrad phi;
  MlpGrad psi;
  Eigen::MatrixXd atoms;     // C x d
  Eigen::MatrixXd features;  // N x d_f

  static LatentScoreGrad zeros_like(const LatentTransforms& t, int atoms_rows,
                                    int atom_dim);
};

// Backpropagates dL/dscores (N x C). Parameter gradients accumulate into
// *grad; grad->features and grad->atoms are overwritten.
void latent_scores_backward(const LatentTransforms& transforms,
                            const LatentScoreTape& tape,
                            const Eigen::MatrixXd& d_scores,
                            LatentScoreGrad* grad);

// Binary cross-entropy with the probability clamped away from 0 and 1.
double binary_cross_entropy(double probability, int label);
// d BCE / d probability at the same clamped point.
double binary_cross_entropy_derivative(double probability, int label);

struct MilLoss {
  double loss = 0.0;
  double mean_score = 0.0;
  std::vector<std::size_t> selected;  // pixel indices, best first
  std::vector<double> gradient;       // dL/d score per pixel, 0 if unselected
};

// Mean of the top-T scores fed to the logistic (binary cross-entropy) loss.
// Ties at equal score prefer the lower flat pixel index. Throws ConfigError
// if T is 0 or exceeds the pixel count.
MilLoss mil_topT_loss(std::span<const double> scores, int label, std::size_t top_t);

// max(1, ceil(0.05 * pixels)).
std::size_t default_top_t(std::size_t pixels);

// True if the T-th and (T+1)-th largest scores are within `tolerance`, i.e.
// the selection would change under a perturbation of that size.
bool mil_selection_tied(std::span<const double> scores, std::size_t top_t,
                        double tolerance);

// Copy of `dict` with one more atom. Existing rows are untouched, so scores
// for existing attributes are bit-identical. Throws ConflictError on a
// duplicate name and DimensionError on a length mismatch.
AttributeDictionary add_attribute(const AttributeDictionary& dict,
                                  const std::string& name,
                                  std::span<const double> vector);

}  // namespace grounder

#endif  // GROUNDER_DICTIONARY_HPP_
