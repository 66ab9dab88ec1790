#include "grounder/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "grounder/errors.hpp"
#include "grounder/fmap_io.hpp"

namespace grounder {

namespace {

constexpr double kProbabilityClamp = 1e-12;

Eigen::MatrixXd row_matrix(std::span<const double> x) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = x[i];
  return m;
}

}  // namespace

int AttributeDictionary::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

AttributeDictionary AttributeDictionary::from_table(
    const std::vector<std::string>& names, const EmbeddingTable& table) {
  if (names.empty()) throw ConfigError("attribute dictionary needs >= 1 atom");
  AttributeDictionary dict;
  dict.atoms.resize(static_cast<Eigen::Index>(names.size()),
                    static_cast<Eigen::Index>(table.dim()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto key = normalize_token(names[i]);
    if (dict.index_of(key) >= 0) {
      throw ConflictError("duplicate attribute '" + key + "'");
    }
    const WordVector& v = table.lookup(key);
    for (std::size_t k = 0; k < v.size(); ++k) {
      dict.atoms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[k];
    }
    dict.names.push_back(key);
  }
  return dict;
}

void save_dictionary(const AttributeDictionary& dict,
                     const std::filesystem::path& names_json,
                     const std::filesystem::path& atoms_fmap) {
  {
    std::ofstream out(names_json);
    if (!out) throw Error("cannot write " + names_json.string());
    out << nlohmann::json(dict.names).dump() << "\n";
  }
  std::vector<float> data;
  for (Eigen::Index r = 0; r < dict.atoms.rows(); ++r) {
    for (Eigen::Index c = 0; c < dict.atoms.cols(); ++c) {
      data.push_back(static_cast<float>(dict.atoms(r, c)));
    }
  }
  write_fmap(atoms_fmap, FeatureMap(dict.size(), 1, dict.dim(), std::move(data)));
}

AttributeDictionary load_dictionary(const std::filesystem::path& names_json,
                                    const std::filesystem::path& atoms_fmap) {
  std::ifstream in(names_json);
  if (!in) throw NotFoundError("cannot open " + names_json.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dictionary names: ") + e.what());
  }
  if (!j.is_array()) throw FormatError("dictionary names must be a JSON array");
  AttributeDictionary dict;
  for (const auto& n : j) dict.names.push_back(normalize_token(n.get<std::string>()));
  const FeatureMap atoms = read_fmap(atoms_fmap);
  if (atoms.height() != dict.size() || atoms.width() != 1) {
    throw FormatError("dictionary atoms must be FMAP with H = #names, W = 1");
  }
  dict.atoms.resize(atoms.height(), atoms.channels());
  for (int r = 0; r < atoms.height(); ++r) {
    for (int c = 0; c < atoms.channels(); ++c) dict.atoms(r, c) = atoms.at(r, 0, c);
  }
  return dict;
}

LatentTransforms LatentTransforms::make_default(int feature_dim, int atom_dim,
                                                Rng& rng, int latent_dim,
                                                int hidden) {
  const Activation acts[] = {Activation::kRelu, Activation::kIdentity};
  const int phi_w[] = {feature_dim, hidden, latent_dim};
  const int psi_w[] = {atom_dim, hidden, latent_dim};
  LatentTransforms t;
  t.phi = Mlp::glorot(phi_w, acts, rng);
  t.psi = Mlp::glorot(psi_w, acts, rng);
  return t;
}

LatentTransforms LatentTransforms::identity(int dim) {
  DenseLayer layer;
  layer.weights = Eigen::MatrixXd::Identity(dim, dim);
  layer.bias = Eigen::VectorXd::Zero(dim);
  layer.activation = Activation::kIdentity;
  LatentTransforms t;
  t.phi = Mlp({layer});
  t.psi = Mlp({layer});
  return t;
}

double logistic_score(std::span<const double> w, std::span<const double> x) {
  if (w.size() != x.size()) throw DimensionError("logistic_score: length mismatch");
  const double z = dot(w, x);
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> logistic_scores(const LogisticWeights& lw,
                                    std::span<const double> x) {
  if (lw.weights.cols() != static_cast<Eigen::Index>(x.size())) {
    throw DimensionError("logistic_scores: feature length mismatch");
  }
  std::vector<double> out(static_cast<std::size_t>(lw.weights.rows()));
  for (Eigen::Index k = 0; k < lw.weights.rows(); ++k) {
    double z = lw.bias.size() > 0 ? lw.bias(k) : 0.0;
    for (Eigen::Index c = 0; c < lw.weights.cols(); ++c) z += lw.weights(k, c) * x[c];
    out[k] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

double dictionary_sigmoid(double d) { return 2.0 / (1.0 + std::exp(d)); }

double dictionary_sigmoid_derivative(double d) {
  const double y = dictionary_sigmoid(d);
  return -y * (1.0 - 0.5 * y);
}

std::vector<double> dict_score_fixed(const AttributeDictionary& dict,
                                     std::span<const double> x) {
  if (static_cast<int>(x.size()) != dict.dim()) {
    throw DimensionError("dict_score_fixed: feature length does not match atoms");
  }
  std::vector<double> y(dict.size());
  for (int i = 0; i < dict.size(); ++i) {
    double d = 0.0;
    for (int k = 0; k < dict.dim(); ++k) {
      const double diff = dict.atoms(i, k) - x[k];
      d += diff * diff;
    }
    y[i] = dictionary_sigmoid(d);
  }
  return y;
}

LatentScoreTape latent_scores(const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& atoms,
                              const LatentTransforms& t) {
  if (features.cols() != t.phi.input_dim()) {
    throw DimensionError("latent scoring: feature width does not match phi");
  }
  if (atoms.cols() != t.psi.input_dim()) {
    throw DimensionError("latent scoring: atom width does not match psi");
  }
  if (t.phi.output_dim() != t.psi.output_dim()) {
    throw DimensionError("latent scoring: phi and psi latent dims differ");
  }
  LatentScoreTape tape;
  tape.phi = forward_tape(t.phi, features);
  tape.psi = forward_tape(t.psi, atoms);
  const auto& z = tape.phi.output();
  const auto& a = tape.psi.output();
  tape.distances.resize(z.rows(), a.rows());
  tape.scores.resize(z.rows(), a.rows());
  for (Eigen::Index n = 0; n < z.rows(); ++n) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double d = (a.row(i) - z.row(n)).squaredNorm();
      tape.distances(n, i) = d;
      tape.scores(n, i) = dictionary_sigmoid(d);
    }
  }
  return tape;
}

LatentScoreGrad LatentScoreGrad::zeros_like(const LatentTransforms& t,
                                            int atoms_rows, int atom_dim) {
  LatentScoreGrad g;
  g.phi = MlpGrad::zeros_like(t.phi);
  g.psi = MlpGrad::zeros_like(t.psi);
  g.atoms = Eigen::MatrixXd::Zero(atoms_rows, atom_dim);
  return g;
}

void latent_scores_backward(const LatentTransforms& t, const LatentScoreTape& tape,
                            const Eigen::MatrixXd& d_scores, LatentScoreGrad* grad) {
  const auto& z = tape.phi.output();
  const auto& a = tape.psi.output();
  // dL/d dist = dL/dy * dy/d dist, with dy/d dist = -y (1 - y / 2).
  const Eigen::MatrixXd d_dist = d_scores.cwiseProduct(
      tape.scores.unaryExpr([](double y) { return -y * (1.0 - 0.5 * y); }));
  const Eigen::VectorXd row_sums = d_dist.rowwise().sum();
  const Eigen::VectorXd col_sums = d_dist.colwise().sum().transpose();
  const Eigen::MatrixXd d_z =
      2.0 * (z.array().colwise() * row_sums.array()).matrix() - 2.0 * d_dist * a;
  const Eigen::MatrixXd d_a =
      2.0 * (a.array().colwise() * col_sums.array()).matrix() - 2.0 * d_dist.transpose() * z;
  grad->features = backward(t.phi, tape.phi, d_z, &grad->phi);
  grad->atoms = backward(t.psi, tape.psi, d_a, &grad->psi);
}

std::vector<double> dict_score_latent(const AttributeDictionary& dict,
                                      std::span<const double> x,
                                      const LatentTransforms& t) {
  if (static_cast<int>(x.size()) != t.phi.input_dim()) {
    throw DimensionError("dict_score_latent: feature length does not match phi");
  }
  const auto tape = latent_scores(row_matrix(x), dict.atoms, t);
  std::vector<double> y(static_cast<std::size_t>(tape.scores.cols()));
  for (Eigen::Index i = 0; i < tape.scores.cols(); ++i) y[i] = tape.scores(0, i);
  return y;
}

double binary_cross_entropy(double p, int label) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label != 0 ? -std::log(p) : -std::log(1.0 - p);
}

double binary_cross_entropy_derivative(double p, int label) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label != 0 ? -1.0 / p : 1.0 / (1.0 - p);
}

namespace {

std::vector<std::size_t> ranked_indices(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return idx;
}

}  // namespace

MilLoss mil_topT_loss(std::span<const double> scores, int label, std::size_t top_t) {
  if (top_t == 0 || top_t > scores.size()) {
    std::ostringstream msg;
    msg << "mil_topT_loss: T = " << top_t << " with " << scores.size() << " pixels";
    throw ConfigError(msg.str());
  }
  MilLoss out;
  auto idx = ranked_indices(scores);
  idx.resize(top_t);
  double sum = 0.0;
  for (auto p : idx) sum += scores[p];
  out.mean_score = sum / static_cast<double>(top_t);
  out.loss = binary_cross_entropy(out.mean_score, label);
  out.gradient.assign(scores.size(), 0.0);
  const double d_mean = binary_cross_entropy_derivative(out.mean_score, label);
  for (auto p : idx) out.gradient[p] = d_mean / static_cast<double>(top_t);
  out.selected = std::move(idx);
  return out;
}

std::size_t default_top_t(std::size_t pixels) {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(pixels))));
}

bool mil_selection_tied(std::span<const double> scores, std::size_t top_t,
                        double tolerance) {
  if (top_t == 0 || top_t >= scores.size()) return false;
  const auto idx = ranked_indices(scores);
  return std::abs(scores[idx[top_t - 1]] - scores[idx[top_t]]) <= tolerance;
}

AttributeDictionary add_attribute(const AttributeDictionary& dict,
                                  const std::string& name,
                                  std::span<const double> vector) {
  const auto key = normalize_token(name);
  if (dict.index_of(key) >= 0) {
    throw ConflictError("attribute '" + key + "' already in dictionary");
  }
  if (dict.size() > 0 && static_cast<int>(vector.size()) != dict.dim()) {
    throw DimensionError("add_attribute: vector length does not match atoms");
  }
  AttributeDictionary out = dict;
  out.names.push_back(key);
  out.atoms.conservativeResize(dict.size() + 1, static_cast<Eigen::Index>(vector.size()));
  for (std::size_t k = 0; k < vector.size(); ++k) {
    out.atoms(dict.size(), static_cast<Eigen::Index>(k)) = vector[k];
  }
  return out;
}

}  // namespace grounder
