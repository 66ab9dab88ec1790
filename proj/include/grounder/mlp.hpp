#ifndef GROUNDER_MLP_HPP_
#define GROUNDER_MLP_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "grounder/rng.hpp"

namespace grounder {

enum class Activation { kIdentity, kRelu, kSigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Affine map followed by an elementwise activation. weights is out x in.
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
  Activation activation = Activation::kIdentity;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }
  bool operator==(const DenseLayer& o) const {
    return weights == o.weights && bias == o.bias && activation == o.activation;
  }
};

// Stack of dense layers applied row-wise: each row of the input matrix is an
// independent sample (a pixel, for 1x1 convolutions over a map).
class Mlp {
 public:
  Mlp() = default;
  // Throws DimensionError if consecutive layer widths do not chain.
  explicit Mlp(std::vector<DenseLayer> layers);

  // widths = {in, h1, ..., out}; activations.size() == widths.size() - 1.
  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static Mlp glorot(std::span<const int> widths,
                    std::span<const Activation> activations, Rng& rng);
  // Every weight and bias zero.
  static Mlp zeros(std::span<const int> widths,
                   std::span<const Activation> activations);

  bool empty() const { return layers_.empty(); }
  int input_dim() const;
  int output_dim() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  std::size_t parameter_count() const;
  // Layer by layer: weights (row-major), then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> params);

  bool operator==(const Mlp& o) const { return layers_ == o.layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

// Per-layer activations recorded by forward_tape; activations[0] is the input
// and activations[i + 1] the output of layer i.
struct MlpTape {
  std::vector<Eigen::MatrixXd> activations;
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

MlpTape forward_tape(const Mlp& mlp, const Eigen::MatrixXd& x);

// Gradient buffers shaped like an Mlp.
struct MlpGrad {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;

  static MlpGrad zeros_like(const Mlp& mlp);
  void add(const MlpGrad& other, double scale = 1.0);
  void scale(double s);
  std::vector<double> flatten() const;
  double squared_norm() const;
};

// Backpropagates d_out (same shape as the tape output) and accumulates
// parameter gradients into *grad. Returns the gradient w.r.t. the input.
Eigen::MatrixXd backward(const Mlp& mlp, const MlpTape& tape,
                         const Eigen::MatrixXd& d_out, MlpGrad* grad);

// SGD with classical momentum: v <- mu v - lr g;  theta <- theta + v.
struct MomentumState {
  MlpGrad velocity;
  static MomentumState for_mlp(const Mlp& mlp) { return {MlpGrad::zeros_like(mlp)}; }
};
void sgd_step(Mlp& mlp, const MlpGrad& grad, MomentumState& state,
              double learning_rate, double momentum);

}  // namespace grounder

#endif  // GROUNDER_MLP_HPP_
