#include "grounder/mlp.hpp"

#include <cmath>
#include <sstream>

#include "grounder/errors.hpp"

namespace grounder {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void apply_activation(Eigen::MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::kSigmoid:
      z = z.unaryExpr([](double v) { return stable_sigmoid(v); });
      break;
  }
}

std::vector<DenseLayer> build_layers(std::span<const int> widths,
                                     std::span<const Activation> activations) {
  if (widths.size() < 2 || activations.size() + 1 != widths.size()) {
    throw DimensionError("mlp: need widths.size() == activations.size() + 1 >= 2");
  }
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] < 1 || widths[i + 1] < 1) {
      throw DimensionError("mlp: layer widths must be >= 1");
    }
    DenseLayer layer;
    layer.weights = Eigen::MatrixXd::Zero(widths[i + 1], widths[i]);
    layer.bias = Eigen::VectorXd::Zero(widths[i + 1]);
    layer.activation = activations[i];
    layers.push_back(std::move(layer));
  }
  return layers;
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw FormatError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weights.rows()) {
      throw DimensionError("mlp: bias length does not match layer output");
    }
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      std::ostringstream msg;
      msg << "mlp: layer " << i << " expects " << l.in_dim()
          << " inputs but previous layer outputs " << layers_[i - 1].out_dim();
      throw DimensionError(msg.str());
    }
  }
}

Mlp Mlp::glorot(std::span<const int> widths,
                std::span<const Activation> activations, Rng& rng) {
  auto layers = build_layers(widths, activations);
  for (auto& layer : layers) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.in_dim() + layer.out_dim()));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = rng.uniform(-limit, limit);
      }
    }
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(std::span<const int> widths,
               std::span<const Activation> activations) {
  return Mlp(build_layers(widths, activations));
}

int Mlp::input_dim() const {
  return layers_.empty() ? 0 : layers_.front().in_dim();
}

int Mlp::output_dim() const {
  return layers_.empty() ? 0 : layers_.back().out_dim();
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) {
    std::ostringstream msg;
    msg << "mlp: input has " << x.cols() << " features, expected " << input_dim();
    throw DimensionError(msg.str());
  }
  Eigen::MatrixXd a = x;
  for (const auto& layer : layers_) {
    Eigen::MatrixXd z = a * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    apply_activation(z, layer.activation);
    a = std::move(z);
  }
  return a;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        out.push_back(l.weights(r, c));
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

void Mlp::assign(std::span<const double> params) {
  if (params.size() != parameter_count()) {
    throw DimensionError("mlp: parameter vector has the wrong length");
  }
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        l.weights(r, c) = params[k++];
      }
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = params[k++];
  }
}

MlpTape forward_tape(const Mlp& mlp, const Eigen::MatrixXd& x) {
  if (x.cols() != mlp.input_dim()) {
    throw DimensionError("mlp: input width does not match first layer");
  }
  MlpTape tape;
  tape.activations.reserve(mlp.layers().size() + 1);
  tape.activations.push_back(x);
  for (const auto& layer : mlp.layers()) {
    Eigen::MatrixXd z = tape.activations.back() * layer.weights.transpose();
    z.rowwise() += layer.bias.transpose();
    apply_activation(z, layer.activation);
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

MlpGrad MlpGrad::zeros_like(const Mlp& mlp) {
  MlpGrad g;
  for (const auto& l : mlp.layers()) {
    g.weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

void MlpGrad::add(const MlpGrad& other, double scale) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += scale * other.weights[i];
    bias[i] += scale * other.bias[i];
  }
}

void MlpGrad::scale(double s) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] *= s;
    bias[i] *= s;
  }
}

std::vector<double> MlpGrad::flatten() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (Eigen::Index r = 0; r < weights[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[i].cols(); ++c) {
        out.push_back(weights[i](r, c));
      }
    }
    for (Eigen::Index r = 0; r < bias[i].size(); ++r) out.push_back(bias[i](r));
  }
  return out;
}

double MlpGrad::squared_norm() const {
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    s += weights[i].squaredNorm() + bias[i].squaredNorm();
  }
  return s;
}

Eigen::MatrixXd backward(const Mlp& mlp, const MlpTape& tape,
                         const Eigen::MatrixXd& d_out, MlpGrad* grad) {
  const auto& layers = mlp.layers();
  Eigen::MatrixXd delta = d_out;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    const Eigen::MatrixXd& out = tape.activations[li + 1];
    switch (layer.activation) {
      case Activation::kIdentity:
        break;
      case Activation::kRelu:
        delta = delta.cwiseProduct(
            out.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
        break;
      case Activation::kSigmoid:
        delta = delta.cwiseProduct(
            out.unaryExpr([](double v) { return v * (1.0 - v); }));
        break;
    }
    const Eigen::MatrixXd& in = tape.activations[li];
    if (grad != nullptr) {
      grad->weights[li].noalias() += delta.transpose() * in;
      grad->bias[li] += delta.colwise().sum().transpose();
    }
    delta = delta * layer.weights;
  }
  return delta;
}

void sgd_step(Mlp& mlp, const MlpGrad& grad, MomentumState& state,
              double learning_rate, double momentum) {
  auto& layers = mlp.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    state.velocity.weights[i] = momentum * state.velocity.weights[i] -
                                learning_rate * grad.weights[i];
    state.velocity.bias[i] =
        momentum * state.velocity.bias[i] - learning_rate * grad.bias[i];
    layers[i].weights += state.velocity.weights[i];
    layers[i].bias += state.velocity.bias[i];
  }
}

}  // namespace grounder
