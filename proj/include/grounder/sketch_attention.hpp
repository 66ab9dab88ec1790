#ifndef GROUNDER_SKETCH_ATTENTION_HPP_
#define GROUNDER_SKETCH_ATTENTION_HPP_

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "grounder/attention_map.hpp"
#include "grounder/mlp.hpp"
#include "grounder/numerics.hpp"

namespace grounder {

inline constexpr int kDefaultSketchDim = 256;
inline constexpr int kDefaultHeadHidden = 64;

// Count Sketch hash tables: input index i lands in bucket[i] with sign[i].
struct SketchParams {
  std::uint64_t seed = 0;
  int input_dim = 0;
  int sketch_dim = 0;
  std::vector<std::uint32_t> bucket;
  std::vector<std::int8_t> sign;

  bool operator==(const SketchParams&) const = default;
};

// Deterministic in (seed, input_dim, sketch_dim). Throws SizingError unless
// sketch_dim is a power of two, DimensionError if input_dim < 1.
SketchParams make_sketch_params(std::uint64_t seed, int input_dim, int sketch_dim);

// out[b] = sum over i with bucket[i] == b of sign[i] * x[i].
FeatureVector count_sketch(std::span<const double> x, const SketchParams& p);
FeatureVector count_sketch(std::span<const float> x, const SketchParams& p);

enum class McbNormalization {
  kNone,
  // Signed square root then per-pixel L2 normalization.
  kSignedSqrtL2,
};

// Multimodal compact bilinear pooling of a word vector with every pixel of a
// feature map: phi(h, w) = IFFT(FFT(sketch(t)) .* FFT(sketch(v(h, w)))).
// Returns a P x sketch_dim matrix (row p = pixel h * W + w).
Eigen::MatrixXd mcb_pool_matrix(std::span<const double> t, const FeatureMap& v,
                                const SketchParams& pt, const SketchParams& pv,
                                McbNormalization norm = McbNormalization::kSignedSqrtL2);

FeatureMap mcb_pool(std::span<const double> t, const FeatureMap& v,
                    const SketchParams& pt, const SketchParams& pv,
                    McbNormalization norm = McbNormalization::kSignedSqrtL2);

// Chain of 1x1 convolutions over the pooled map; the last layer is a single
// sigmoid channel.
class AttentionHeadParams {
 public:
  AttentionHeadParams() = default;
  // Throws DimensionError unless the final layer has one sigmoid output.
  explicit AttentionHeadParams(Mlp mlp);

  // in -> hidden (relu) -> hidden (relu) -> 1 (sigmoid), Glorot init.
  static AttentionHeadParams make_default(int in_channels, Rng& rng,
                                          int hidden = kDefaultHeadHidden);

  int in_channels() const { return mlp_.input_dim(); }
  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }

  bool operator==(const AttentionHeadParams& o) const { return mlp_ == o.mlp_; }

 private:
  Mlp mlp_;
};

// R = head(phi). Values are kept strictly inside (0, 1) even after rounding
// to single precision.
AttentionMap attention_head(const FeatureMap& phi, const AttentionHeadParams& params);
AttentionMap attention_head(const Eigen::MatrixXd& phi_rows, int height, int width,
                            const AttentionHeadParams& params);

// f[c] = mean over pixels of r(h, w) * v(h, w, c).
FeatureVector attend_pool(const AttentionMap& r, const FeatureMap& v);

// Row-per-pixel view of a feature map as doubles.
Eigen::MatrixXd feature_rows(const FeatureMap& v);

}  // namespace grounder

#endif  // GROUNDER_SKETCH_ATTENTION_HPP_
