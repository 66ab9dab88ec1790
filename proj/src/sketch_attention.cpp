#include "grounder/sketch_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "grounder/errors.hpp"
#include "grounder/rng.hpp"

namespace grounder {

namespace {

template <typename T>
FeatureVector sketch_impl(std::span<const T> x, const SketchParams& p) {
  if (static_cast<int>(x.size()) != p.input_dim) {
    std::ostringstream msg;
    msg << "count_sketch: input has " << x.size() << " entries, params expect "
        << p.input_dim;
    throw DimensionError(msg.str());
  }
  FeatureVector out(p.sketch_dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[p.bucket[i]] += p.sign[i] * static_cast<double>(x[i]);
  }
  return out;
}

// Largest float below 1 and smallest positive normal float.
constexpr float kBelowOne = 1.0f - 0x1.0p-24f;
constexpr float kAboveZero = std::numeric_limits<float>::min();

}  // namespace

SketchParams make_sketch_params(std::uint64_t seed, int input_dim, int sketch_dim) {
  if (sketch_dim < 1 || !is_power_of_two(static_cast<std::size_t>(sketch_dim))) {
    throw SizingError("sketch_dim must be a power of two, got " +
                      std::to_string(sketch_dim));
  }
  if (input_dim < 1) throw DimensionError("sketch input_dim must be >= 1");
  SketchParams p;
  p.seed = seed;
  p.input_dim = input_dim;
  p.sketch_dim = sketch_dim;
  Rng rng({seed, static_cast<std::uint64_t>(input_dim),
           static_cast<std::uint64_t>(sketch_dim)});
  p.bucket.resize(input_dim);
  p.sign.resize(input_dim);
  for (int i = 0; i < input_dim; ++i) {
    const std::uint64_t r = rng.next();
    // sketch_dim is a power of two, so the low bits are an unbiased bucket.
    p.bucket[i] = static_cast<std::uint32_t>(r & (sketch_dim - 1));
    p.sign[i] = (r >> 63) ? std::int8_t{1} : std::int8_t{-1};
  }
  return p;
}

FeatureVector count_sketch(std::span<const double> x, const SketchParams& p) {
  return sketch_impl(x, p);
}

FeatureVector count_sketch(std::span<const float> x, const SketchParams& p) {
  return sketch_impl(x, p);
}

Eigen::MatrixXd mcb_pool_matrix(std::span<const double> t, const FeatureMap& v,
                                const SketchParams& pt, const SketchParams& pv,
                                McbNormalization norm) {
  if (pt.sketch_dim != pv.sketch_dim) {
    throw ConfigError("mcb_pool: textual and visual sketch dims differ");
  }
  if (v.channels() != pv.input_dim) {
    throw DimensionError("mcb_pool: feature channels do not match visual sketch");
  }
  const int d = pt.sketch_dim;
  const auto st = count_sketch(t, pt);
  std::vector<Complex> ft(st.begin(), st.end());
  fft_inplace(ft, FftDirection::kForward);

  const auto pixels = static_cast<Eigen::Index>(v.pixel_count());
  Eigen::MatrixXd out(pixels, d);
  std::vector<Complex> buf(d);
  for (Eigen::Index p = 0; p < pixels; ++p) {
    const auto sv = count_sketch(v.pixel(static_cast<std::size_t>(p)), pv);
    for (int k = 0; k < d; ++k) buf[k] = Complex(sv[k], 0.0);
    fft_inplace(buf, FftDirection::kForward);
    for (int k = 0; k < d; ++k) buf[k] *= ft[k];
    fft_inplace(buf, FftDirection::kInverse);
    for (int k = 0; k < d; ++k) out(p, k) = buf[k].real();
  }
  if (norm == McbNormalization::kSignedSqrtL2) {
    for (Eigen::Index p = 0; p < pixels; ++p) {
      auto row = out.row(p);
      for (int k = 0; k < d; ++k) {
        const double x = row(k);
        row(k) = (x < 0.0 ? -1.0 : 1.0) * std::sqrt(std::abs(x));
      }
      const double n = row.norm();
      if (n > 0.0) row /= n;
    }
  }
  return out;
}

FeatureMap mcb_pool(std::span<const double> t, const FeatureMap& v,
                    const SketchParams& pt, const SketchParams& pv,
                    McbNormalization norm) {
  const Eigen::MatrixXd m = mcb_pool_matrix(t, v, pt, pv, norm);
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index p = 0; p < m.rows(); ++p) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      data[k++] = static_cast<float>(m(p, c));
    }
  }
  return FeatureMap(v.height(), v.width(), static_cast<int>(m.cols()), std::move(data));
}

AttentionHeadParams::AttentionHeadParams(Mlp mlp) : mlp_(std::move(mlp)) {
  if (mlp_.empty()) throw DimensionError("attention head has no layers");
  const auto& last = mlp_.layers().back();
  if (last.out_dim() != 1 || last.activation != Activation::kSigmoid) {
    throw DimensionError("attention head must end in one sigmoid channel");
  }
}

AttentionHeadParams AttentionHeadParams::make_default(int in_channels, Rng& rng,
                                                      int hidden) {
  const int widths[] = {in_channels, hidden, hidden, 1};
  const Activation acts[] = {Activation::kRelu, Activation::kRelu,
                             Activation::kSigmoid};
  return AttentionHeadParams(Mlp::glorot(widths, acts, rng));
}

AttentionMap attention_head(const Eigen::MatrixXd& phi_rows, int height, int width,
                            const AttentionHeadParams& params) {
  if (phi_rows.cols() != params.in_channels()) {
    std::ostringstream msg;
    msg << "attention_head: map has " << phi_rows.cols()
        << " channels, head expects " << params.in_channels();
    throw DimensionError(msg.str());
  }
  if (phi_rows.rows() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("attention_head: row count does not match H x W");
  }
  const Eigen::MatrixXd r = params.mlp().forward(phi_rows);
  std::vector<float> values(static_cast<std::size_t>(r.rows()));
  for (Eigen::Index p = 0; p < r.rows(); ++p) {
    values[p] = std::clamp(static_cast<float>(r(p, 0)), kAboveZero, kBelowOne);
  }
  return AttentionMap(height, width, std::move(values));
}

Eigen::MatrixXd feature_rows(const FeatureMap& v) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(v.pixel_count()), v.channels());
  for (std::size_t p = 0; p < v.pixel_count(); ++p) {
    auto px = v.pixel(p);
    for (int c = 0; c < v.channels(); ++c) rows(p, c) = px[c];
  }
  return rows;
}

AttentionMap attention_head(const FeatureMap& phi, const AttentionHeadParams& params) {
  if (phi.channels() != params.in_channels()) {
    std::ostringstream msg;
    msg << "attention_head: map has " << phi.channels()
        << " channels, head expects " << params.in_channels();
    throw DimensionError(msg.str());
  }
  return attention_head(feature_rows(phi), phi.height(), phi.width(), params);
}

FeatureVector attend_pool(const AttentionMap& r, const FeatureMap& v) {
  if (r.height() != v.height() || r.width() != v.width()) {
    throw DimensionError("attend_pool: attention and feature maps differ in size");
  }
  if (v.pixel_count() == 0) throw DimensionError("attend_pool: empty map");
  FeatureVector f(v.channels(), 0.0);
  for (std::size_t p = 0; p < v.pixel_count(); ++p) {
    const double w = r[p];
    auto px = v.pixel(p);
    for (int c = 0; c < v.channels(); ++c) f[c] += w * px[c];
  }
  const double inv = 1.0 / static_cast<double>(v.pixel_count());
  for (auto& x : f) x *= inv;
  return f;
}

}  // namespace grounder
