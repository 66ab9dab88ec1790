#include "grounder/numerics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "grounder/errors.hpp"

namespace grounder {

FeatureMap::FeatureMap(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw DimensionError("feature map dimensions must be non-negative");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
}

FeatureMap::FeatureMap(int height, int width, int channels,
                       std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 0 || width < 0 || channels < 0) {
    throw DimensionError("feature map dimensions must be non-negative");
  }
  const std::size_t expected =
      static_cast<std::size_t>(height) * width * channels;
  if (data_.size() != expected) {
    std::ostringstream msg;
    msg << "feature map data length " << data_.size() << " != " << height
        << "x" << width << "x" << channels;
    throw DimensionError(msg.str());
  }
  for (float v : data_) {
    if (!std::isfinite(v)) throw DataError("feature map contains NaN or Inf");
  }
}

FeatureMap FeatureMap::slice_channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > channels_) {
    throw DimensionError("channel slice out of range");
  }
  FeatureMap out(height_, width_, count);
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    for (int c = 0; c < count; ++c) {
      out.data_[p * count + c] = data_[p * channels_ + first + c];
    }
  }
  return out;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::span<Complex> a, FftDirection direction) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) {
    std::ostringstream msg;
    msg << "fft length " << n << " is not a power of two";
    throw SizingError(msg.str());
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = direction == FftDirection::kForward ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles computed directly instead of by recurrence to keep the
      // round-trip error near machine precision.
      const double angle = sign * 2.0 * std::numbers::pi *
                           static_cast<double>(k) / static_cast<double>(len);
      const Complex w(std::cos(angle), std::sin(angle));
      for (std::size_t start = 0; start < n; start += len) {
        const Complex u = a[start + k];
        const Complex v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
  if (direction == FftDirection::kInverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= scale;
  }
}

std::vector<Complex> fft(std::span<const Complex> signal,
                         FftDirection direction) {
  std::vector<Complex> out(signal.begin(), signal.end());
  fft_inplace(out, direction);
  return out;
}

std::vector<double> circular_convolve(std::span<const double> a,
                                      std::span<const double> b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "circular_convolve length mismatch: " << a.size() << " vs "
        << b.size();
    throw DimensionError(msg.str());
  }
  std::vector<Complex> fa(a.begin(), a.end());
  std::vector<Complex> fb(b.begin(), b.end());
  fft_inplace(fa, FftDirection::kForward);
  fft_inplace(fb, FftDirection::kForward);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  fft_inplace(fa, FftDirection::kInverse);
  std::vector<double> out(fa.size());
  for (std::size_t i = 0; i < fa.size(); ++i) out[i] = fa[i].real();
  return out;
}

FeatureVector global_avg_pool(const FeatureMap& map) {
  if (map.pixel_count() == 0) {
    throw DimensionError("global_avg_pool of an empty map");
  }
  FeatureVector out(map.channels(), 0.0);
  for (std::size_t p = 0; p < map.pixel_count(); ++p) {
    auto px = map.pixel(p);
    for (int c = 0; c < map.channels(); ++c) out[c] += px[c];
  }
  const double inv = 1.0 / static_cast<double>(map.pixel_count());
  for (auto& v : out) v *= inv;
  return out;
}

FeatureVector finite_difference_grad(const ScalarFunction& f,
                                     std::span<const double> point,
                                     double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite difference eps must be > 0");
  std::vector<double> x(point.begin(), point.end());
  FeatureVector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double plus = f(x);
    x[i] = saved - eps;
    const double minus = f(x);
    x[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      std::ostringstream msg;
      msg << "non-finite function value at coordinate " << i;
      throw EvaluationError(msg.str());
    }
    grad[i] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

}  // namespace grounder
