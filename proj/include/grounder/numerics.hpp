#ifndef GROUNDER_NUMERICS_HPP_
#define GROUNDER_NUMERICS_HPP_

#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace grounder {

using Complex = std::complex<double>;

// Dense real vectors. Feature vectors (pooled regional representations) and
// word vectors share the representation; accumulation is always double.
using FeatureVector = std::vector<double>;
using WordVector = std::vector<double>;

// Dense H x W x C grid stored row-major in (h, w, c) order. Storage is single
// precision to match the on-disk FMAP format; every reduction over a map is
// accumulated in double.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels);
  // Throws DimensionError on a length mismatch and DataError on NaN/Inf.
  FeatureMap(int height, int width, int channels, std::vector<float> data);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * width_;
  }
  bool empty() const { return data_.empty(); }

  float at(int h, int w, int c) const { return data_[index(h, w, c)]; }
  float& at(int h, int w, int c) { return data_[index(h, w, c)]; }

  std::span<const float> pixel(int h, int w) const {
    return {data_.data() + index(h, w, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<float> pixel(int h, int w) {
    return {data_.data() + index(h, w, 0), static_cast<std::size_t>(channels_)};
  }
  // Pixel by flat index p = h * width + w.
  std::span<const float> pixel(std::size_t p) const {
    return {data_.data() + p * channels_, static_cast<std::size_t>(channels_)};
  }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  // Copy of channels [first, first + count).
  FeatureMap slice_channels(int first, int count) const;

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t index(int h, int w, int c) const {
    return (static_cast<std::size_t>(h) * width_ + w) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

bool is_power_of_two(std::size_t n);

enum class FftDirection { kForward, kInverse };

// Radix-2 FFT. The inverse applies the 1/n scaling so that
// fft(fft(x, kForward), kInverse) == x. Throws SizingError unless the length
// is a power of two.
std::vector<Complex> fft(std::span<const Complex> signal, FftDirection direction);
void fft_inplace(std::span<Complex> signal, FftDirection direction);

// result[k] = sum_j a[j] * b[(k - j) mod n], evaluated through the FFT.
std::vector<double> circular_convolve(std::span<const double> a,
                                      std::span<const double> b);

// Per-channel mean over all pixels.
FeatureVector global_avg_pool(const FeatureMap& map);

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps). Throws
// EvaluationError if f returns a non-finite value.
FeatureVector finite_difference_grad(const ScalarFunction& f,
                                     std::span<const double> point, double eps);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);

}  // namespace grounder

#endif  // GROUNDER_NUMERICS_HPP_
