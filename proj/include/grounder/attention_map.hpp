#ifndef GROUNDER_ATTENTION_MAP_HPP_
#define GROUNDER_ATTENTION_MAP_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "grounder/numerics.hpp"

namespace grounder {

// H x W heatmap with every value in [0, 1]. Used for Me, Ma, Mc and the
// merged map G.
class AttentionMap {
 public:
  AttentionMap() = default;
  AttentionMap(int height, int width, float fill = 0.0f);
  // Throws DimensionError on a length mismatch, DataError on a value outside
  // [0, 1] or a NaN.
  AttentionMap(int height, int width, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator[](std::size_t p) const { return values_[p]; }
  std::span<const float> values() const { return values_; }

  // Writes are clamped to [0, 1].
  void set(std::size_t p, double value);
  void set(int y, int x, double value) {
    set(static_cast<std::size_t>(y) * width_ + x, value);
  }

  double sum() const;
  double mean() const;
  float max() const;
  bool same_shape(const AttentionMap& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  FeatureMap to_feature_map() const;
  // Requires a single-channel map with values in [0, 1].
  static AttentionMap from_feature_map(const FeatureMap& map);

  bool operator==(const AttentionMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

}  // namespace grounder

#endif  // GROUNDER_ATTENTION_MAP_HPP_
