#include "grounder/attention_map.hpp"

#include <algorithm>
#include <cmath>

#include "grounder/errors.hpp"

namespace grounder {

AttentionMap::AttentionMap(int height, int width, float fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw DimensionError("negative map size");
  if (!(fill >= 0.0f && fill <= 1.0f)) {
    throw DataError("attention fill value outside [0, 1]");
  }
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

AttentionMap::AttentionMap(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 0 || width < 0) throw DimensionError("negative map size");
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("attention map value count does not match H x W");
  }
  for (float v : values_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DataError("attention map value outside [0, 1]");
    }
  }
}

void AttentionMap::set(std::size_t p, double value) {
  if (std::isnan(value)) throw DataError("attention value is NaN");
  values_[p] = static_cast<float>(std::clamp(value, 0.0, 1.0));
}

double AttentionMap::sum() const {
  double s = 0.0;
  for (float v : values_) s += v;
  return s;
}

double AttentionMap::mean() const {
  return values_.empty() ? 0.0 : sum() / static_cast<double>(values_.size());
}

float AttentionMap::max() const {
  return values_.empty() ? 0.0f : *std::max_element(values_.begin(), values_.end());
}

FeatureMap AttentionMap::to_feature_map() const {
  return FeatureMap(height_, width_, 1, values_);
}

AttentionMap AttentionMap::from_feature_map(const FeatureMap& map) {
  if (map.channels() != 1) {
    throw DimensionError("attention map must be single-channel");
  }
  auto d = map.data();
  return AttentionMap(map.height(), map.width(),
                      std::vector<float>(d.begin(), d.end()));
}

}  // namespace grounder
