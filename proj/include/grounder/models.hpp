#ifndef GROUNDER_MODELS_HPP_
#define GROUNDER_MODELS_HPP_

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "grounder/dictionary.hpp"
#include "grounder/mlp.hpp"
#include "grounder/sketch_attention.hpp"

namespace grounder {

// Entity module: attention over MCB(word, v) plus the K-way classifier that
// supervises it from image-level labels.
struct EntityModel {
  SketchParams text_sketch;
  SketchParams visual_sketch;
  AttentionHeadParams head;
  // K x channels, no bias: a bias would let one class win with R = 0.
  Eigen::MatrixXd classifier_weights;
  std::vector<std::string> class_names;

  int class_index(const std::string& name) const;
  // Throws DimensionError when the parts do not fit together.
  void validate() const;
  bool operator==(const EntityModel& o) const {
    return text_sketch == o.text_sketch && visual_sketch == o.visual_sketch &&
           head == o.head && classifier_weights == o.classifier_weights &&
           class_names == o.class_names;
  }
};

// Semantic attribute module: per-attribute attention plus dictionary scoring
// in a learned latent space.
struct AttributeModel {
  SketchParams text_sketch;
  SketchParams visual_sketch;
  AttentionHeadParams head;
  AttributeDictionary dictionary;
  LatentTransforms transforms;

  void validate() const;
  bool operator==(const AttributeModel& o) const {
    return text_sketch == o.text_sketch && visual_sketch == o.visual_sketch &&
           head == o.head && dictionary == o.dictionary && transforms == o.transforms;
  }
};

// Raw RGB channels at the front of every feature map.
inline constexpr int kColorInputChannels = 3;

// Color module: per-pixel transform from the raw color channels
// [channel_offset, channel_offset + transform.input_dim()) of a feature map
// to one logit per color name.
struct ColorModel {
  Mlp transform;
  std::vector<std::string> color_names;
  int channel_offset = 0;

  int input_channels() const { return transform.input_dim(); }
  int color_index(const std::string& name) const;
  void validate() const;
  bool operator==(const ColorModel& o) const {
    return transform == o.transform && color_names == o.color_names &&
           channel_offset == o.channel_offset;
  }
};

// Model container: "GMDL", u32 version, u32 kind, then the kind's payload.
// Doubles are stored bit-exact, so save/load round-trips exactly.
inline constexpr std::uint32_t kModelFileVersion = 1;
enum class ModelKind : std::uint32_t { kEntity = 1, kAttribute = 2, kColor = 3 };

void save_model(const std::filesystem::path& path, const EntityModel& model);
void save_model(const std::filesystem::path& path, const AttributeModel& model);
void save_model(const std::filesystem::path& path, const ColorModel& model);

EntityModel load_entity_model(const std::filesystem::path& path);
AttributeModel load_attribute_model(const std::filesystem::path& path);
ColorModel load_color_model(const std::filesystem::path& path);

// Kind stored in a model file; throws FormatError if it is not one.
ModelKind peek_model_kind(const std::filesystem::path& path);

}  // namespace grounder

#endif  // GROUNDER_MODELS_HPP_
