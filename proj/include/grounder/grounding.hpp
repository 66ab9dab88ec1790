#ifndef GROUNDER_GROUNDING_HPP_
#define GROUNDER_GROUNDING_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grounder/attention_map.hpp"
#include "grounder/embedding.hpp"
#include "grounder/models.hpp"
#include "grounder/numerics.hpp"
#include "grounder/proposals.hpp"
#include "grounder/query_parser.hpp"

namespace grounder {

// Me = head(MCB(word(entity_class), v)). Throws NotFoundError when the class
// is unknown to the model or has no embedding.
AttentionMap ground_entity(const std::string& entity_class, const FeatureMap& v,
                           const EntityModel& model, const EmbeddingTable& table);

struct EntityPrediction {
  std::string label;
  // Per class, in model order: softmax(W f_k)[k] where f_k pools v under the
  // attention map of class k's own word.
  std::vector<double> scores;
};
// Picks the class whose own attention gives it the highest posterior; ties
// go to the lower class index.
EntityPrediction classify_entity(const FeatureMap& v, const EntityModel& model,
                                 const EmbeddingTable& table);

// A sub-map plus the tokens that could not be tied to the model. A token
// that resolves to nothing contributes an all-zero map and sets `flagged`.
struct TokenGrounding {
  AttentionMap map;
  std::vector<std::string> resolved;    // model name used per token, "" if none
  std::vector<std::string> unresolved;  // tokens that matched nothing
  bool flagged() const { return !unresolved.empty(); }
};

// Per token: pixel feature R(p) * v(p) scored against that token's atom in
// the latent space; Ma is the mean over tokens. Tokens outside the
// dictionary use the nearest atom by cosine if it reaches sim_threshold.
// Throws EmptyQueryError for an empty token list.
TokenGrounding ground_attributes(const std::vector<std::string>& tokens,
                                 const FeatureMap& v, const AttributeModel& model,
                                 const EmbeddingTable& table,
                                 double sim_threshold = kDefaultSimThreshold);

// Per pixel softmax over the model's colors; Mc is the max over tokens.
// `pixels` must carry exactly the model's input channels.
TokenGrounding ground_color(const std::vector<std::string>& tokens,
                            const FeatureMap& pixels, const ColorModel& model,
                            const EmbeddingTable& table,
                            double sim_threshold = kDefaultSimThreshold);

// Color channels of a full feature map as the color model expects them.
FeatureMap color_pixels(const FeatureMap& v, const ColorModel& model);

// G = clamp(me * (ma + mc), 0, 1); an absent term is dropped rather than
// zeroed, and with neither present G = me. Throws DimensionError when the
// present maps differ in shape.
AttentionMap merge_maps(const AttentionMap& me, const std::optional<AttentionMap>& ma,
                        const std::optional<AttentionMap>& mc);

struct GroundingModels {
  const EntityModel* entity = nullptr;
  const AttributeModel* attributes = nullptr;  // optional
  const ColorModel* color = nullptr;           // optional
};

struct GroundingConfig {
  ProposalConfig proposals;
  double sim_threshold = kDefaultSimThreshold;
  // Emit no boxes when G never reaches proposals.heat_threshold.
  bool reject_below_threshold = true;
};

struct GroundingResult {
  ParsedQuery query;
  AttentionMap me;
  std::optional<AttentionMap> ma;
  std::optional<AttentionMap> mc;
  AttentionMap g;
  std::vector<Box> boxes;  // after NMS, best first
  std::optional<Selection> selected;
  double region_score = 0.0;
  bool rejected = false;
  std::vector<std::string> unresolved;  // attribute or color tokens
};

// Parse, ground each part, merge, propose and select. The query's attribute
// and color terms are skipped when the matching model is absent. A query
// without an entity gets Me = 1 everywhere.
GroundingResult ground(std::string_view text, const FeatureMap& v,
                       const GroundingModels& models, const Lexicon& lexicon,
                       const EmbeddingTable& table, const GroundingConfig& cfg = {});

// {"query": parsed, "boxes": [...], "selected": box|null, "region_score": s,
//  "rejected": b, "unresolved": [...]}
std::string grounding_summary_json(const GroundingResult& result);

}  // namespace grounder

#endif  // GROUNDER_GROUNDING_HPP_
