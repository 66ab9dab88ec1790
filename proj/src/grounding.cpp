#include "grounder/grounding.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "grounder/dictionary.hpp"
#include "grounder/errors.hpp"
#include "grounder/evaluation.hpp"
#include "grounder/sketch_attention.hpp"

namespace grounder {

namespace {

std::vector<double> row_vector(const Eigen::MatrixXd& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

// Index of the attribute atom a token stands for, or -1.
int resolve_attribute(const std::string& token, const AttributeModel& model,
                      const EmbeddingTable& table, double sim_threshold) {
  const int exact = model.dictionary.index_of(token);
  if (exact >= 0) return exact;
  const WordVector* vec = table.find(token);
  if (vec == nullptr || static_cast<int>(vec->size()) != model.dictionary.dim()) return -1;
  int best = -1;
  double best_sim = sim_threshold;
  for (int i = 0; i < model.dictionary.size(); ++i) {
    const auto atom = row_vector(model.dictionary.atoms, i);
    const double s = cosine_similarity(*vec, atom);
    if (s >= best_sim && (best < 0 || s > best_sim)) {
      best = i;
      best_sim = s;
    }
  }
  return best;
}

int resolve_color(const std::string& token, const ColorModel& model,
                  const EmbeddingTable& table, double sim_threshold) {
  const int exact = model.color_index(token);
  if (exact >= 0) return exact;
  if (!table.contains(token)) return -1;
  std::vector<std::string> candidates;
  for (const auto& name : model.color_names) {
    if (table.contains(name)) candidates.push_back(name);
  }
  if (candidates.empty()) return -1;
  const auto best = nearest(table, table.lookup(token), candidates, 1);
  if (best.front().similarity < sim_threshold) return -1;
  return model.color_index(best.front().token);
}

}  // namespace

AttentionMap ground_entity(const std::string& entity_class, const FeatureMap& v,
                           const EntityModel& model, const EmbeddingTable& table) {
  if (model.class_index(entity_class) < 0) {
    throw NotFoundError("entity class '" + entity_class + "' is unknown to the model");
  }
  const WordVector& word = table.lookup(entity_class);
  const Eigen::MatrixXd phi =
      mcb_pool_matrix(word, v, model.text_sketch, model.visual_sketch);
  return attention_head(phi, v.height(), v.width(), model.head);
}

EntityPrediction classify_entity(const FeatureMap& v, const EntityModel& model,
                                 const EmbeddingTable& table) {
  model.validate();
  EntityPrediction out;
  std::size_t best = 0;
  for (std::size_t k = 0; k < model.class_names.size(); ++k) {
    const AttentionMap me = ground_entity(model.class_names[k], v, model, table);
    const FeatureVector f = attend_pool(me, v);
    if (static_cast<Eigen::Index>(f.size()) != model.classifier_weights.cols()) {
      throw DimensionError("classify_entity: feature channels do not match the classifier");
    }
    const Eigen::VectorXd logits =
        model.classifier_weights * Eigen::Map<const Eigen::VectorXd>(f.data(), f.size());
    const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
    out.scores.push_back(e(static_cast<Eigen::Index>(k)) / e.sum());
    if (out.scores[k] > out.scores[best]) best = k;
  }
  out.label = model.class_names[best];
  return out;
}

TokenGrounding ground_attributes(const std::vector<std::string>& tokens,
                                 const FeatureMap& v, const AttributeModel& model,
                                 const EmbeddingTable& table, double sim_threshold) {
  if (tokens.empty()) throw EmptyQueryError("ground_attributes: no attribute tokens");
  const Eigen::MatrixXd rows = feature_rows(v);
  const std::size_t pixels = v.pixel_count();
  std::vector<double> total(pixels, 0.0);
  TokenGrounding out;
  for (const auto& token : tokens) {
    const int index = resolve_attribute(token, model, table, sim_threshold);
    if (index < 0) {
      out.resolved.emplace_back();
      out.unresolved.push_back(token);
      continue;
    }
    out.resolved.push_back(model.dictionary.names[static_cast<std::size_t>(index)]);
    const auto atom = row_vector(model.dictionary.atoms, index);
    const Eigen::MatrixXd phi = mcb_pool_matrix(atom, v, model.text_sketch, model.visual_sketch);
    const Eigen::MatrixXd r = model.head.mlp().forward(phi);
    const Eigen::MatrixXd x = rows.array().colwise() * r.col(0).array();
    const LatentScoreTape tape = latent_scores(x, model.dictionary.atoms, model.transforms);
    for (std::size_t p = 0; p < pixels; ++p) {
      total[p] += tape.scores(static_cast<Eigen::Index>(p), index);
    }
  }
  out.map = AttentionMap(v.height(), v.width());
  const double n = static_cast<double>(tokens.size());
  for (std::size_t p = 0; p < pixels; ++p) out.map.set(p, total[p] / n);
  return out;
}

FeatureMap color_pixels(const FeatureMap& v, const ColorModel& model) {
  if (model.channel_offset + model.input_channels() > v.channels()) {
    throw DimensionError("feature map has too few channels for the color model");
  }
  return v.slice_channels(model.channel_offset, model.input_channels());
}

TokenGrounding ground_color(const std::vector<std::string>& tokens,
                            const FeatureMap& pixels, const ColorModel& model,
                            const EmbeddingTable& table, double sim_threshold) {
  if (tokens.empty()) throw EmptyQueryError("ground_color: no color tokens");
  if (pixels.channels() != model.input_channels()) {
    throw DimensionError("ground_color: expected " + std::to_string(model.input_channels()) +
                         " channels, got " + std::to_string(pixels.channels()));
  }
  const Eigen::MatrixXd logits = model.transform.forward(feature_rows(pixels));
  Eigen::MatrixXd probs(logits.rows(), logits.cols());
  for (Eigen::Index p = 0; p < logits.rows(); ++p) {
    const double m = logits.row(p).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(p).array() - m).exp().matrix();
    probs.row(p) = e / e.sum();
  }
  TokenGrounding out;
  out.map = AttentionMap(pixels.height(), pixels.width());
  std::vector<double> best(pixels.pixel_count(), 0.0);
  for (const auto& token : tokens) {
    const int index = resolve_color(token, model, table, sim_threshold);
    if (index < 0) {
      out.resolved.emplace_back();
      out.unresolved.push_back(token);
      continue;
    }
    out.resolved.push_back(model.color_names[static_cast<std::size_t>(index)]);
    for (std::size_t p = 0; p < best.size(); ++p) {
      best[p] = std::max(best[p], probs(static_cast<Eigen::Index>(p), index));
    }
  }
  for (std::size_t p = 0; p < best.size(); ++p) out.map.set(p, best[p]);
  return out;
}

AttentionMap merge_maps(const AttentionMap& me, const std::optional<AttentionMap>& ma,
                        const std::optional<AttentionMap>& mc) {
  if ((ma && !ma->same_shape(me)) || (mc && !mc->same_shape(me))) {
    throw DimensionError("merge_maps: maps differ in shape");
  }
  AttentionMap g(me.height(), me.width());
  for (std::size_t p = 0; p < me.size(); ++p) {
    double second = 1.0;
    if (ma || mc) {
      second = (ma ? static_cast<double>((*ma)[p]) : 0.0) +
               (mc ? static_cast<double>((*mc)[p]) : 0.0);
    }
    g.set(p, std::clamp(static_cast<double>(me[p]) * second, 0.0, 1.0));
  }
  return g;
}

GroundingResult ground(std::string_view text, const FeatureMap& v,
                       const GroundingModels& models, const Lexicon& lexicon,
                       const EmbeddingTable& table, const GroundingConfig& cfg) {
  if (models.entity == nullptr) throw ConfigError("ground: an entity model is required");
  cfg.proposals.validate();
  GroundingResult r;
  r.query = parse_query(text, lexicon, table, cfg.sim_threshold);
  r.me = r.query.entity ? ground_entity(*r.query.entity, v, *models.entity, table)
                        : AttentionMap(v.height(), v.width(), 1.0f);
  if (!r.query.attributes.empty() && models.attributes != nullptr) {
    auto a = ground_attributes(r.query.attributes, v, *models.attributes, table,
                               cfg.sim_threshold);
    r.unresolved.insert(r.unresolved.end(), a.unresolved.begin(), a.unresolved.end());
    r.ma = std::move(a.map);
  }
  if (!r.query.colors.empty() && models.color != nullptr) {
    auto c = ground_color(r.query.colors, color_pixels(v, *models.color), *models.color,
                          table, cfg.sim_threshold);
    r.unresolved.insert(r.unresolved.end(), c.unresolved.begin(), c.unresolved.end());
    r.mc = std::move(c.map);
  }
  r.g = merge_maps(r.me, r.ma, r.mc);
  if (cfg.reject_below_threshold && r.g.max() < cfg.proposals.heat_threshold) {
    r.rejected = true;
    return r;
  }
  // Boxes are proposed and ranked on the above-threshold support of G so
  // that faint background heat does not pull selection toward large boxes.
  AttentionMap support = r.g;
  for (std::size_t p = 0; p < support.size(); ++p) {
    if (support[p] < cfg.proposals.heat_threshold) support.set(p, 0.0);
  }
  r.boxes = nms(heatmap_to_candidates(support, cfg.proposals), cfg.proposals.nms_iou);
  r.selected = select_box(r.boxes, support, cfg.proposals.area_penalty);
  r.region_score =
      region_score(r.g, r.selected ? std::optional<Box>(r.selected->box) : std::nullopt);
  return r;
}

std::string grounding_summary_json(const GroundingResult& r) {
  nlohmann::ordered_json j;
  j["query"] = nlohmann::ordered_json::parse(parsed_query_to_json(r.query));
  j["boxes"] = nlohmann::ordered_json::parse(boxes_to_json(r.boxes));
  if (r.selected) {
    const Box& b = r.selected->box;
    j["selected"] = {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"score", b.score},
                     {"coverage", r.selected->coverage}};
  } else {
    j["selected"] = nullptr;
  }
  j["region_score"] = r.region_score;
  j["rejected"] = r.rejected;
  j["unresolved"] = r.unresolved;
  return j.dump(2) + "\n";
}

}  // namespace grounder
