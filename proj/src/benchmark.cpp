#include "grounder/benchmark.hpp"

#include "grounder/errors.hpp"
#include "grounder/fmap_io.hpp"
#include "grounder/parallel.hpp"

namespace grounder {

std::vector<ImageAnnotation> annotations_from_manifest(const DatasetManifest& manifest) {
  std::vector<ImageAnnotation> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    if (!rec.entity) {
      throw DataError("record " + std::to_string(i) + " (" + rec.features_path.string() +
                      ") has no entity label");
    }
    out.push_back({rec.features_path, *rec.entity, rec.attributes, rec.colors, rec.box});
  }
  return out;
}

std::vector<CaseResult> ground_cases(std::span<const QueryCase> cases,
                                     const GroundingModels& models, const Lexicon& lexicon,
                                     const EmbeddingTable& table, const GroundingConfig& cfg,
                                     int threads) {
  return map_indices<CaseResult>(cases.size(), threads, [&](std::size_t i) {
    const FeatureMap v = read_fmap(cases[i].features_path);
    const GroundingResult r = ground(cases[i].query, v, models, lexicon, table, cfg);
    CaseResult out;
    out.region_score = r.region_score;
    if (r.selected) out.selected = r.selected->box;
    out.rejected = r.rejected;
    return out;
  });
}

EvalReport evaluate_counterfactual(std::span<const ImageAnnotation> annotations,
                                   const CounterfactualCorpus& corpus,
                                   const GroundingModels& models, const Lexicon& lexicon,
                                   const EmbeddingTable& table, const GroundingConfig& cfg,
                                   CaptionTemplate caption, int threads) {
  const auto normal = generate_normal_queries(annotations, corpus, caption);
  const auto counter = generate_counterfactual_queries(annotations, corpus, caption);
  const auto normal_results = ground_cases(normal, models, lexicon, table, cfg, threads);
  const auto counter_results = ground_cases(counter, models, lexicon, table, cfg, threads);
  std::vector<double> pos;
  std::vector<double> neg;
  std::vector<std::optional<Box>> predictions;
  for (const auto& r : normal_results) {
    pos.push_back(r.region_score);
    predictions.push_back(r.selected);
  }
  for (const auto& r : counter_results) neg.push_back(r.region_score);
  EvalReport report;
  report.roc = roc_auc(pos, neg);
  report.accuracy = localization_accuracy(normal, predictions);
  report.n_cases = normal.size() + counter.size();
  return report;
}

EvalReport evaluate_localization(std::span<const ImageAnnotation> annotations,
                                 const GroundingModels& models, const Lexicon& lexicon,
                                 const EmbeddingTable& table, const GroundingConfig& cfg,
                                 double iou_threshold, int threads) {
  std::vector<QueryCase> cases;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    QueryCase c;
    c.features_path = annotations[i].features_path;
    c.query = describe(annotations[i]);
    c.truth = annotations[i].truth;
    c.image = i;
    cases.push_back(std::move(c));
  }
  const auto results = ground_cases(cases, models, lexicon, table, cfg, threads);
  std::vector<std::optional<Box>> predictions;
  for (const auto& r : results) predictions.push_back(r.selected);
  EvalReport report;
  report.accuracy = localization_accuracy(cases, predictions, iou_threshold);
  report.n_cases = cases.size();
  return report;
}

EntityMetrics evaluate_entity(std::span<const ImageAnnotation> annotations,
                              const EntityModel& model, const EmbeddingTable& table,
                              double heat_threshold, double iou_threshold, int threads) {
  struct Outcome {
    bool correct = false;
    bool hit = false;
  };
  const auto outcomes = map_indices<Outcome>(annotations.size(), threads, [&](std::size_t i) {
    const auto& a = annotations[i];
    if (!a.truth) {
      throw DataError("evaluate_entity: image " + std::to_string(i) + " has no truth box");
    }
    const FeatureMap v = read_fmap(a.features_path);
    Outcome o;
    o.correct = classify_entity(v, model, table).label == a.entity;
    const AttentionMap me = ground_entity(a.entity, v, model, table);
    o.hit = mask_iou(me, heat_threshold, *a.truth) >= iou_threshold;
    return o;
  });
  EntityMetrics m;
  m.n_images = outcomes.size();
  if (outcomes.empty()) return m;
  std::size_t correct = 0;
  std::size_t hits = 0;
  for (const auto& o : outcomes) {
    correct += static_cast<std::size_t>(o.correct);
    hits += static_cast<std::size_t>(o.hit);
  }
  m.classification_accuracy = static_cast<double>(correct) / static_cast<double>(m.n_images);
  m.mask_hit_rate = static_cast<double>(hits) / static_cast<double>(m.n_images);
  return m;
}

}  // namespace grounder
