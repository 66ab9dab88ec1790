#ifndef GROUNDER_BENCHMARK_HPP_
#define GROUNDER_BENCHMARK_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grounder/evaluation.hpp"
#include "grounder/grounding.hpp"
#include "grounder/trainer.hpp"

namespace grounder {

// One annotation per record, in manifest order. Throws DataError naming the
// record when it has no entity label.
std::vector<ImageAnnotation> annotations_from_manifest(const DatasetManifest& manifest);

// Outcome of grounding one query case.
struct CaseResult {
  double region_score = 0.0;
  std::optional<Box> selected;
  bool rejected = false;
};

// Grounds every case against its features file. Cases fan out over
// `threads` workers; results keep the input order.
std::vector<CaseResult> ground_cases(std::span<const QueryCase> cases,
                                     const GroundingModels& models, const Lexicon& lexicon,
                                     const EmbeddingTable& table, const GroundingConfig& cfg,
                                     int threads = 1);

// Normal queries (words present in the image) are the positives and
// counterfactual queries the negatives; both arms score their predicted
// regions. The accuracy field is localization accuracy over the normal
// queries.
EvalReport evaluate_counterfactual(std::span<const ImageAnnotation> annotations,
                                   const CounterfactualCorpus& corpus,
                                   const GroundingModels& models, const Lexicon& lexicon,
                                   const EmbeddingTable& table, const GroundingConfig& cfg,
                                   CaptionTemplate caption = CaptionTemplate::kWordEntity,
                                   int threads = 1);

// Localization accuracy of the full description of each image
// (see describe()).
EvalReport evaluate_localization(std::span<const ImageAnnotation> annotations,
                                 const GroundingModels& models, const Lexicon& lexicon,
                                 const EmbeddingTable& table, const GroundingConfig& cfg,
                                 double iou_threshold = 0.5, int threads = 1);

// Entity-module metrics on labeled images: classification accuracy and the
// fraction of images whose thresholded Me overlaps the truth box with
// IoU >= iou_threshold.
struct EntityMetrics {
  double classification_accuracy = 0.0;
  double mask_hit_rate = 0.0;
  std::size_t n_images = 0;
};
EntityMetrics evaluate_entity(std::span<const ImageAnnotation> annotations,
                              const EntityModel& model, const EmbeddingTable& table,
                              double heat_threshold = 0.5, double iou_threshold = 0.5,
                              int threads = 1);

}  // namespace grounder

#endif  // GROUNDER_BENCHMARK_HPP_
