#ifndef GROUNDER_EVALUATION_HPP_
#define GROUNDER_EVALUATION_HPP_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grounder/attention_map.hpp"
#include "grounder/proposals.hpp"

namespace grounder {

// Mean of the top 10% (at least one) of g's values inside the box; 0 when no
// box was selected.
double region_score(const AttentionMap& g, const std::optional<Box>& selected);

// IoU between the pixel set {g >= threshold} and the box; 0 when both are
// empty.
double mask_iou(const AttentionMap& g, double threshold, const Box& box);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocReport {
  std::vector<RocPoint> curve;  // starts at (0, 0), ends at (1, 1)
  double auc = 0.0;
};

// Threshold sweep over the distinct scores, highest first; a score counts as
// positive when >= threshold. The first point sits just above the top score.
// AUC is the Mann-Whitney statistic with ties worth one half. Throws
// ConfigError if either set is empty.
RocReport roc_auc(std::span<const double> positive_scores,
                  std::span<const double> negative_scores);

struct QueryCase {
  std::filesystem::path features_path;
  std::string query;
  bool is_counterfactual = false;
  std::optional<Box> truth;
  std::size_t image = 0;  // index into the annotation list
  std::string token;      // substituted word, empty for plain entity queries
};

// Counted over non-counterfactual cases: correct iff a prediction exists and
// its IoU with the truth is >= iou_threshold. Throws DataError when a scored
// case has no truth box, DimensionError when the lists differ in length.
double localization_accuracy(std::span<const QueryCase> cases,
                             std::span<const std::optional<Box>> predictions,
                             double iou_threshold = 0.5);

struct ImageAnnotation {
  std::filesystem::path features_path;
  std::string entity;
  std::vector<std::string> attributes;
  std::vector<std::string> colors;
  std::optional<Box> truth;
};

// Words substituted into caption templates: attributes first, then colors.
struct CounterfactualCorpus {
  std::vector<std::string> attributes;
  std::vector<std::string> colors;
  std::size_t size() const { return attributes.size() + colors.size(); }
};

enum class CaptionTemplate {
  // "the {word} {entity}"
  kWordEntity,
  // "{attribute} {entity} in {color}"; the substituted word replaces its own
  // slot and the other slot keeps a present word. Images lacking the other
  // kind of word fall back to kWordEntity.
  kAttributeEntityColor,
};

// One counterfactual case per (image, corpus word absent from the image), in
// image order then corpus order. Throws DataError if an image lists a word
// outside the corpus.
std::vector<QueryCase> generate_counterfactual_queries(
    std::span<const ImageAnnotation> annotations, const CounterfactualCorpus& corpus,
    CaptionTemplate caption = CaptionTemplate::kWordEntity);

// The matching normal cases: one per (image, corpus word present in the
// image), carrying the truth box.
std::vector<QueryCase> generate_normal_queries(
    std::span<const ImageAnnotation> annotations, const CounterfactualCorpus& corpus,
    CaptionTemplate caption = CaptionTemplate::kWordEntity);

// Full description of an image: "{attribute} {entity} in {color}" when it
// has an attribute, else "the {color} {entity}" or "the {entity}".
std::string describe(const ImageAnnotation& annotation);

struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  bool operator==(const Segment&) const = default;
};

// Maximal runs with score >= threshold and length >= min_len. Throws
// ConfigError if min_len is 0.
std::vector<Segment> temporal_ground(std::span<const double> frame_scores,
                                     double threshold, std::size_t min_len);

enum class AlignMode { kArgmax, kGreedyUnique };

struct Alignment {
  // frame per caption; empty for captions left without a frame
  std::vector<std::optional<std::size_t>> frame;
  std::vector<std::size_t> unassigned;
};

// scores[i][j] is caption i against frame j. Throws DimensionError on an
// empty or ragged matrix.
Alignment align_captions(const std::vector<std::vector<double>>& scores, AlignMode mode);

struct EvalReport {
  RocReport roc;
  std::optional<double> accuracy;
  std::size_t n_cases = 0;
};

// {"auc": ..., "roc": [{"fpr", "tpr", "thr"}], "accuracy": ..., "n_cases": ...}
std::string report_to_json(const EvalReport& report);
// "fpr,tpr,threshold" header then one row per curve point.
std::string roc_to_csv(const RocReport& roc);

}  // namespace grounder

#endif  // GROUNDER_EVALUATION_HPP_
