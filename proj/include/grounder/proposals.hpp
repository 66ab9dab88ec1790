#ifndef GROUNDER_PROPOSALS_HPP_
#define GROUNDER_PROPOSALS_HPP_

#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "grounder/attention_map.hpp"

namespace grounder {

// Axis-aligned pixel rectangle [x, x + w) x [y, y + h).
struct Box {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  double score = 0.0;

  int area() const { return w * h; }
  auto geometry() const { return std::tuple(y, x, w, h); }
  bool same_geometry(const Box& o) const { return geometry() == o.geometry(); }
  bool operator==(const Box&) const = default;
};

struct ProposalConfig {
  double heat_threshold = 0.5;
  // Window sizes as fractions of (map width, map height); resolved with
  // floor and a minimum of one pixel.
  std::vector<std::pair<double, double>> scales = {{0.25, 0.25}, {0.5, 0.5}, {0.75, 0.75}};
  int stride = 2;
  double nms_iou = 0.5;
  double area_penalty = 0.1;  // kappa
  int windows_per_scale = 5;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

double iou(const Box& a, const Box& b);

// Sum of g over the box.
double box_mass(const AttentionMap& g, const Box& b);

// (mass inside b / total mass) - kappa * area(b) / area(map); 0 when the map
// has no mass.
double coverage_score(const Box& b, const AttentionMap& g, double kappa);

// Bounding boxes of the 4-connected components of {g >= heat_threshold}
// plus, per scale, the top stride-swept windows by summed heat (windows with
// zero heat are skipped). Exact duplicates are removed; every candidate is
// scored with coverage_score. Empty when nothing carries heat.
std::vector<Box> heatmap_to_candidates(const AttentionMap& g,
                                       const ProposalConfig& cfg);

// Greedy suppression in descending score order; equal scores are visited in
// ascending (y, x, w, h) order. A box is dropped when its IoU with an already
// kept box is >= iou_threshold.
std::vector<Box> nms(std::vector<Box> boxes, double iou_threshold);

struct Selection {
  Box box;
  double coverage = 0.0;
};

// Argmax of coverage_score; ties prefer the smaller area, then ascending
// (y, x, w, h). Nothing when there are no boxes or g has no mass.
std::optional<Selection> select_box(std::span<const Box> boxes,
                                    const AttentionMap& g, double kappa);

std::string boxes_to_json(std::span<const Box> boxes);
std::vector<Box> boxes_from_json(const std::string& json_text);

}  // namespace grounder

#endif  // GROUNDER_PROPOSALS_HPP_
