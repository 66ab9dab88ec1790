#include "grounder/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "grounder/errors.hpp"

namespace grounder {

double mask_iou(const AttentionMap& g, double threshold, const Box& box) {
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      const bool in_mask = g.at(y, x) >= threshold;
      const bool in_box = x >= box.x && x < box.x + box.w && y >= box.y && y < box.y + box.h;
      inter += static_cast<std::size_t>(in_mask && in_box);
      uni += static_cast<std::size_t>(in_mask || in_box);
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double region_score(const AttentionMap& g, const std::optional<Box>& selected) {
  if (!selected) return 0.0;
  const Box& b = *selected;
  if (b.x < 0 || b.y < 0 || b.x + b.w > g.width() || b.y + b.h > g.height() ||
      b.w < 1 || b.h < 1) {
    throw DimensionError("region_score: box outside the map");
  }
  std::vector<double> inside;
  inside.reserve(static_cast<std::size_t>(b.area()));
  for (int y = b.y; y < b.y + b.h; ++y) {
    for (int x = b.x; x < b.x + b.w; ++x) inside.push_back(g.at(y, x));
  }
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(inside.size()))));
  std::partial_sort(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(k),
                    inside.end(), std::greater<>());
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += inside[i];
  return total / static_cast<double>(k);
}

RocReport roc_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) {
    throw ConfigError("roc_auc: need at least one positive and one negative score");
  }
  for (double s : pos) {
    if (!std::isfinite(s)) throw DataError("roc_auc: non-finite positive score");
  }
  for (double s : neg) {
    if (!std::isfinite(s)) throw DataError("roc_auc: non-finite negative score");
  }
  // (score, is_positive) sorted by descending score.
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.emplace_back(s, true);
  for (double s : neg) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  RocReport report;
  report.curve.push_back({0.0, 0.0, std::nextafter(all.front().first,
                                                   std::numeric_limits<double>::infinity())});
  // Walking tie groups from the top: each negative in a group beats every
  // positive already passed and ties with the group's positives.
  double tp = 0.0;
  double fp = 0.0;
  double wins = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    const double s = all[i].first;
    double gp = 0.0;
    double gn = 0.0;
    while (i < all.size() && all[i].first == s) {
      (all[i].second ? gp : gn) += 1.0;
      ++i;
    }
    wins += gn * tp + 0.5 * gn * gp;
    tp += gp;
    fp += gn;
    report.curve.push_back({fp / nn, tp / np, s});
  }
  report.auc = wins / (np * nn);
  return report;
}

double localization_accuracy(std::span<const QueryCase> cases,
                             std::span<const std::optional<Box>> predictions,
                             double iou_threshold) {
  if (cases.size() != predictions.size()) {
    throw DimensionError("localization_accuracy: cases and predictions differ in length");
  }
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (cases[i].is_counterfactual) continue;
    if (!cases[i].truth) {
      throw DataError("localization_accuracy: case " + std::to_string(i) +
                      " has no ground-truth box");
    }
    ++total;
    if (predictions[i] && iou(*predictions[i], *cases[i].truth) >= iou_threshold) ++correct;
  }
  if (total == 0) throw DataError("localization_accuracy: no scored cases");
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void check_subset(const ImageAnnotation& a, std::size_t index,
                  const CounterfactualCorpus& corpus) {
  for (const auto& t : a.attributes) {
    if (!contains(corpus.attributes, t)) {
      throw DataError("image " + std::to_string(index) + ": attribute '" + t +
                      "' is not in the corpus");
    }
  }
  for (const auto& t : a.colors) {
    if (!contains(corpus.colors, t)) {
      throw DataError("image " + std::to_string(index) + ": color '" + t +
                      "' is not in the corpus");
    }
  }
}

std::string caption_for(const ImageAnnotation& a, const std::string& word, bool is_color,
                        CaptionTemplate caption) {
  if (caption == CaptionTemplate::kAttributeEntityColor) {
    if (is_color && !a.attributes.empty()) {
      return a.attributes.front() + " " + a.entity + " in " + word;
    }
    if (!is_color && !a.colors.empty()) {
      return word + " " + a.entity + " in " + a.colors.front();
    }
  }
  return "the " + word + " " + a.entity;
}

std::vector<QueryCase> generate(std::span<const ImageAnnotation> annotations,
                                const CounterfactualCorpus& corpus,
                                CaptionTemplate caption, bool counterfactual) {
  std::vector<QueryCase> out;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    check_subset(a, i, corpus);
    auto emit = [&](const std::string& word, bool is_color) {
      const bool present = contains(is_color ? a.colors : a.attributes, word);
      if (present == counterfactual) return;
      QueryCase c;
      c.features_path = a.features_path;
      c.query = caption_for(a, word, is_color, caption);
      c.is_counterfactual = counterfactual;
      if (!counterfactual) c.truth = a.truth;
      c.image = i;
      c.token = word;
      out.push_back(std::move(c));
    };
    for (const auto& w : corpus.attributes) emit(w, false);
    for (const auto& w : corpus.colors) emit(w, true);
  }
  return out;
}

}  // namespace

std::vector<QueryCase> generate_counterfactual_queries(
    std::span<const ImageAnnotation> annotations, const CounterfactualCorpus& corpus,
    CaptionTemplate caption) {
  return generate(annotations, corpus, caption, true);
}

std::vector<QueryCase> generate_normal_queries(
    std::span<const ImageAnnotation> annotations, const CounterfactualCorpus& corpus,
    CaptionTemplate caption) {
  return generate(annotations, corpus, caption, false);
}

std::string describe(const ImageAnnotation& a) {
  std::string text;
  if (!a.attributes.empty()) {
    text = a.attributes.front() + " " + a.entity;
  } else if (!a.colors.empty()) {
    return "the " + a.colors.front() + " " + a.entity;
  } else {
    return "the " + a.entity;
  }
  if (!a.colors.empty()) text += " in " + a.colors.front();
  return text;
}

std::vector<Segment> temporal_ground(std::span<const double> scores, double threshold,
                                     std::size_t min_len) {
  if (min_len == 0) throw ConfigError("temporal_ground: min_len must be >= 1");
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < scores.size()) {
    if (!(scores[i] >= threshold)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < scores.size() && scores[j + 1] >= threshold) ++j;
    if (j - i + 1 >= min_len) out.push_back({i, j});
    i = j + 1;
  }
  return out;
}

Alignment align_captions(const std::vector<std::vector<double>>& scores, AlignMode mode) {
  if (scores.empty() || scores.front().empty()) {
    throw DimensionError("align_captions: empty score matrix");
  }
  const std::size_t frames = scores.front().size();
  for (const auto& row : scores) {
    if (row.size() != frames) throw DimensionError("align_captions: ragged score matrix");
  }
  auto best_frame = [&](std::size_t c, const std::vector<bool>* taken) {
    std::optional<std::size_t> best;
    for (std::size_t f = 0; f < frames; ++f) {
      if (taken && (*taken)[f]) continue;
      if (!best || scores[c][f] > scores[c][*best]) best = f;
    }
    return best;
  };
  Alignment out;
  out.frame.resize(scores.size());
  if (mode == AlignMode::kArgmax) {
    for (std::size_t c = 0; c < scores.size(); ++c) out.frame[c] = best_frame(c, nullptr);
    return out;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a][*best_frame(a, nullptr)] > scores[b][*best_frame(b, nullptr)];
  });
  std::vector<bool> taken(frames, false);
  for (std::size_t c : order) {
    auto f = best_frame(c, &taken);
    if (!f) {
      out.unassigned.push_back(c);
      continue;
    }
    taken[*f] = true;
    out.frame[c] = f;
  }
  std::sort(out.unassigned.begin(), out.unassigned.end());
  return out;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["auc"] = report.roc.auc;
  auto roc = nlohmann::ordered_json::array();
  for (const auto& p : report.roc.curve) {
    roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"thr", p.threshold}});
  }
  j["roc"] = std::move(roc);
  j["accuracy"] = report.accuracy ? nlohmann::ordered_json(*report.accuracy)
                                  : nlohmann::ordered_json(nullptr);
  j["n_cases"] = report.n_cases;
  return j.dump(2) + "\n";
}

std::string roc_to_csv(const RocReport& roc) {
  std::ostringstream out;
  out.precision(17);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : roc.curve) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
  return out.str();
}

}  // namespace grounder
