#include "grounder/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include <json.hpp>

#include "grounder/errors.hpp"

namespace grounder {

namespace {

bool score_order(const Box& a, const Box& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.geometry() < b.geometry();
}

// Summed-area table with a zero first row and column.
class IntegralImage {
 public:
  explicit IntegralImage(const AttentionMap& g)
      : width_(g.width() + 1), table_((g.height() + 1) * (g.width() + 1), 0.0) {
    for (int y = 0; y < g.height(); ++y) {
      double row = 0.0;
      for (int x = 0; x < g.width(); ++x) {
        row += g.at(y, x);
        table_[(y + 1) * width_ + x + 1] = table_[y * width_ + x + 1] + row;
      }
    }
  }
  double sum(int x, int y, int w, int h) const {
    return table_[(y + h) * width_ + x + w] - table_[y * width_ + x + w] -
           table_[(y + h) * width_ + x] + table_[y * width_ + x];
  }

 private:
  int width_;
  std::vector<double> table_;
};

std::vector<Box> component_boxes(const AttentionMap& g, double threshold) {
  const int H = g.height(), W = g.width();
  std::vector<char> visited(static_cast<std::size_t>(H) * W, 0);
  std::vector<Box> out;
  for (int y0 = 0; y0 < H; ++y0) {
    for (int x0 = 0; x0 < W; ++x0) {
      const std::size_t start = static_cast<std::size_t>(y0) * W + x0;
      if (visited[start] || g[start] < threshold) continue;
      int min_x = x0, max_x = x0, min_y = y0, max_y = y0;
      std::queue<std::pair<int, int>> q;
      q.push({x0, y0});
      visited[start] = 1;
      while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop();
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
        const int dx[] = {1, -1, 0, 0};
        const int dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = x + dx[k], ny = y + dy[k];
          if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
          const std::size_t idx = static_cast<std::size_t>(ny) * W + nx;
          if (visited[idx] || g[idx] < threshold) continue;
          visited[idx] = 1;
          q.push({nx, ny});
        }
      }
      out.push_back({min_x, min_y, max_x - min_x + 1, max_y - min_y + 1, 0.0});
    }
  }
  return out;
}

}  // namespace

void ProposalConfig::validate() const {
  if (!(heat_threshold > 0.0 && heat_threshold < 1.0)) {
    throw ConfigError("heat_threshold must be in (0, 1)");
  }
  if (scales.empty()) throw ConfigError("at least one window scale is required");
  for (const auto& [fw, fh] : scales) {
    if (!(fw > 0.0 && fw <= 1.0 && fh > 0.0 && fh <= 1.0)) {
      throw ConfigError("window scales must be fractions in (0, 1]");
    }
  }
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ConfigError("nms_iou must be in (0, 1)");
  if (!(area_penalty >= 0.0)) throw ConfigError("area_penalty must be >= 0");
  if (windows_per_scale < 1) throw ConfigError("windows_per_scale must be >= 1");
}

double iou(const Box& a, const Box& b) {
  const int ix = std::max(0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const int iy = std::max(0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double box_mass(const AttentionMap& g, const Box& b) {
  double s = 0.0;
  for (int y = b.y; y < b.y + b.h; ++y) {
    for (int x = b.x; x < b.x + b.w; ++x) s += g.at(y, x);
  }
  return s;
}

double coverage_score(const Box& b, const AttentionMap& g, double kappa) {
  const double total = g.sum();
  if (total <= 0.0) return 0.0;
  const double map_area = static_cast<double>(g.height()) * g.width();
  return box_mass(g, b) / total - kappa * static_cast<double>(b.area()) / map_area;
}

std::vector<Box> heatmap_to_candidates(const AttentionMap& g,
                                       const ProposalConfig& cfg) {
  cfg.validate();
  if (g.empty()) throw DimensionError("heatmap_to_candidates: empty map");
  std::vector<Box> out = component_boxes(g, cfg.heat_threshold);

  const IntegralImage integral(g);
  for (const auto& [fw, fh] : cfg.scales) {
    const int w = std::clamp(static_cast<int>(std::floor(fw * g.width())), 1, g.width());
    const int h = std::clamp(static_cast<int>(std::floor(fh * g.height())), 1, g.height());
    std::vector<Box> windows;
    for (int y = 0; y + h <= g.height(); y += cfg.stride) {
      for (int x = 0; x + w <= g.width(); x += cfg.stride) {
        const double s = integral.sum(x, y, w, h);
        if (s > 0.0) windows.push_back({x, y, w, h, s});
      }
    }
    const auto keep = std::min<std::size_t>(windows.size(), cfg.windows_per_scale);
    std::partial_sort(windows.begin(), windows.begin() + keep, windows.end(), score_order);
    out.insert(out.end(), windows.begin(), windows.begin() + keep);
  }

  std::sort(out.begin(), out.end(),
            [](const Box& a, const Box& b) { return a.geometry() < b.geometry(); });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Box& a, const Box& b) { return a.same_geometry(b); }),
            out.end());
  for (auto& b : out) b.score = coverage_score(b, g, cfg.area_penalty);
  return out;
}

std::vector<Box> nms(std::vector<Box> boxes, double iou_threshold) {
  std::sort(boxes.begin(), boxes.end(), score_order);
  std::vector<Box> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(b, k) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

std::optional<Selection> select_box(std::span<const Box> boxes,
                                    const AttentionMap& g, double kappa) {
  if (boxes.empty() || g.sum() <= 0.0) return std::nullopt;
  std::optional<Selection> best;
  for (const auto& b : boxes) {
    const double s = coverage_score(b, g, kappa);
    bool better = !best;
    if (best) {
      if (s != best->coverage) {
        better = s > best->coverage;
      } else if (b.area() != best->box.area()) {
        better = b.area() < best->box.area();
      } else {
        better = b.geometry() < best->box.geometry();
      }
    }
    if (better) {
      Box chosen = b;
      chosen.score = s;
      best = Selection{chosen, s};
    }
  }
  return best;
}

std::string boxes_to_json(std::span<const Box> boxes) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& b : boxes) {
    arr.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}, {"score", b.score}});
  }
  return arr.dump();
}

std::vector<Box> boxes_from_json(const std::string& json_text) {
  std::vector<Box> out;
  try {
    const auto arr = nlohmann::json::parse(json_text);
    if (!arr.is_array()) throw FormatError("boxes JSON must be an array");
    for (const auto& j : arr) {
      out.push_back({j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
                     j.at("h").get<int>(), j.value("score", 0.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("boxes JSON: ") + e.what());
  }
  return out;
}

}  // namespace grounder
