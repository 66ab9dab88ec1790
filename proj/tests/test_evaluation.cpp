#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "grounder/errors.hpp"
#include "grounder/evaluation.hpp"
#include "test_util.hpp"

namespace grounder {
namespace {

double pairwise_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

std::vector<double> coarse_scores(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& s : v) s = std::round(rng.uniform() * 20.0) / 20.0;
  return v;
}

TEST(RegionScore, Examples) {
  EXPECT_EQ(region_score(AttentionMap(4, 4, 0.7f), std::nullopt), 0.0);
  AttentionMap g(4, 4, 0.1f);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) g.set(y, x, 0.9);
  }
  EXPECT_NEAR(region_score(g, Box{0, 0, 2, 2}), 0.9, 1e-6);
}

TEST(RegionScore, MatchesTopDecileOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> v(100);
    for (auto& e : v) e = static_cast<float>(rng.uniform());
    const AttentionMap g(10, 10, v);
    const Box b{rng.uniform_int(0, 4), rng.uniform_int(0, 4), rng.uniform_int(1, 6),
                rng.uniform_int(1, 6)};
    std::vector<double> inside;
    for (int y = b.y; y < b.y + b.h; ++y) {
      for (int x = b.x; x < b.x + b.w; ++x) inside.push_back(g.at(y, x));
    }
    std::sort(inside.rbegin(), inside.rend());
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                std::ceil(0.1 * static_cast<double>(inside.size()))));
    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean += inside[i];
    mean /= static_cast<double>(k);
    EXPECT_NEAR(region_score(g, b), mean, 1e-9) << b.w * b.h;
  }
}

TEST(MaskIou, Cases) {
  AttentionMap g(4, 4, 0.0f);
  g.set(1, 1, 0.9);
  g.set(1, 2, 0.9);
  EXPECT_EQ(mask_iou(g, 0.5, Box{1, 1, 2, 1}), 1.0);
  EXPECT_NEAR(mask_iou(g, 0.5, Box{1, 1, 2, 2}), 0.5, 1e-12);
  EXPECT_EQ(mask_iou(AttentionMap(4, 4, 0.0f), 0.5, Box{0, 0, 1, 1}), 0.0);
}

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.2, 0.1}).auc, 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.8, 0.3}, std::vector<double>{0.5, 0.1}).auc, 0.75);
  const std::vector<double> same{0.4, 0.6, 0.6};
  EXPECT_EQ(roc_auc(same, same).auc, 0.5);
  EXPECT_THROW(roc_auc(std::vector<double>{}, same), ConfigError);
  EXPECT_THROW(roc_auc(same, std::vector<double>{}), ConfigError);
}

TEST(RocAuc, CurveShape) {
  const auto r = roc_auc(std::vector<double>{0.8, 0.3, 0.3}, std::vector<double>{0.5, 0.3});
  ASSERT_GE(r.curve.size(), 2u);
  EXPECT_EQ(r.curve.front().fpr, 0.0);
  EXPECT_EQ(r.curve.front().tpr, 0.0);
  EXPECT_GT(r.curve.front().threshold, 0.8);
  EXPECT_EQ(r.curve.back().fpr, 1.0);
  EXPECT_EQ(r.curve.back().tpr, 1.0);
  // One point per distinct score after the start.
  EXPECT_EQ(r.curve.size(), 4u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) {
    EXPECT_GE(r.curve[i].fpr, r.curve[i - 1].fpr);
    EXPECT_GE(r.curve[i].tpr, r.curve[i - 1].tpr);
    EXPECT_LT(r.curve[i].threshold, r.curve[i - 1].threshold);
  }
}

TEST(RocAuc, MatchesPairwiseOracleAndProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto pos = coarse_scores(rng, static_cast<std::size_t>(rng.uniform_int(1, 30)));
    const auto neg = coarse_scores(rng, static_cast<std::size_t>(rng.uniform_int(1, 30)));
    const auto r = roc_auc(pos, neg);
    EXPECT_NEAR(r.auc, pairwise_auc(pos, neg), 1e-12);
    EXPECT_NEAR(roc_auc(neg, pos).auc, 1.0 - r.auc, 1e-12);
    EXPECT_GE(r.auc, 0.0);
    EXPECT_LE(r.auc, 1.0);
    // Trapezoid area under the curve agrees with the pairwise statistic.
    double area = 0.0;
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
      area += (r.curve[i].fpr - r.curve[i - 1].fpr) * (r.curve[i].tpr + r.curve[i - 1].tpr) / 2;
    }
    EXPECT_NEAR(area, r.auc, 1e-12);
    std::vector<double> tp, tn;
    for (double s : pos) tp.push_back(std::exp(3.0 * s) - 7.0);
    for (double s : neg) tn.push_back(std::exp(3.0 * s) - 7.0);
    EXPECT_NEAR(roc_auc(tp, tn).auc, r.auc, 1e-12);
  }
}

QueryCase scored_case(Box truth) {
  QueryCase c;
  c.query = "the dog";
  c.truth = truth;
  return c;
}

TEST(LocalizationAccuracy, FourCases) {
  // Predictions built so that their IoUs with the truth are 0.6, 0.4, 1.0
  // and 0.0.
  const Box truth{0, 0, 10, 10};
  std::vector<QueryCase> cases(4, scored_case(truth));
  const Box p06{0, 0, 10, 6}, p04{0, 0, 10, 4}, p00{20, 20, 2, 2};
  ASSERT_NEAR(iou(p06, truth), 0.6, 1e-12);
  ASSERT_NEAR(iou(p04, truth), 0.4, 1e-12);
  std::vector<std::optional<Box>> preds{p06, p04, truth, p00};
  EXPECT_EQ(localization_accuracy(cases, preds), 0.5);
  preds[0] = std::nullopt;
  EXPECT_EQ(localization_accuracy(cases, preds), 0.25);
}

TEST(LocalizationAccuracy, SkipsCounterfactualAndChecksInputs) {
  std::vector<QueryCase> cases{scored_case({0, 0, 2, 2})};
  QueryCase cf;
  cf.is_counterfactual = true;
  cases.push_back(cf);
  std::vector<std::optional<Box>> preds{Box{0, 0, 2, 2}, Box{5, 5, 1, 1}};
  EXPECT_EQ(localization_accuracy(cases, preds), 1.0);
  preds.pop_back();
  EXPECT_THROW(localization_accuracy(cases, preds), DimensionError);
  QueryCase no_truth;
  std::vector<QueryCase> bad{no_truth};
  std::vector<std::optional<Box>> one{std::nullopt};
  EXPECT_THROW(localization_accuracy(bad, one), DataError);
}

ImageAnnotation annotation(std::string entity, std::vector<std::string> attrs,
                           std::vector<std::string> colors) {
  ImageAnnotation a;
  a.features_path = entity + ".fmap";
  a.entity = std::move(entity);
  a.attributes = std::move(attrs);
  a.colors = std::move(colors);
  a.truth = Box{0, 0, 2, 2};
  return a;
}

TEST(CounterfactualQueries, Examples) {
  const CounterfactualCorpus corpus{{"man", "woman"}, {}};
  const std::vector<ImageAnnotation> one{annotation("person", {"man"}, {})};
  const auto cf = generate_counterfactual_queries(one, corpus);
  ASSERT_EQ(cf.size(), 1u);
  EXPECT_EQ(cf[0].query, "the woman person");
  EXPECT_TRUE(cf[0].is_counterfactual);
  EXPECT_FALSE(cf[0].truth);
  EXPECT_EQ(cf[0].token, "woman");
  const std::vector<ImageAnnotation> full{annotation("person", {"man", "woman"}, {})};
  EXPECT_TRUE(generate_counterfactual_queries(full, corpus).empty());
  const std::vector<ImageAnnotation> outside{annotation("person", {"child"}, {})};
  EXPECT_THROW(generate_counterfactual_queries(outside, corpus), DataError);
}

TEST(CounterfactualQueries, CountOrderAndAbsence) {
  const CounterfactualCorpus corpus{{"a1", "a2", "a3"}, {"c1", "c2"}};
  const std::vector<ImageAnnotation> images{annotation("dog", {}, {"c1"}),
                                            annotation("person", {"a1", "a3"}, {"c2"}),
                                            annotation("person", {"a2"}, {})};
  const auto cf = generate_counterfactual_queries(images, corpus);
  EXPECT_EQ(cf.size(), (5u - 1) + (5u - 3) + (5u - 1));
  for (std::size_t i = 1; i < cf.size(); ++i) EXPECT_LE(cf[i - 1].image, cf[i].image);
  for (const auto& c : cf) {
    const auto& a = images[c.image];
    EXPECT_EQ(std::count(a.attributes.begin(), a.attributes.end(), c.token), 0);
    EXPECT_EQ(std::count(a.colors.begin(), a.colors.end(), c.token), 0);
  }
  EXPECT_EQ(cf[0].token, "a1");
  EXPECT_EQ(cf[3].token, "c2");
  const auto normal = generate_normal_queries(images, corpus);
  EXPECT_EQ(normal.size(), 1u + 3u + 1u);
  for (const auto& c : normal) {
    EXPECT_FALSE(c.is_counterfactual);
    EXPECT_TRUE(c.truth);
  }
}

TEST(CounterfactualQueries, AttributeEntityColorTemplate) {
  const CounterfactualCorpus corpus{{"man", "woman"}, {"red", "blue"}};
  const std::vector<ImageAnnotation> images{annotation("person", {"man"}, {"red"}),
                                            annotation("dog", {}, {"blue"})};
  const auto cf =
      generate_counterfactual_queries(images, corpus, CaptionTemplate::kAttributeEntityColor);
  ASSERT_EQ(cf.size(), 5u);
  EXPECT_EQ(cf[0].query, "woman person in red");
  EXPECT_EQ(cf[1].query, "man person in blue");
  // The dog keeps its color when an attribute is substituted and has no
  // attribute to keep when a color is, so that one falls back.
  EXPECT_EQ(cf[2].query, "man dog in blue");
  EXPECT_EQ(cf[3].query, "woman dog in blue");
  EXPECT_EQ(cf[4].query, "the red dog");
}

TEST(Describe, DropsMissingParts) {
  EXPECT_EQ(describe(annotation("person", {"man"}, {"red"})), "man person in red");
  EXPECT_EQ(describe(annotation("dog", {}, {"blue"})), "the blue dog");
  EXPECT_EQ(describe(annotation("dog", {}, {})), "the dog");
}

TEST(TemporalGround, Examples) {
  EXPECT_TRUE(temporal_ground(std::vector<double>{0.1, 0.2}, 0.5, 1).empty());
  EXPECT_EQ(temporal_ground(std::vector<double>{0.9, 0.9, 0.1, 0.8}, 0.5, 1),
            (std::vector<Segment>{{0, 1}, {3, 3}}));
  EXPECT_EQ(temporal_ground(std::vector<double>{0.9, 0.9, 0.1, 0.8}, 0.5, 2),
            (std::vector<Segment>{{0, 1}}));
  EXPECT_THROW(temporal_ground(std::vector<double>{0.9}, 0.5, 0), ConfigError);
  EXPECT_TRUE(temporal_ground(std::vector<double>{}, 0.5, 1).empty());
}

TEST(TemporalGround, MatchesLinearScan) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(rng.uniform_int(1, 40)));
    for (auto& x : s) x = rng.uniform();
    const double th = rng.uniform(0.2, 0.8);
    const std::size_t min_len = static_cast<std::size_t>(rng.uniform_int(1, 4));
    std::vector<Segment> oracle;
    std::size_t run = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i < s.size() && s[i] >= th) {
        ++run;
        continue;
      }
      if (run >= min_len) oracle.push_back({i - run, i - 1});
      run = 0;
    }
    const auto got = temporal_ground(s, th, min_len);
    EXPECT_EQ(got, oracle);
    for (std::size_t i = 1; i < got.size(); ++i) EXPECT_GT(got[i].start, got[i - 1].end + 1);
  }
}

TEST(AlignCaptions, Examples) {
  const std::vector<std::vector<double>> diag{{0.9, 0.1, 0.2}, {0.1, 0.8, 0.3}, {0.2, 0.1, 0.7}};
  for (auto mode : {AlignMode::kArgmax, AlignMode::kGreedyUnique}) {
    const auto a = align_captions(diag, mode);
    ASSERT_EQ(a.frame.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.frame[i], std::optional<std::size_t>(i));
    EXPECT_TRUE(a.unassigned.empty());
  }
  const std::vector<std::vector<double>> shared{{0.6, 0.5, 0.1}, {0.9, 0.2, 0.4}};
  const auto g = align_captions(shared, AlignMode::kGreedyUnique);
  EXPECT_EQ(g.frame[1], std::optional<std::size_t>(0));
  EXPECT_EQ(g.frame[0], std::optional<std::size_t>(1));
  const auto am = align_captions(shared, AlignMode::kArgmax);
  EXPECT_EQ(am.frame[0], std::optional<std::size_t>(0));
  EXPECT_EQ(am.frame[1], std::optional<std::size_t>(0));
  const std::vector<std::vector<double>> row{{0.1, 0.4, 0.4, 0.2}};
  EXPECT_EQ(align_captions(row, AlignMode::kArgmax).frame[0], std::optional<std::size_t>(1));
}

TEST(AlignCaptions, MoreCaptionsThanFramesAndErrors) {
  const std::vector<std::vector<double>> m{{0.5}, {0.9}, {0.1}};
  const auto a = align_captions(m, AlignMode::kGreedyUnique);
  EXPECT_EQ(a.frame[1], std::optional<std::size_t>(0));
  EXPECT_FALSE(a.frame[0]);
  EXPECT_FALSE(a.frame[2]);
  EXPECT_EQ(a.unassigned, (std::vector<std::size_t>{0, 2}));
  EXPECT_THROW(align_captions({}, AlignMode::kArgmax), DimensionError);
  EXPECT_THROW(align_captions({{0.1, 0.2}, {0.3}}, AlignMode::kArgmax), DimensionError);
}

TEST(Report, JsonAndCsv) {
  EvalReport rep;
  rep.roc = roc_auc(std::vector<double>{0.8, 0.3}, std::vector<double>{0.5, 0.1});
  rep.accuracy = 0.5;
  rep.n_cases = 4;
  const auto j = nlohmann::json::parse(report_to_json(rep));
  EXPECT_EQ(j["auc"].get<double>(), 0.75);
  EXPECT_EQ(j["accuracy"].get<double>(), 0.5);
  EXPECT_EQ(j["n_cases"].get<int>(), 4);
  ASSERT_EQ(j["roc"].size(), rep.roc.curve.size());
  EXPECT_TRUE(j["roc"][0].contains("fpr"));
  EXPECT_TRUE(j["roc"][0].contains("tpr"));
  EXPECT_TRUE(j["roc"][0].contains("thr"));
  rep.accuracy.reset();
  EXPECT_TRUE(nlohmann::json::parse(report_to_json(rep))["accuracy"].is_null());
  const auto csv = roc_to_csv(rep.roc);
  EXPECT_EQ(csv.rfind("fpr,tpr,threshold\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')),
            rep.roc.curve.size() + 1);
}

}  // namespace
}  // namespace grounder
