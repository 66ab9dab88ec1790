#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "grounder/errors.hpp"
#include "grounder/fixture.hpp"
#include "grounder/query_parser.hpp"

namespace grounder {
namespace {

class ParserTest : public ::testing::Test {
 protected:
  EmbeddingTable table = fixture_embeddings();
  Lexicon lexicon = demo_lexicon();
};

TEST_F(ParserTest, OlderManInBlue) {
  const auto q = parse_query("older man in blue", lexicon, table);
  ASSERT_TRUE(q.entity);
  EXPECT_EQ(*q.entity, "person");
  EXPECT_EQ(q.attributes, (std::vector<std::string>{"older", "man"}));
  EXPECT_EQ(q.colors, std::vector<std::string>{"blue"});
  EXPECT_TRUE(q.residual.empty());
}

TEST_F(ParserTest, WomanInBlueShirt) {
  const auto q = parse_query("the woman in blue shirt", lexicon, table);
  ASSERT_TRUE(q.entity);
  EXPECT_EQ(*q.entity, "person");
  EXPECT_EQ(q.attributes, std::vector<std::string>{"woman"});
  EXPECT_EQ(q.colors, std::vector<std::string>{"blue"});
  EXPECT_EQ(q.residual, std::vector<std::string>{"shirt"});
}

TEST_F(ParserTest, EmptyQuery) {
  EXPECT_THROW(parse_query("", lexicon, table), EmptyQueryError);
  EXPECT_THROW(parse_query("   \t\n", lexicon, table), EmptyQueryError);
}

TEST_F(ParserTest, ThresholdRange) {
  EXPECT_THROW(parse_query("dog", lexicon, table, 0.0), ConfigError);
  EXPECT_THROW(parse_query("dog", lexicon, table, 1.5), ConfigError);
}

TEST_F(ParserTest, TokenizationLowercasesAndStripsPunctuation) {
  EXPECT_EQ(tokenize_query("The Dog, in RED!"), (std::vector<std::string>{"dog", "red"}));
  EXPECT_TRUE(is_stop_word("the"));
  EXPECT_FALSE(is_stop_word("dog"));
}

TEST_F(ParserTest, SynonymResolvesToClass) {
  const auto q = parse_query("a puppy", lexicon, table);
  ASSERT_TRUE(q.entity);
  EXPECT_EQ(*q.entity, "dog");
}

TEST_F(ParserTest, SimilarityResolvedColor) {
  const auto q = parse_query("dog in navy", lexicon, table);
  EXPECT_EQ(q.colors, std::vector<std::string>{"navy"});
  ASSERT_FALSE(q.resolutions.empty());
  EXPECT_EQ(q.resolutions.back().matched, "blue");
}

TEST_F(ParserTest, TwoEntitiesKeepsBestAndFlagsOther) {
  const auto q = parse_query("a man and a dog", lexicon, table);
  ASSERT_TRUE(q.entity);
  // Both tokens match exactly; the earlier one wins the tie.
  EXPECT_EQ(*q.entity, "dog");
  EXPECT_TRUE(q.extra_entities.empty());
  const auto q2 = parse_query("dog and people", lexicon, table);
  EXPECT_EQ(*q2.entity, "dog");
  EXPECT_EQ(q2.extra_entities, std::vector<std::string>{"people"});
  EXPECT_NE(std::find(q2.residual.begin(), q2.residual.end(), "people"), q2.residual.end());
}

TEST_F(ParserTest, Deterministic) {
  const auto a = parse_query("older man in crimson shirt", lexicon, table);
  const auto b = parse_query("older man in crimson shirt", lexicon, table);
  EXPECT_EQ(parsed_query_to_json(a), parsed_query_to_json(b));
}

TEST_F(ParserTest, PartitionOfContentTokens) {
  for (const char* text : {"older man in blue", "the woman in blue shirt", "a red car",
                           "young girl with puppy in navy", "people in crimson and white"}) {
    const auto q = parse_query(text, lexicon, table);
    std::multiset<std::string> placed(q.attributes.begin(), q.attributes.end());
    placed.insert(q.colors.begin(), q.colors.end());
    placed.insert(q.residual.begin(), q.residual.end());
    std::size_t entity_sources = 0;
    for (const auto& r : q.resolutions) {
      if (r.role == TokenRole::kEntity &&
          std::find(q.extra_entities.begin(), q.extra_entities.end(), r.token) ==
              q.extra_entities.end()) {
        placed.insert(r.token);
        ++entity_sources;
      }
    }
    EXPECT_LE(entity_sources, 1u) << text;
    const auto tokens = tokenize_query(text);
    EXPECT_EQ(placed, std::multiset<std::string>(tokens.begin(), tokens.end())) << text;
  }
}

TEST_F(ParserTest, RaisingThresholdIsMonotone) {
  const char* text = "young girl with puppy in navy crimson shirt car";
  std::set<std::string> previous_resolved;
  bool first = true;
  for (double th : {0.3, 0.45, 0.55, 0.7, 0.85, 0.95, 1.0}) {
    const auto q = parse_query(text, lexicon, table, th);
    std::set<std::string> resolved;
    for (const auto& r : q.resolutions) resolved.insert(r.token);
    if (!first) {
      for (const auto& tok : resolved) {
        EXPECT_TRUE(previous_resolved.contains(tok)) << tok << " at threshold " << th;
      }
    }
    previous_resolved = resolved;
    first = false;
  }
}

TEST_F(ParserTest, EntityInferredFromAttributes) {
  const auto q = parse_query("older man", lexicon, table);
  ASSERT_TRUE(q.entity);
  EXPECT_EQ(*q.entity, "person");
  EXPECT_TRUE(q.entity_inferred);
  const auto q2 = parse_query("the person", lexicon, table);
  EXPECT_FALSE(q2.entity_inferred);
}

TEST_F(ParserTest, ColorOnlyQueryHasNoEntity) {
  const auto q = parse_query("red", lexicon, table);
  EXPECT_FALSE(q.entity);
  EXPECT_EQ(q.colors, std::vector<std::string>{"red"});
}

TEST(ResolveToken, CandidateResolvesToItself) {
  const auto t = fixture_embeddings();
  const std::vector<std::string> colors{"red", "green", "blue"};
  const auto hit = resolve_token("green", colors, t, 0.55);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->token, "green");
  EXPECT_NEAR(hit->similarity, 1.0, 1e-12);
}

TEST(ResolveToken, UnknownTokenIsNone) {
  const auto t = fixture_embeddings();
  const std::vector<std::string> colors{"red", "green", "blue"};
  EXPECT_FALSE(resolve_token("chartreuse", colors, t, 0.1));
}

TEST(ResolveToken, NavyMatchesBruteForceArgmax) {
  const auto t = fixture_embeddings();
  const std::vector<std::string> colors{"red", "green", "blue"};
  std::string best;
  double best_sim = -2.0;
  for (const auto& c : colors) {
    const double s = cosine_similarity(t.lookup("navy"), t.lookup(c));
    if (s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  const auto hit = resolve_token("navy", colors, t, 0.4);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->token, best);
  EXPECT_NEAR(hit->similarity, best_sim, 1e-12);
  EXPECT_FALSE(resolve_token("navy", colors, t, best_sim + 1e-6));
}

TEST(Lexicon, RejectsOverlapAndMissingTokens) {
  const auto t = fixture_embeddings();
  Lexicon overlap = fixture_lexicon();
  overlap.color_names.push_back("man");
  EXPECT_THROW(overlap.validate(t), ConflictError);
  Lexicon missing = fixture_lexicon();
  missing.attribute_corpus.push_back("tall");
  EXPECT_THROW(missing.validate(t), NotFoundError);
  EXPECT_NO_THROW(fixture_lexicon().validate(t));
  EXPECT_NO_THROW(demo_lexicon().validate(t));
}

TEST(Lexicon, JsonRoundTrip) {
  const Lexicon lex = demo_lexicon();
  const Lexicon back = parse_lexicon_json(lexicon_to_json(lex));
  EXPECT_EQ(lexicon_to_json(back), lexicon_to_json(lex));
  ASSERT_EQ(back.entity_classes.size(), 3u);
  EXPECT_EQ(back.entity_classes[0].name, "person");
  EXPECT_EQ(back.entity_for("puppy"), std::optional<std::string>("dog"));
}

TEST(Lexicon, MalformedJson) {
  EXPECT_THROW(parse_lexicon_json("{"), FormatError);
  EXPECT_THROW(parse_lexicon_json(R"({"entity_classes": [], "attribute_corpus": [],
                                     "color_names": []})"),
               FormatError);
}

}  // namespace
}  // namespace grounder
