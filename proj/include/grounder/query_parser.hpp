#ifndef GROUNDER_QUERY_PARSER_HPP_
#define GROUNDER_QUERY_PARSER_HPP_

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "grounder/embedding.hpp"

namespace grounder {

inline constexpr double kDefaultSimThreshold = 0.55;

struct EntityClass {
  std::string name;
  std::vector<std::string> synonyms;  // the class name is always implied
};

// Vocabulary for the three grounding levels. Token sets are pairwise
// disjoint; validate() additionally checks every token against a table.
struct Lexicon {
  std::vector<EntityClass> entity_classes;
  std::vector<std::string> attribute_corpus;
  std::vector<std::string> color_names;

  // Throws ConflictError on overlapping token sets, NotFoundError if a token
  // has no embedding.
  void validate(const EmbeddingTable& table) const;
  // Name of the class owning `token` (name or synonym), if any.
  std::optional<std::string> entity_for(std::string_view token) const;
  std::vector<std::string> entity_tokens() const;
};

// {"entity_classes": {name: [synonyms...]}, "attribute_corpus": [...],
//  "color_names": [...]}; class order follows the file.
Lexicon load_lexicon(const std::filesystem::path& path);
Lexicon parse_lexicon_json(std::string_view json_text);
std::string lexicon_to_json(const Lexicon& lexicon);

enum class TokenRole { kEntity, kAttribute, kColor };

struct Resolution {
  std::string token;    // as it appeared (normalized) in the query
  std::string matched;  // lexicon token it resolved to
  TokenRole role = TokenRole::kEntity;
  double similarity = 0.0;
};

struct ParsedQuery {
  std::optional<std::string> entity;
  std::vector<std::string> attributes;
  std::vector<std::string> colors;
  std::vector<std::string> residual;
  // Entity-resolving tokens that lost to a stronger one. They are also in
  // residual; callers may treat a non-empty list as a multi-entity warning.
  std::vector<std::string> extra_entities;
  // True when no token named an entity and the class was inferred from the
  // attribute words ("older man" -> person).
  bool entity_inferred = false;
  // One entry per token tied to the lexicon, in query order.
  std::vector<Resolution> resolutions;
};

// Lowercases, strips punctuation and drops stop words.
std::vector<std::string> tokenize_query(std::string_view text);
bool is_stop_word(std::string_view token);

// Best cosine match of `token` among `candidates` if it reaches
// `sim_threshold`. Tokens missing from the table resolve to nothing.
std::optional<Neighbor> resolve_token(std::string_view token,
                                      std::span<const std::string> candidates,
                                      const EmbeddingTable& table,
                                      double sim_threshold);

// Throws EmptyQueryError for blank text and ConfigError for a threshold
// outside (0, 1].
ParsedQuery parse_query(std::string_view text, const Lexicon& lexicon,
                        const EmbeddingTable& table,
                        double sim_threshold = kDefaultSimThreshold);

std::string parsed_query_to_json(const ParsedQuery& query);

}  // namespace grounder

#endif  // GROUNDER_QUERY_PARSER_HPP_
