#include "grounder/query_parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "grounder/errors.hpp"

namespace grounder {

namespace {

constexpr std::array<std::string_view, 56> kStopWords = {
    "a",     "an",    "the",   "in",    "on",    "at",   "of",    "with",
    "and",   "or",    "to",    "for",   "from",  "by",   "is",    "are",
    "was",   "were",  "be",    "been",  "being", "this", "that",  "these",
    "those", "who",   "whom",  "which", "what",  "where", "there", "here",
    "it",    "its",   "his",   "her",   "their", "some", "any",   "very",
    "into",  "onto",  "as",    "than",  "then",  "while", "has",  "have",
    "had",   "do",    "does",  "did",   "not",   "also", "just",  "s"};

double entity_similarity(const Lexicon& lexicon, const EmbeddingTable& table,
                         std::string_view token, std::string* best_class) {
  const WordVector* v = table.find(token);
  if (v == nullptr) return -2.0;
  double best = -2.0;
  for (const auto& cls : lexicon.entity_classes) {
    auto consider = [&](const std::string& syn) {
      const WordVector* s = table.find(syn);
      if (s == nullptr) return;
      const double sim = cosine_similarity(*v, *s);
      if (sim > best) {
        best = sim;
        *best_class = cls.name;
      }
    };
    consider(cls.name);
    for (const auto& syn : cls.synonyms) consider(syn);
  }
  return best;
}

std::vector<std::string> json_string_list(const nlohmann::ordered_json& j,
                                          const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw FormatError(std::string("lexicon: missing array '") + key + "'");
  }
  std::vector<std::string> out;
  for (const auto& item : j.at(key)) {
    if (!item.is_string()) {
      throw FormatError(std::string("lexicon: non-string in '") + key + "'");
    }
    out.push_back(normalize_token(item.get<std::string>()));
  }
  return out;
}

const char* role_name(TokenRole role) {
  switch (role) {
    case TokenRole::kEntity: return "entity";
    case TokenRole::kAttribute: return "attribute";
    case TokenRole::kColor: return "color";
  }
  return "?";
}

}  // namespace

bool is_stop_word(std::string_view token) {
  return std::find(kStopWords.begin(), kStopWords.end(), token) !=
         kStopWords.end();
}

std::vector<std::string> Lexicon::entity_tokens() const {
  std::vector<std::string> out;
  for (const auto& cls : entity_classes) {
    out.push_back(cls.name);
    for (const auto& s : cls.synonyms) {
      if (s != cls.name) out.push_back(s);
    }
  }
  return out;
}

std::optional<std::string> Lexicon::entity_for(std::string_view token) const {
  for (const auto& cls : entity_classes) {
    if (cls.name == token) return cls.name;
    if (std::find(cls.synonyms.begin(), cls.synonyms.end(), token) !=
        cls.synonyms.end()) {
      return cls.name;
    }
  }
  return std::nullopt;
}

void Lexicon::validate(const EmbeddingTable& table) const {
  std::set<std::string> seen;
  auto claim = [&](const std::string& tok, const char* what) {
    if (!seen.insert(tok).second) {
      throw ConflictError("lexicon token '" + tok + "' appears in more than one " +
                          "set (" + what + ")");
    }
    if (!table.contains(tok)) {
      throw NotFoundError("lexicon token '" + tok + "' has no embedding");
    }
  };
  for (const auto& tok : entity_tokens()) claim(tok, "entity");
  for (const auto& tok : attribute_corpus) claim(tok, "attribute");
  for (const auto& tok : color_names) claim(tok, "color");
}

Lexicon parse_lexicon_json(std::string_view json_text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("lexicon: ") + e.what());
  }
  if (!j.is_object() || !j.contains("entity_classes") ||
      !j.at("entity_classes").is_object()) {
    throw FormatError("lexicon: missing object 'entity_classes'");
  }
  Lexicon lex;
  for (const auto& [name, syns] : j.at("entity_classes").items()) {
    EntityClass cls;
    cls.name = normalize_token(name);
    if (!syns.is_array()) throw FormatError("lexicon: synonyms must be an array");
    for (const auto& s : syns) {
      if (!s.is_string()) throw FormatError("lexicon: non-string synonym");
      auto tok = normalize_token(s.get<std::string>());
      if (tok != cls.name) cls.synonyms.push_back(std::move(tok));
    }
    lex.entity_classes.push_back(std::move(cls));
  }
  lex.attribute_corpus = json_string_list(j, "attribute_corpus");
  lex.color_names = json_string_list(j, "color_names");
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open lexicon " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_lexicon_json(buf.str());
}

std::string lexicon_to_json(const Lexicon& lexicon) {
  nlohmann::ordered_json j;
  j["entity_classes"] = nlohmann::ordered_json::object();
  for (const auto& cls : lexicon.entity_classes) {
    auto syns = cls.synonyms;
    syns.insert(syns.begin(), cls.name);
    j["entity_classes"][cls.name] = syns;
  }
  j["attribute_corpus"] = lexicon.attribute_corpus;
  j["color_names"] = lexicon.color_names;
  return j.dump(2);
}

std::vector<std::string> tokenize_query(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const auto uch = static_cast<unsigned char>(ch);
    if (ch == '\'') continue;
    if (uch < 0x80 && (std::ispunct(uch) || std::isspace(uch))) {
      cleaned.push_back(' ');
    } else {
      cleaned.push_back(ch);
    }
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string word;
  while (in >> word) {
    auto tok = normalize_token(word);
    if (!tok.empty() && !is_stop_word(tok)) tokens.push_back(std::move(tok));
  }
  return tokens;
}

std::optional<Neighbor> resolve_token(std::string_view token,
                                      std::span<const std::string> candidates,
                                      const EmbeddingTable& table,
                                      double sim_threshold) {
  if (candidates.empty()) throw ConfigError("resolve_token: no candidates");
  const WordVector* v = table.find(token);
  if (v == nullptr) return std::nullopt;
  std::vector<std::string> present;
  for (const auto& c : candidates) {
    if (table.contains(c)) present.push_back(c);
  }
  if (present.empty()) return std::nullopt;
  auto best = nearest(table, *v, present, 1);
  if (best.front().similarity >= sim_threshold) return best.front();
  return std::nullopt;
}

ParsedQuery parse_query(std::string_view text, const Lexicon& lexicon,
                        const EmbeddingTable& table, double sim_threshold) {
  if (!(sim_threshold > 0.0 && sim_threshold <= 1.0)) {
    throw ConfigError("sim_threshold must be in (0, 1]");
  }
  const bool blank = std::all_of(text.begin(), text.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c));
  });
  if (blank) throw EmptyQueryError("empty query");

  const auto tokens = tokenize_query(text);
  std::vector<std::string> all_candidates = lexicon.entity_tokens();
  all_candidates.insert(all_candidates.end(), lexicon.attribute_corpus.begin(),
                        lexicon.attribute_corpus.end());
  all_candidates.insert(all_candidates.end(), lexicon.color_names.begin(),
                        lexicon.color_names.end());

  ParsedQuery out;
  struct EntityHit {
    std::size_t position;
    std::string token;
    std::string cls;
    double similarity;
  };
  std::vector<EntityHit> entity_hits;

  auto contains = [](const std::vector<std::string>& v, const std::string& t) {
    return std::find(v.begin(), v.end(), t) != v.end();
  };

  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    const auto& tok = tokens[pos];
    if (auto cls = lexicon.entity_for(tok)) {
      entity_hits.push_back({pos, tok, *cls, 1.0});
      out.resolutions.push_back({tok, tok, TokenRole::kEntity, 1.0});
      continue;
    }
    if (contains(lexicon.attribute_corpus, tok)) {
      out.attributes.push_back(tok);
      out.resolutions.push_back({tok, tok, TokenRole::kAttribute, 1.0});
      continue;
    }
    if (contains(lexicon.color_names, tok)) {
      out.colors.push_back(tok);
      out.resolutions.push_back({tok, tok, TokenRole::kColor, 1.0});
      continue;
    }
    auto hit = all_candidates.empty()
                   ? std::nullopt
                   : resolve_token(tok, all_candidates, table, sim_threshold);
    if (!hit) {
      out.residual.push_back(tok);
      continue;
    }
    if (auto cls = lexicon.entity_for(hit->token)) {
      entity_hits.push_back({pos, tok, *cls, hit->similarity});
      out.resolutions.push_back({tok, hit->token, TokenRole::kEntity, hit->similarity});
    } else if (contains(lexicon.attribute_corpus, hit->token)) {
      out.attributes.push_back(tok);
      out.resolutions.push_back({tok, hit->token, TokenRole::kAttribute, hit->similarity});
    } else {
      out.colors.push_back(tok);
      out.resolutions.push_back({tok, hit->token, TokenRole::kColor, hit->similarity});
    }
  }

  if (!entity_hits.empty()) {
    std::size_t winner = 0;
    for (std::size_t i = 1; i < entity_hits.size(); ++i) {
      if (entity_hits[i].similarity > entity_hits[winner].similarity) winner = i;
    }
    out.entity = entity_hits[winner].cls;
    for (std::size_t i = 0; i < entity_hits.size(); ++i) {
      if (i == winner) continue;
      out.residual.push_back(entity_hits[i].token);
      out.extra_entities.push_back(entity_hits[i].token);
    }
  } else if (!lexicon.entity_classes.empty()) {
    double best = -2.0;
    std::string best_class;
    for (const auto& attr : out.attributes) {
      std::string cls;
      const double sim = entity_similarity(lexicon, table, attr, &cls);
      if (sim > best) {
        best = sim;
        best_class = cls;
      }
    }
    if (best >= sim_threshold) {
      out.entity = best_class;
      out.entity_inferred = true;
    }
  }
  return out;
}

std::string parsed_query_to_json(const ParsedQuery& q) {
  nlohmann::ordered_json j;
  j["entity"] = q.entity ? nlohmann::ordered_json(*q.entity) : nlohmann::ordered_json(nullptr);
  j["attributes"] = q.attributes;
  j["colors"] = q.colors;
  j["residual"] = q.residual;
  j["extra_entities"] = q.extra_entities;
  j["entity_inferred"] = q.entity_inferred;
  auto res = nlohmann::ordered_json::array();
  for (const auto& r : q.resolutions) {
    res.push_back({{"token", r.token},
                   {"matched", r.matched},
                   {"role", role_name(r.role)},
                   {"similarity", r.similarity}});
  }
  j["resolutions"] = res;
  return j.dump();
}

}  // namespace grounder
