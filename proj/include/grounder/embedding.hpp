#ifndef GROUNDER_EMBEDDING_HPP_
#define GROUNDER_EMBEDDING_HPP_

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grounder/numerics.hpp"

namespace grounder {

// NFC normalization followed by Unicode lowercasing.
std::string normalize_token(std::string_view token);

// Immutable-after-load store of word vectors keyed by normalized token.
class EmbeddingTable {
 public:
  // 0 until the first vector is inserted.
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }

  // Returns false (and keeps the existing vector) if the token is already
  // present. Throws DimensionError if the vector length disagrees with dim().
  bool insert(std::string_view token, WordVector vector);

  bool contains(std::string_view token) const { return find(token) != nullptr; }
  const WordVector* find(std::string_view token) const;
  // Throws NotFoundError for an unknown token.
  const WordVector& lookup(std::string_view token) const;

  // Tokens in insertion order.
  const std::vector<std::string>& tokens() const { return order_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, WordVector> entries_;
  std::vector<std::string> order_;
};

// GloVe plain text: one "token v1 v2 ... vd" line per word, single spaces,
// consistent d. Blank lines are skipped. Duplicate tokens keep the first
// occurrence and are reported on std::clog. Throws FormatError naming the
// 1-based line number on a dimensionality change or an unparseable float.
EmbeddingTable load_embeddings(std::istream& in);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

void write_embeddings(std::ostream& out, const EmbeddingTable& table);

// Cosine similarity; 0 if either vector is all zeros.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct Neighbor {
  std::string token;
  double similarity = 0.0;
  bool operator==(const Neighbor&) const = default;
};

// Top-k candidates by cosine similarity to `query`, descending; equal
// similarities are ordered by ascending token. Throws NotFoundError if a
// candidate is missing from the table, ConfigError if k == 0.
std::vector<Neighbor> nearest(const EmbeddingTable& table,
                              std::span<const double> query,
                              std::span<const std::string> candidates,
                              std::size_t k);

}  // namespace grounder

#endif  // GROUNDER_EMBEDDING_HPP_
