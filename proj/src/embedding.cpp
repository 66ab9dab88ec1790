#include "grounder/embedding.hpp"

#include <unicode/normalizer2.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "grounder/errors.hpp"

namespace grounder {

std::string normalize_token(std::string_view token) {
  bool ascii = true;
  for (unsigned char ch : token) {
    if (ch >= 0x80) {
      ascii = false;
      break;
    }
  }
  if (ascii) {
    std::string out(token);
    for (auto& ch : out) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    return out;
  }
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString text = icu::UnicodeString::fromUTF8(
      icu::StringPiece(token.data(), static_cast<int32_t>(token.size())));
  icu::UnicodeString normalized = nfc->normalize(text, status);
  if (U_FAILURE(status)) throw FormatError("token is not valid Unicode");
  normalized.toLower(icu::Locale::getRoot());
  normalized = nfc->normalize(normalized, status);
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

bool EmbeddingTable::insert(std::string_view token, WordVector vector) {
  std::string key = normalize_token(token);
  if (key.empty()) throw FormatError("empty embedding token");
  if (vector.empty()) throw DimensionError("empty word vector");
  if (dim_ == 0) {
    dim_ = vector.size();
  } else if (vector.size() != dim_) {
    std::ostringstream msg;
    msg << "word vector for '" << key << "' has " << vector.size()
        << " components, table dim is " << dim_;
    throw DimensionError(msg.str());
  }
  for (double v : vector) {
    if (!std::isfinite(v)) throw DataError("non-finite word vector component");
  }
  auto [it, inserted] = entries_.try_emplace(key, std::move(vector));
  if (inserted) order_.push_back(std::move(key));
  return inserted;
}

const WordVector* EmbeddingTable::find(std::string_view token) const {
  auto it = entries_.find(normalize_token(token));
  return it == entries_.end() ? nullptr : &it->second;
}

const WordVector& EmbeddingTable::lookup(std::string_view token) const {
  const WordVector* v = find(token);
  if (v == nullptr) {
    throw NotFoundError("token '" + std::string(token) + "' not in embedding table");
  }
  return *v;
}

EmbeddingTable load_embeddings(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t duplicates = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0) {
      throw FormatError("embeddings line " + std::to_string(line_no) +
                        ": expected 'token v1 ... vd'");
    }
    const std::string token = line.substr(0, space);
    WordVector vec;
    const char* p = line.data() + space + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      const char* next = std::find(p, end, ' ');
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(p, next, value);
      if (ec != std::errc() || ptr != next || !std::isfinite(value)) {
        throw FormatError("embeddings line " + std::to_string(line_no) +
                          ": unparseable float '" + std::string(p, next) + "'");
      }
      vec.push_back(value);
      p = next == end ? end : next + 1;
    }
    if (vec.empty()) {
      throw FormatError("embeddings line " + std::to_string(line_no) +
                        ": no vector components");
    }
    if (table.dim() != 0 && vec.size() != table.dim()) {
      std::ostringstream msg;
      msg << "embeddings line " << line_no << ": " << vec.size()
          << " components, expected " << table.dim();
      throw FormatError(msg.str());
    }
    if (!table.insert(token, std::move(vec))) ++duplicates;
  }
  if (duplicates > 0) {
    std::clog << "embeddings: ignored " << duplicates
              << " duplicate token(s); first occurrence kept\n";
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open embeddings file " + path.string());
  return load_embeddings(in);
}

void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  char buf[64];
  for (const auto& token : table.tokens()) {
    out << token;
    for (double v : table.lookup(token)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, ptr - buf);
    }
    out << '\n';
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

std::vector<Neighbor> nearest(const EmbeddingTable& table,
                              std::span<const double> query,
                              std::span<const std::string> candidates,
                              std::size_t k) {
  if (k == 0) throw ConfigError("nearest: k must be >= 1");
  std::vector<Neighbor> scored;
  scored.reserve(candidates.size());
  for (const auto& cand : candidates) {
    const WordVector& v = table.lookup(cand);
    scored.push_back({normalize_token(cand), cosine_similarity(query, v)});
  }
  std::sort(scored.begin(), scored.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.token < b.token;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

}  // namespace grounder
