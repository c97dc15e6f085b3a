#pragma once

// Word vectors: plain-text loader, phrase averaging and cosine similarity.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kpx/error.hpp"
#include "kpx/text.hpp"

namespace kpx {

/// Read-only lowercase word -> vector map. Every vector has length dim().
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  /// Builds a table from (word, vector) pairs. Keys are lowercased; later
  /// entries overwrite earlier ones.
  static EmbeddingTable from_entries(
      std::size_t dim,
      const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
    if (dim == 0) throw ContractViolation("embedding dimension must be > 0");
    EmbeddingTable t;
    t.dim_ = dim;
    for (const auto& [word, vec] : entries) {
      if (vec.size() != dim) {
        throw ContractViolation("vector for '" + word + "' has " +
                                std::to_string(vec.size()) +
                                " components, expected " + std::to_string(dim));
      }
      t.entries_[text::lower(word)] = vec;
    }
    return t;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  /// nullptr when the (lowercased) word is absent.
  const std::vector<double>* find(std::string_view word) const {
    auto it = entries_.find(text::lower(word));
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view word) const { return find(word) != nullptr; }

 private:
  friend EmbeddingTable load_embeddings(std::istream& in);

  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> entries_;
};

/// Parses `word v1 ... vd` lines. Blank lines are skipped; the first record
/// fixes d. Throws MalformedInput naming the offending line.
inline EmbeddingTable load_embeddings(std::istream& in) {
  EmbeddingTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = text::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) throw MalformedInput("record has no vector", lineno);
    std::vector<double> vec;
    vec.reserve(fields.size() - 1);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const std::string& f = fields[k];
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.size() || !std::isfinite(v)) {
        throw MalformedInput("cannot parse number '" + f + "'", lineno);
      }
      vec.push_back(v);
    }
    if (t.dim_ == 0) {
      t.dim_ = vec.size();
    } else if (vec.size() != t.dim_) {
      throw MalformedInput("expected " + std::to_string(t.dim_) +
                               " components, found " +
                               std::to_string(vec.size()),
                           lineno);
    }
    t.entries_[text::lower(fields[0])] = std::move(vec);
  }
  if (t.dim_ == 0) throw MalformedInput("embedding stream is empty");
  return t;
}

inline EmbeddingTable load_embeddings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open embedding file " + path);
  return load_embeddings(in);
}

struct PhraseVector {
  std::vector<double> values;
  std::size_t coverage = 0;  // in-vocabulary words that contributed
};

/// Mean of the vectors of the in-vocabulary words of `phrase`. OOV words are
/// skipped and excluded from the denominator; an all-OOV phrase gives the
/// zero vector with coverage 0.
inline PhraseVector phrase_vector(std::string_view phrase,
                                  const EmbeddingTable& table) {
  PhraseVector pv;
  pv.values.assign(table.dim(), 0.0);
  for (const auto& word : text::split_ws(phrase)) {
    const auto* v = table.find(word);
    if (v == nullptr) continue;
    for (std::size_t k = 0; k < v->size(); ++k) pv.values[k] += (*v)[k];
    ++pv.coverage;
  }
  if (pv.coverage > 1) {
    const double inv = static_cast<double>(pv.coverage);
    for (double& x : pv.values) x /= inv;
  }
  return pv;
}

/// Cosine similarity; 0 when either vector has zero norm.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ContractViolation("cosine: length mismatch (" +
                            std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = dot / (std::sqrt(na) * std::sqrt(nb));
  // rounding can push |c| a hair past 1
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

}  // namespace kpx
