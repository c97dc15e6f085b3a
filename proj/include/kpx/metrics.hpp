#pragma once

// Keyphrase evaluation: exact-match span P/R/F1, set F1, and the
// embedding-based scores (greedy matching and its symmetric, length-penalised
// and alpha/beta-modulated forms, average/extrema embeddings, optimal
// matching), plus corpus macro-averaging.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kpx/assignment.hpp"
#include "kpx/bioes.hpp"
#include "kpx/embed.hpp"
#include "kpx/error.hpp"
#include "kpx/text.hpp"

namespace kpx {

/// Order-free, duplicate-free set of normalised phrases (lowercase, single
/// spaces). Empty phrases are dropped on insertion.
class KeyphraseSet {
 public:
  KeyphraseSet() = default;
  KeyphraseSet(std::initializer_list<std::string_view> phrases) {
    for (auto p : phrases) insert(p);
  }
  explicit KeyphraseSet(const std::vector<std::string>& phrases) {
    for (const auto& p : phrases) insert(p);
  }

  void insert(std::string_view phrase) {
    auto norm = text::normalize_phrase(phrase);
    if (!norm.empty()) phrases_.insert(std::move(norm));
  }

  bool contains(std::string_view phrase) const {
    return phrases_.count(text::normalize_phrase(phrase)) > 0;
  }

  std::size_t size() const noexcept { return phrases_.size(); }
  bool empty() const noexcept { return phrases_.empty(); }
  auto begin() const { return phrases_.begin(); }
  auto end() const { return phrases_.end(); }

  friend bool operator==(const KeyphraseSet&, const KeyphraseSet&) = default;

 private:
  std::set<std::string> phrases_;
};

enum class MetricVariant {
  kGreedy,
  kSymmetricGreedy,
  kExtended,
  kAverage,
  kExtrema,
  kOptimal,
};

inline std::string_view to_string(MetricVariant v) {
  switch (v) {
    case MetricVariant::kGreedy: return "greedy";
    case MetricVariant::kSymmetricGreedy: return "symmetric-greedy";
    case MetricVariant::kExtended: return "extended";
    case MetricVariant::kAverage: return "average";
    case MetricVariant::kExtrema: return "extrema";
    case MetricVariant::kOptimal: return "optimal";
  }
  return "?";
}

inline std::optional<MetricVariant> parse_variant(std::string_view s) {
  for (auto v : {MetricVariant::kGreedy, MetricVariant::kSymmetricGreedy,
                 MetricVariant::kExtended, MetricVariant::kAverage,
                 MetricVariant::kExtrema, MetricVariant::kOptimal}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

struct MetricConfig {
  double alpha = 0.7;
  double beta = 0.7;
  double theta = 0.4;
  MetricVariant variant = MetricVariant::kExtended;

  void check() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0)) {
      throw ContractViolation("alpha and beta must be >= 0");
    }
    if (!(theta >= 0.0 && theta <= 1.0)) {
      throw ContractViolation("theta must lie in [0,1]");
    }
  }
};

struct PrfReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  static PrfReport from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    PrfReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.precision = tp + fp ? static_cast<double>(tp) / double(tp + fp) : 0.0;
    r.recall = tp + fn ? static_cast<double>(tp) / double(tp + fn) : 0.0;
    r.f1 = harmonic(r.precision, r.recall);
    return r;
  }

  static double harmonic(double p, double r) {
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

// ---------------------------------------------------------------------------
// Exact and set matching

/// Decodes `tags`, joins each span's tokens and normalises.
inline KeyphraseSet keyphrase_set(const std::vector<std::string>& tokens,
                                  const std::vector<Tag>& tags) {
  if (tokens.size() != tags.size()) {
    throw ContractViolation("keyphrase_set: " + std::to_string(tokens.size()) +
                            " tokens but " + std::to_string(tags.size()) +
                            " tags");
  }
  KeyphraseSet out;
  for (const Span& s : decode_tags(tags)) {
    out.insert(text::join(tokens, s.start, s.end));
  }
  return out;
}

namespace detail {

struct SpanCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline SpanCounts count_spans(const std::vector<Tag>& gold,
                              const std::vector<Tag>& pred) {
  if (gold.size() != pred.size()) {
    throw ContractViolation("gold and predicted tag sequences differ in length");
  }
  const auto g = decode_tags(gold);
  const auto p = decode_tags(pred);
  const std::set<Span> gs(g.begin(), g.end());
  SpanCounts c;
  for (const Span& s : p) {
    if (gs.count(s)) ++c.tp;
  }
  c.fp = p.size() - c.tp;
  c.fn = g.size() - c.tp;
  return c;
}

inline void check_parallel(std::size_t a, std::size_t b) {
  if (a != b) {
    throw ContractViolation("corpus size mismatch: " + std::to_string(a) +
                            " gold vs " + std::to_string(b) + " predicted");
  }
}

}  // namespace detail

/// Micro-averaged span P/R/F1: a predicted span is a hit iff gold has the
/// identical (start, end) span in the same sample.
inline PrfReport exact_match_prf(const std::vector<std::vector<Tag>>& gold,
                                 const std::vector<std::vector<Tag>>& pred) {
  detail::check_parallel(gold.size(), pred.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto c = detail::count_spans(gold[i], pred[i]);
    tp += c.tp;
    fp += c.fp;
    fn += c.fn;
  }
  return PrfReport::from_counts(tp, fp, fn);
}

/// Macro-averaged variant: per-sample P, R and F1 averaged over samples;
/// counts are corpus totals. Empty corpus gives zeros.
inline PrfReport exact_match_macro_prf(
    const std::vector<std::vector<Tag>>& gold,
    const std::vector<std::vector<Tag>>& pred) {
  detail::check_parallel(gold.size(), pred.size());
  PrfReport out;
  if (gold.empty()) return out;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto c = detail::count_spans(gold[i], pred[i]);
    const auto r = PrfReport::from_counts(c.tp, c.fp, c.fn);
    out.precision += r.precision;
    out.recall += r.recall;
    out.f1 += r.f1;
    out.tp += c.tp;
    out.fp += c.fp;
    out.fn += c.fn;
  }
  const double n = static_cast<double>(gold.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

/// F1 over normalised phrase strings. Both empty scores 1; exactly one empty
/// scores 0.
inline PrfReport set_f1(const KeyphraseSet& gold, const KeyphraseSet& pred) {
  std::size_t tp = 0;
  for (const auto& p : pred) {
    if (gold.contains(p)) ++tp;
  }
  auto r = PrfReport::from_counts(tp, pred.size() - tp, gold.size() - tp);
  if (gold.empty() && pred.empty()) {
    r.precision = r.recall = r.f1 = 1.0;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Embedding-based scores

namespace detail {

using VectorList = std::vector<std::vector<double>>;

inline VectorList phrase_vectors(const KeyphraseSet& set,
                                 const EmbeddingTable& table) {
  VectorList out;
  out.reserve(set.size());
  for (const auto& p : set) out.push_back(phrase_vector(p, table).values);
  return out;
}

inline double thresholded(double cos, double theta) {
  return cos < theta ? 0.0 : cos;
}

// Each pairwise cosine is thresholded before the max is taken.
inline double best_match(const std::vector<double>& v, const VectorList& against,
                         double theta) {
  double best = 0.0;
  for (const auto& w : against) {
    best = std::max(best, thresholded(cosine(v, w), theta));
  }
  return best;
}

inline double match_sum(const VectorList& from, const VectorList& to,
                        double theta) {
  double sum = 0.0;
  for (const auto& v : from) sum += best_match(v, to, theta);
  return sum;
}

inline void require_non_empty(const KeyphraseSet& a, const KeyphraseSet& b,
                              const char* who) {
  if (a.empty() || b.empty()) {
    throw ContractViolation(std::string(who) +
                            ": keyphrase sets must be non-empty");
  }
}

// Empty-set convention shared by every set-level score.
inline std::optional<double> empty_rule(const KeyphraseSet& pred,
                                        const KeyphraseSet& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  return std::nullopt;
}

inline std::vector<double> mean_vector(const VectorList& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto& v : vs) {
    for (std::size_t k = 0; k < dim; ++k) m[k] += v[k];
  }
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

// Per-dimension component of largest magnitude; magnitude ties go positive.
inline std::vector<double> extrema_vector(const VectorList& vs,
                                          std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  for (const auto& v : vs) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double a = std::abs(v[k]), cur = std::abs(e[k]);
      if (a > cur || (a == cur && v[k] > e[k])) e[k] = v[k];
    }
  }
  return e;
}

}  // namespace detail

/// Best thresholded cosine between `phrase` and any member of `against`.
inline double best_match(std::string_view phrase, const KeyphraseSet& against,
                         const EmbeddingTable& table, double theta) {
  if (against.empty()) {
    throw ContractViolation("best_match: comparison set is empty");
  }
  return detail::best_match(phrase_vector(phrase, table).values,
                            detail::phrase_vectors(against, table), theta);
}

/// One-directional greedy matching: mean best match of each predicted phrase.
inline double gm(const KeyphraseSet& pred, const KeyphraseSet& gold,
                 const EmbeddingTable& table, double theta) {
  detail::require_non_empty(pred, gold, "gm");
  const auto pv = detail::phrase_vectors(pred, table);
  const auto gv = detail::phrase_vectors(gold, table);
  return detail::match_sum(pv, gv, theta) / static_cast<double>(pv.size());
}

inline double symm_gm(const KeyphraseSet& pred, const KeyphraseSet& gold,
                      const EmbeddingTable& table, double theta) {
  if (auto r = detail::empty_rule(pred, gold)) return *r;
  return (gm(pred, gold, table, theta) + gm(gold, pred, table, theta)) / 2.0;
}

/// Greedy matching with alpha penalising g > p and beta penalising p > g in
/// the per-direction denominators.
inline double extended_gm(const KeyphraseSet& pred, const KeyphraseSet& gold,
                          const EmbeddingTable& table,
                          const MetricConfig& config) {
  config.check();
  if (auto r = detail::empty_rule(pred, gold)) return *r;
  const auto pv = detail::phrase_vectors(pred, table);
  const auto gv = detail::phrase_vectors(gold, table);
  const double p = static_cast<double>(pv.size());
  const double g = static_cast<double>(gv.size());
  const double pred_side = detail::match_sum(pv, gv, config.theta) /
                           (p + config.alpha * std::max(0.0, g - p));
  const double gold_side = detail::match_sum(gv, pv, config.theta) /
                           (g + config.beta * std::max(0.0, p - g));
  return (pred_side + gold_side) / 2.0;
}

/// Both directions normalised by max(p, g): extended_gm with alpha = beta = 1.
inline double gm_prime(const KeyphraseSet& pred, const KeyphraseSet& gold,
                       const EmbeddingTable& table, double theta) {
  MetricConfig c;
  c.alpha = 1.0;
  c.beta = 1.0;
  c.theta = theta;
  return extended_gm(pred, gold, table, c);
}

inline double average_embedding_score(const KeyphraseSet& pred,
                                      const KeyphraseSet& gold,
                                      const EmbeddingTable& table,
                                      double theta) {
  if (auto r = detail::empty_rule(pred, gold)) return *r;
  const auto a = detail::mean_vector(detail::phrase_vectors(pred, table),
                                     table.dim());
  const auto b = detail::mean_vector(detail::phrase_vectors(gold, table),
                                     table.dim());
  return detail::thresholded(cosine(a, b), theta);
}

inline double extrema_embedding_score(const KeyphraseSet& pred,
                                      const KeyphraseSet& gold,
                                      const EmbeddingTable& table,
                                      double theta) {
  if (auto r = detail::empty_rule(pred, gold)) return *r;
  const auto a = detail::extrema_vector(detail::phrase_vectors(pred, table),
                                        table.dim());
  const auto b = detail::extrema_vector(detail::phrase_vectors(gold, table),
                                        table.dim());
  return detail::thresholded(cosine(a, b), theta);
}

/// One-to-one matching maximising the summed thresholded cosines, divided by
/// max(p, g).
inline double optimal_matching_score(const KeyphraseSet& pred,
                                     const KeyphraseSet& gold,
                                     const EmbeddingTable& table,
                                     double theta) {
  if (auto r = detail::empty_rule(pred, gold)) return *r;
  const auto pv = detail::phrase_vectors(pred, table);
  const auto gv = detail::phrase_vectors(gold, table);
  const std::size_t n = std::max(pv.size(), gv.size());
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    for (std::size_t j = 0; j < gv.size(); ++j) {
      w[i * n + j] = detail::thresholded(cosine(pv[i], gv[j]), theta);
    }
  }
  return max_weight_assignment(w, n).total / static_cast<double>(n);
}

/// Dispatches on config.variant.
inline double score(const KeyphraseSet& pred, const KeyphraseSet& gold,
                    const EmbeddingTable& table, const MetricConfig& config) {
  config.check();
  switch (config.variant) {
    case MetricVariant::kGreedy:
      if (auto r = detail::empty_rule(pred, gold)) return *r;
      return gm(pred, gold, table, config.theta);
    case MetricVariant::kSymmetricGreedy:
      return symm_gm(pred, gold, table, config.theta);
    case MetricVariant::kExtended:
      return extended_gm(pred, gold, table, config);
    case MetricVariant::kAverage:
      return average_embedding_score(pred, gold, table, config.theta);
    case MetricVariant::kExtrema:
      return extrema_embedding_score(pred, gold, table, config.theta);
    case MetricVariant::kOptimal:
      return optimal_matching_score(pred, gold, table, config.theta);
  }
  throw ContractViolation("unknown metric variant");
}

// ---------------------------------------------------------------------------
// Corpus aggregation

struct EvalSample {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<Tag> gold;
  std::vector<Tag> pred;
  // Tokens the prediction refers to when they differ from `tokens`.
  std::vector<std::string> pred_tokens;
};

struct ScoreReport {
  std::vector<std::pair<std::string, double>> per_sample;
  double corpus_score = 0.0;
};

/// Macro average of the configured score. Samples with an empty prediction
/// and a non-empty gold set count as 0; they are never skipped.
inline ScoreReport corpus_eval(const std::vector<EvalSample>& samples,
                               const EmbeddingTable& table,
                               const MetricConfig& config) {
  config.check();
  ScoreReport report;
  report.per_sample.reserve(samples.size());
  double total = 0.0;
  for (const auto& s : samples) {
    double v = 0.0;
    try {
      const auto& ptoks = s.pred_tokens.empty() ? s.tokens : s.pred_tokens;
      v = score(keyphrase_set(ptoks, s.pred), keyphrase_set(s.tokens, s.gold),
                table, config);
    } catch (const ContractViolation& e) {
      throw ContractViolation("sample '" + s.id + "': " + e.what());
    }
    report.per_sample.emplace_back(s.id, v);
    total += v;
  }
  if (!samples.empty()) {
    report.corpus_score = total / static_cast<double>(samples.size());
  }
  return report;
}

}  // namespace kpx
