#pragma once

// Raw tweets -> BIOES samples: tokenisation, hashtag segmentation, crisis
// lexicon matching and length filtering.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kpx/bioes.hpp"
#include "kpx/error.hpp"
#include "kpx/sample.hpp"
#include "kpx/text.hpp"

namespace kpx {

// ---------------------------------------------------------------------------
// Tokenizer

namespace detail {

inline bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && u > 0x20 && u != 0x7F &&
         !((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
           (c >= 'A' && c <= 'Z'));
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && text::lower(s.substr(0, prefix.size())) == prefix;
}

inline bool is_url(std::string_view s) {
  return starts_with_ci(s, "http://") || starts_with_ci(s, "https://") ||
         starts_with_ci(s, "www.");
}

}  // namespace detail

/// Whitespace split, then leading/trailing ASCII punctuation is peeled off
/// one character per token. URLs stay whole; a `#` or `@` directly followed
/// by a non-punctuation character stays attached as a prefix.
inline std::vector<std::string> tokenize(std::string_view text_in) {
  std::vector<std::string> out;
  for (const auto& chunk : text::split_ws(text_in)) {
    if (detail::is_url(chunk)) {
      out.push_back(chunk);
      continue;
    }
    std::size_t b = 0, e = chunk.size();
    while (b < e && detail::is_punct(chunk[b])) {
      const bool prefix = (chunk[b] == '#' || chunk[b] == '@') && b + 1 < e &&
                          !detail::is_punct(chunk[b + 1]);
      if (prefix) break;
      out.emplace_back(1, chunk[b]);
      ++b;
    }
    std::size_t core_end = e;
    while (core_end > b && detail::is_punct(chunk[core_end - 1])) --core_end;
    // a lone prefix char left over is punctuation too
    if (core_end == b + 1 && (chunk[b] == '#' || chunk[b] == '@')) core_end = b;
    if (core_end > b) out.push_back(chunk.substr(b, core_end - b));
    for (std::size_t k = std::max(core_end, b); k < e; ++k) {
      out.emplace_back(1, chunk[k]);
    }
  }
  return out;
}

inline bool is_hashtag(std::string_view token) {
  return token.size() > 1 && token[0] == '#' && !detail::is_punct(token[1]);
}

// ---------------------------------------------------------------------------
// Hashtag segmentation

/// Word weights for segmentation. Built from counts (weight = count / total)
/// or from a rank-ordered word list (weight = 1 / rank).
class FrequencyDict {
 public:
  FrequencyDict() = default;

  static FrequencyDict from_counts(
      const std::vector<std::pair<std::string, double>>& counts) {
    double total = 0.0;
    for (const auto& [w, c] : counts) {
      if (!(c > 0.0) || !std::isfinite(c)) {
        throw ContractViolation("frequency for '" + w + "' must be positive");
      }
      total += c;
    }
    FrequencyDict d;
    for (const auto& [w, c] : counts) d.set(w, c / total);
    return d;
  }

  static FrequencyDict from_ranked(const std::vector<std::string>& words) {
    FrequencyDict d;
    for (std::size_t r = 0; r < words.size(); ++r) {
      const auto key = text::lower(words[r]);
      if (!d.weights_.count(key)) d.set(key, 1.0 / static_cast<double>(r + 1));
    }
    return d;
  }

  bool empty() const { return weights_.empty(); }
  std::size_t size() const { return weights_.size(); }

  /// log weight of a dictionary word, or nullopt.
  std::optional<double> log_weight(std::string_view word) const {
    auto it = weights_.find(std::string(word));
    if (it == weights_.end()) return std::nullopt;
    return std::log(it->second);
  }

  /// log weight assigned to an unknown chunk of `length` code points:
  /// one decade below the rarest dictionary word, then one more decade per
  /// character.
  double unknown_log_weight(std::size_t length) const {
    const double floor = weights_.empty() ? 1.0 : std::min(min_weight_, 1.0);
    return std::log(floor) - std::numbers::ln10 * static_cast<double>(length + 1);
  }

  /// Known words use their weight, everything else the unknown-chunk floor.
  double chunk_log_weight(std::string_view chunk) const {
    if (auto w = log_weight(chunk)) return *w;
    return unknown_log_weight(text::utf8_length(chunk));
  }

 private:
  void set(const std::string& w, double weight) {
    weights_[text::lower(w)] = weight;
    min_weight_ = std::min(min_weight_, weight);
  }

  std::unordered_map<std::string, double> weights_;
  double min_weight_ = std::numeric_limits<double>::infinity();
};

/// Accepts `word<TAB>count` lines or bare words in rank order (not mixed).
inline FrequencyDict load_frequency_dict(std::istream& in) {
  std::vector<std::pair<std::string, double>> counts;
  std::vector<std::string> ranked;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::split_ws(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      if (!counts.empty()) throw MalformedInput("missing count column", lineno);
      const auto words = text::split_ws(line);
      if (words.size() != 1) throw MalformedInput("expected a single word", lineno);
      ranked.push_back(words[0]);
      continue;
    }
    if (!ranked.empty()) throw MalformedInput("unexpected count column", lineno);
    const std::string word = line.substr(0, tab);
    const std::string num = line.substr(tab + 1);
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < num.size() && text::is_ascii_space(num[used])) ++used;
    if (word.empty() || used != num.size() || !(c > 0.0) || !std::isfinite(c)) {
      throw MalformedInput("expected word<TAB>positive count", lineno);
    }
    counts.emplace_back(word, c);
  }
  return counts.empty() ? FrequencyDict::from_ranked(ranked)
                        : FrequencyDict::from_counts(counts);
}

inline FrequencyDict load_frequency_dict_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open frequency dictionary " + path);
  return load_frequency_dict(in);
}

/// Sum of chunk log weights of a segmentation.
inline double segmentation_log_weight(const std::vector<std::string>& words,
                                      const FrequencyDict& dict) {
  double s = 0.0;
  for (const auto& w : words) s += dict.chunk_log_weight(w);
  return s;
}

/// Splits a lowercased hashtag body (no `#`) into the segmentation with the
/// highest summed log weight. Splits only fall on UTF-8 character
/// boundaries; the pieces always concatenate back to `body`.
inline std::vector<std::string> segment_hashtag(std::string_view body,
                                                const FrequencyDict& dict) {
  if (body.empty()) return {};
  const std::size_t n = body.size();
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n + 1, ninf);
  std::vector<std::size_t> back(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    if (!text::is_utf8_boundary(body, j)) continue;
    for (std::size_t i = 0; i < j; ++i) {
      if (best[i] == ninf || !text::is_utf8_boundary(body, i)) continue;
      const double cand = best[i] + dict.chunk_log_weight(body.substr(i, j - i));
      if (cand > best[j]) {
        best[j] = cand;
        back[j] = i;
      }
    }
  }
  std::vector<std::string> words;
  for (std::size_t j = n; j > 0; j = back[j]) {
    words.emplace_back(body.substr(back[j], j - back[j]));
  }
  std::reverse(words.begin(), words.end());
  return words;
}

// ---------------------------------------------------------------------------
// Lexicon matching

/// Normalised unigram and bigram phrases.
class Lexicon {
 public:
  Lexicon() = default;
  Lexicon(std::initializer_list<std::string_view> phrases) {
    for (auto p : phrases) add(p);
  }

  void add(std::string_view phrase) {
    auto norm = text::normalize_phrase(phrase);
    const auto n = text::split_ws(norm).size();
    if (n < 1 || n > 2) {
      throw ContractViolation("lexicon entries must have one or two tokens: '" +
                              std::string(phrase) + "'");
    }
    phrases_.insert(std::move(norm));
  }

  bool contains(const std::string& normalized) const {
    return phrases_.count(normalized) > 0;
  }
  std::size_t size() const { return phrases_.size(); }

 private:
  std::set<std::string> phrases_;
};

inline Lexicon load_lexicon(std::istream& in) {
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto words = text::split_ws(line);
    if (words.empty()) continue;
    if (words.size() > 2) {
      throw MalformedInput("lexicon entries must have one or two tokens", lineno);
    }
    lex.add(line);
  }
  return lex;
}

inline Lexicon load_lexicon_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open lexicon " + path);
  return load_lexicon(in);
}

/// Greedy left-to-right, bigram before unigram, over lowercased tokens.
inline SpanAnnotation lexicon_match(const std::vector<std::string>& tokens,
                                    const Lexicon& lex) {
  SpanAnnotation spans;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (i + 1 < tokens.size() &&
        lex.contains(text::lower(tokens[i]) + " " + text::lower(tokens[i + 1]))) {
      spans.push_back({i, i + 2});
      i += 2;
    } else if (lex.contains(text::lower(tokens[i]))) {
      spans.push_back({i, i + 1});
      ++i;
    } else {
      ++i;
    }
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Annotation and corpus utilities

/// Hashtags are replaced by their segmented words, each hashtag becoming one
/// keyphrase span. Lexicon matches are then searched in the runs of
/// remaining tokens, so they never overlap a hashtag span. An aux symbol on a
/// hashtag is repeated for every word it expands into.
inline TaggedSample annotate(const RawTweet& tweet, const Lexicon& lex,
                             const FrequencyDict& dict) {
  const auto raw = tokenize(tweet.text);
  if (!tweet.aux_tags.empty() && tweet.aux_tags.size() != raw.size()) {
    throw ContractViolation("tweet '" + tweet.id + "': " +
                            std::to_string(tweet.aux_tags.size()) +
                            " aux tags for " + std::to_string(raw.size()) +
                            " tokens");
  }
  TaggedSample out;
  out.id = tweet.id;
  SpanAnnotation spans;
  std::vector<bool> from_hashtag;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (is_hashtag(raw[k])) {
      const auto words = segment_hashtag(text::lower(raw[k].substr(1)), dict);
      spans.push_back({out.tokens.size(), out.tokens.size() + words.size()});
      for (const auto& w : words) {
        out.tokens.push_back(w);
        from_hashtag.push_back(true);
        if (!tweet.aux_tags.empty()) out.aux.push_back(tweet.aux_tags[k]);
      }
    } else {
      out.tokens.push_back(raw[k]);
      from_hashtag.push_back(false);
      if (!tweet.aux_tags.empty()) out.aux.push_back(tweet.aux_tags[k]);
    }
  }
  std::size_t i = 0;
  while (i < out.tokens.size()) {
    if (from_hashtag[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < out.tokens.size() && !from_hashtag[j]) ++j;
    const std::vector<std::string> run(out.tokens.begin() + i,
                                       out.tokens.begin() + j);
    for (const Span& s : lexicon_match(run, lex)) {
      spans.push_back({s.start + i, s.end + i});
    }
    i = j;
  }
  std::sort(spans.begin(), spans.end());
  out.tags = encode_tags(out.tokens.size(), spans);
  return out;
}

inline constexpr std::size_t kMinTokens = 5;
inline constexpr std::size_t kMaxTokens = 200;

/// Keeps samples with 5..200 tokens inclusive.
inline std::vector<TaggedSample> filter_corpus(std::vector<TaggedSample> samples) {
  std::erase_if(samples, [](const TaggedSample& s) {
    return s.tokens.size() < kMinTokens || s.tokens.size() > kMaxTokens;
  });
  return samples;
}

struct CorpusStats {
  std::size_t samples = 0;
  std::size_t keyphrases = 0;
  double avg_keyphrases = 0.0;
};

inline CorpusStats corpus_stats(const std::vector<TaggedSample>& samples) {
  CorpusStats st;
  st.samples = samples.size();
  for (const auto& s : samples) st.keyphrases += decode_tags(s.tags).size();
  if (st.samples) {
    st.avg_keyphrases =
        static_cast<double>(st.keyphrases) / static_cast<double>(st.samples);
  }
  return st;
}

}  // namespace kpx
