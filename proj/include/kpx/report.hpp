#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kpx/bioes.hpp"
#include "kpx/error.hpp"
#include "kpx/sample.hpp"
#include "kpx/text.hpp"

namespace kpx {

/// Most frequent gold keyphrases (every decoded span occurrence counts once,
/// phrases normalised). Descending count, ties alphabetical.
inline std::vector<std::pair<std::string, std::size_t>> report_topk(
    const std::vector<TaggedSample>& samples, std::size_t k) {
  if (k == 0) throw ContractViolation("report_topk: k must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) {
    if (s.tags.size() != s.tokens.size()) {
      throw ContractViolation("sample '" + s.id + "': tags not aligned with tokens");
    }
    for (const Span& sp : decode_tags(s.tags)) {
      ++counts[text::normalize_phrase(text::join(s.tokens, sp.start, sp.end))];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

}  // namespace kpx
