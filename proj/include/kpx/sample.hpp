#pragma once

#include <string>
#include <vector>

#include "kpx/bioes.hpp"

namespace kpx {

/// Token sequence with one BIOES tag per token and, optionally, one auxiliary
/// categorical symbol (e.g. a POS tag) per token. `aux` is empty when absent.
struct TaggedSample {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<Tag> tags;
  std::vector<std::string> aux;

  bool has_aux() const { return !aux.empty(); }
};

struct RawTweet {
  std::string id;
  std::string text;
  std::vector<std::string> aux_tags;  // aligned with tokenize(text) when set
};

}  // namespace kpx
