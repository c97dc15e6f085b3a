#pragma once

// BIOES span tagging: encode spans to tags, leniently decode (possibly
// ill-formed) tag sequences back to spans, and report scheme violations.
//
// Decoding repair rules for ill-formed input:
//   R1  I or E with no open phrase opens one at that position; E always
//       closes the open phrase.
//   R2  an open phrase interrupted by O, S, B or end-of-sequence closes at
//       its last in-phrase token. S always emits a singleton.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kpx/error.hpp"

namespace kpx {

// Underlying values are the canonical head indices.
enum class Tag : std::uint8_t { B = 0, I = 1, O = 2, E = 3, S = 4 };

inline constexpr std::size_t kTagCount = 5;
inline constexpr std::array<Tag, kTagCount> kAllTags = {Tag::B, Tag::I, Tag::O,
                                                        Tag::E, Tag::S};

inline constexpr char to_char(Tag t) {
  constexpr char chars[] = {'B', 'I', 'O', 'E', 'S'};
  return chars[static_cast<std::size_t>(t)];
}

inline constexpr std::size_t index_of(Tag t) {
  return static_cast<std::size_t>(t);
}

inline std::optional<Tag> tag_from_char(char c) {
  switch (c) {
    case 'B': return Tag::B;
    case 'I': return Tag::I;
    case 'O': return Tag::O;
    case 'E': return Tag::E;
    case 'S': return Tag::S;
    default: return std::nullopt;
  }
}

inline std::string tags_to_string(const std::vector<Tag>& tags) {
  std::string s;
  s.reserve(tags.size());
  for (Tag t : tags) s.push_back(to_char(t));
  return s;
}

// Parses a compact string such as "BEOO".
inline std::vector<Tag> parse_tags(std::string_view s) {
  std::vector<Tag> tags;
  tags.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto t = tag_from_char(s[i]);
    if (!t) {
      throw MalformedInput("invalid BIOES tag '" + std::string(1, s[i]) +
                           "' at position " + std::to_string(i));
    }
    tags.push_back(*t);
  }
  return tags;
}

/// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  friend bool operator==(const Span&, const Span&) = default;
  friend auto operator<=>(const Span&, const Span&) = default;
};

using SpanAnnotation = std::vector<Span>;

inline void check_spans(std::size_t seq_len, const SpanAnnotation& spans) {
  std::size_t prev_end = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const Span& s = spans[k];
    if (s.start >= s.end || s.end > seq_len) {
      throw ContractViolation("span [" + std::to_string(s.start) + "," +
                              std::to_string(s.end) +
                              ") out of range for length " +
                              std::to_string(seq_len));
    }
    if (k > 0 && s.start < prev_end) {
      throw ContractViolation("spans overlap or are unsorted at index " +
                              std::to_string(k));
    }
    prev_end = s.end;
  }
}

inline std::vector<Tag> encode_tags(std::size_t seq_len,
                                    const SpanAnnotation& spans) {
  check_spans(seq_len, spans);
  std::vector<Tag> tags(seq_len, Tag::O);
  for (const Span& s : spans) {
    if (s.length() == 1) {
      tags[s.start] = Tag::S;
      continue;
    }
    tags[s.start] = Tag::B;
    for (std::size_t i = s.start + 1; i + 1 < s.end; ++i) tags[i] = Tag::I;
    tags[s.end - 1] = Tag::E;
  }
  return tags;
}

inline SpanAnnotation decode_tags(const std::vector<Tag>& tags) {
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  SpanAnnotation spans;
  std::size_t open = kNone;
  const auto close_before = [&](std::size_t i) {
    if (open != kNone) spans.push_back({open, i});
    open = kNone;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case Tag::B:
        close_before(i);
        open = i;
        break;
      case Tag::I:
        if (open == kNone) open = i;
        break;
      case Tag::E:
        if (open == kNone) open = i;
        close_before(i + 1);
        break;
      case Tag::O:
        close_before(i);
        break;
      case Tag::S:
        close_before(i);
        spans.push_back({i, i + 1});
        break;
    }
  }
  close_before(tags.size());
  return spans;
}

enum class ViolationKind { kOrphanI, kOrphanE, kUnterminatedB };

struct Violation {
  ViolationKind kind;
  std::size_t position;
  friend bool operator==(const Violation&, const Violation&) = default;
};

inline std::string to_string(const Violation& v) {
  const char* name = v.kind == ViolationKind::kOrphanI   ? "orphan-I"
                     : v.kind == ViolationKind::kOrphanE ? "orphan-E"
                                                         : "unterminated-B";
  return std::string(name) + " at " + std::to_string(v.position);
}

/// Empty iff every B is closed by E before the next O/S/B or the end, and
/// I/E only occur inside a phrase opened by B. Orphan I/E do not open a
/// phrase here.
inline std::vector<Violation> validate(const std::vector<Tag>& tags) {
  std::vector<Violation> out;
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const Tag t = tags[i];
    if (open && (t == Tag::B || t == Tag::O || t == Tag::S)) {
      out.push_back({ViolationKind::kUnterminatedB, *open});
      open.reset();
    }
    switch (t) {
      case Tag::B: open = i; break;
      case Tag::I:
        if (!open) out.push_back({ViolationKind::kOrphanI, i});
        break;
      case Tag::E:
        if (!open) out.push_back({ViolationKind::kOrphanE, i});
        open.reset();
        break;
      case Tag::O:
      case Tag::S: break;
    }
  }
  if (open) out.push_back({ViolationKind::kUnterminatedB, *open});
  return out;
}

}  // namespace kpx
