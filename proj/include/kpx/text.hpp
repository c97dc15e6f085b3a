#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kpx::text {

// ASCII lowercase; bytes >= 0x80 pass through untouched.
inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

inline bool is_ascii_space(char ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\v' ||
         ch == '\f';
}

// Length in bytes of a Unicode whitespace sequence starting at `pos`, or 0.
// Covers ASCII whitespace plus the UTF-8 encoded Zs/line separators that show
// up in tweets (NBSP, en/em spaces, ideographic space, ...).
inline std::size_t unicode_space_len(std::string_view s, std::size_t pos) {
  const auto at = [&](std::size_t k) {
    return static_cast<unsigned char>(s[pos + k]);
  };
  if (is_ascii_space(s[pos])) return 1;
  const std::size_t left = s.size() - pos;
  if (left >= 2 && at(0) == 0xC2 && (at(1) == 0x85 || at(1) == 0xA0)) return 2;
  if (left >= 3 && at(0) == 0xE1 && at(1) == 0x9A && at(2) == 0x80) return 3;
  if (left >= 3 && at(0) == 0xE2 && at(1) == 0x80 &&
      ((at(2) >= 0x80 && at(2) <= 0x8A) || at(2) == 0xA8 || at(2) == 0xA9 ||
       at(2) == 0xAF))
    return 3;
  if (left >= 3 && at(0) == 0xE2 && at(1) == 0x81 && at(2) == 0x9F) return 3;
  if (left >= 3 && at(0) == 0xE3 && at(1) == 0x80 && at(2) == 0x80) return 3;
  return 0;
}

// Split on runs of Unicode whitespace.
inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t n = unicode_space_len(s, i);
    if (n > 0) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      i += n;
    } else {
      cur.push_back(s[i]);
      ++i;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& parts,
                        std::size_t begin, std::size_t end,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

// Lowercase and collapse whitespace to single spaces.
inline std::string normalize_phrase(std::string_view s) {
  const auto words = split_ws(lower(s));
  return join(words, 0, words.size());
}

// Number of code points in a UTF-8 string (continuation bytes not counted).
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (char ch : s) {
    if ((static_cast<unsigned char>(ch) & 0xC0) != 0x80) ++n;
  }
  return n;
}

inline bool is_utf8_boundary(std::string_view s, std::size_t pos) {
  return pos == 0 || pos >= s.size() ||
         (static_cast<unsigned char>(s[pos]) & 0xC0) != 0x80;
}

}  // namespace kpx::text
