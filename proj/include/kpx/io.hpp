#pragma once

// JSON Lines interchange.
//
//   tweets:  {"id": "...", "text": "...", "aux_tags": ["NN", ...]?}
//   samples: {"id": "...", "tokens": [...], "tags": ["B","E","O",...],
//             "aux_tags": [...]?}
//
// `tags` is also accepted as a compact string ("BEO").

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpx/bioes.hpp"
#include "kpx/error.hpp"
#include "kpx/sample.hpp"

namespace kpx::io {

using nlohmann::json;

namespace detail {

template <class F>
void for_each_record(std::istream& in, F&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MalformedInput(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw MalformedInput("record is not an object", lineno);
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw MalformedInput(e.what(), lineno);
    }
  }
}

inline std::string require_id(const json& j, std::size_t lineno) {
  if (!j.contains("id")) throw MalformedInput("missing field 'id'", lineno);
  std::string id = j.at("id").is_string() ? j.at("id").get<std::string>()
                                          : j.at("id").dump();
  if (id.empty()) throw MalformedInput("empty id", lineno);
  return id;
}

inline std::vector<Tag> read_tags(const json& t, std::size_t lineno) {
  try {
    if (t.is_string()) return parse_tags(t.get<std::string>());
    std::vector<Tag> tags;
    for (const auto& x : t) {
      const auto s = x.get<std::string>();
      if (s.size() != 1) throw MalformedInput("tag must be a single character");
      tags.push_back(parse_tags(s).front());
    }
    return tags;
  } catch (const MalformedInput& e) {
    throw MalformedInput(e.what(), lineno);
  }
}

}  // namespace detail

inline std::vector<RawTweet> read_tweets(std::istream& in) {
  std::vector<RawTweet> out;
  detail::for_each_record(in, [&](const json& j, std::size_t lineno) {
    RawTweet t;
    t.id = detail::require_id(j, lineno);
    if (!j.contains("text")) throw MalformedInput("missing field 'text'", lineno);
    t.text = j.at("text").get<std::string>();
    if (j.contains("aux_tags") && !j.at("aux_tags").is_null()) {
      t.aux_tags = j.at("aux_tags").get<std::vector<std::string>>();
    }
    out.push_back(std::move(t));
  });
  return out;
}

/// With `require_tags` false a record may omit `tags` (e.g. input to `tag`).
inline std::vector<TaggedSample> read_samples(std::istream& in,
                                              bool require_tags = true) {
  std::vector<TaggedSample> out;
  detail::for_each_record(in, [&](const json& j, std::size_t lineno) {
    TaggedSample s;
    s.id = detail::require_id(j, lineno);
    if (!j.contains("tokens")) throw MalformedInput("missing field 'tokens'", lineno);
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("tags")) {
      s.tags = detail::read_tags(j.at("tags"), lineno);
      if (s.tags.size() != s.tokens.size()) {
        throw MalformedInput("tags and tokens differ in length", lineno);
      }
    } else if (require_tags) {
      throw MalformedInput("missing field 'tags'", lineno);
    }
    if (j.contains("aux_tags") && !j.at("aux_tags").is_null()) {
      s.aux = j.at("aux_tags").get<std::vector<std::string>>();
      if (s.aux.size() != s.tokens.size()) {
        throw MalformedInput("aux_tags and tokens differ in length", lineno);
      }
    }
    out.push_back(std::move(s));
  });
  return out;
}

inline json sample_to_json(const TaggedSample& s) {
  json j;
  j["id"] = s.id;
  j["tokens"] = s.tokens;
  std::vector<std::string> tags;
  tags.reserve(s.tags.size());
  for (Tag t : s.tags) tags.emplace_back(1, to_char(t));
  j["tags"] = tags;
  if (s.has_aux()) j["aux_tags"] = s.aux;
  return j;
}

inline void write_samples(std::ostream& out, const std::vector<TaggedSample>& samples) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

template <class T, class Reader>
T read_file(const std::string& path, Reader&& reader) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open " + path);
  return reader(in);
}

}  // namespace kpx::io
