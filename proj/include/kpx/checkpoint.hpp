#pragma once

// Model checkpoint container.
//
// Layout (all integers little-endian):
//   8 bytes   magic "KPXCKPT1"
//   u64       header length L
//   L bytes   UTF-8 JSON header: {"config": {...}, "vocab": [...],
//             "aux_vocab": [...], "format_version": 1}
//   u64       tensor count T
//   T times:  u32 name length, name bytes, u64 rows, u64 cols,
//             rows*cols IEEE-754 binary64 values, row-major, little-endian
//
// Tensors appear in NetworkParams::zip order. Loading restores every value
// bit-exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "kpx/error.hpp"
#include "kpx/model.hpp"

namespace kpx::model {

inline constexpr char kCheckpointMagic[8] = {'K', 'P', 'X', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  out.write(b, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xFF);
  out.write(b, 4);
}

inline std::uint64_t get_uint(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw MalformedInput("checkpoint truncated");
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"hidden", c.hidden},         {"embed_dim", c.embed_dim},
          {"aux_dim", c.aux_dim},       {"window", c.window},
          {"gamma", c.gamma},           {"dropout", c.dropout},
          {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"seed", c.seed}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.aux_dim = j.at("aux_dim").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.gamma = j.at("gamma").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace detail

inline void save_checkpoint(const Tagger& m, std::ostream& out) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = detail::config_to_json(m.config);
  header["vocab"] = m.vocab.words();
  header["aux_vocab"] = m.aux_vocab.words();
  const std::string hdr = header.dump();

  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, hdr.size());
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));

  std::uint64_t count = 0;
  m.params.for_each([&](const char*, const Matrix&) { ++count; });
  detail::put_u64(out, count);
  m.params.for_each([&](const char* name, const Matrix& t) {
    const auto len = static_cast<std::uint32_t>(std::strlen(name));
    detail::put_u32(out, len);
    out.write(name, len);
    detail::put_u64(out, static_cast<std::uint64_t>(t.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      detail::put_u64(out, std::bit_cast<std::uint64_t>(t.data()[k]));
    }
  });
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

inline Tagger load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw MalformedInput("not a kpx checkpoint (bad magic)");
  }
  const auto hlen = detail::get_uint(in, 8);
  if (hlen > (1ull << 32)) throw MalformedInput("checkpoint header too large");
  std::string hdr(hlen, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw MalformedInput("checkpoint truncated in header");

  Tagger m;
  try {
    const auto header = nlohmann::json::parse(hdr);
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw MalformedInput("unsupported checkpoint version");
    }
    m.config = detail::config_from_json(header.at("config"));
    const auto words = header.at("vocab").get<std::vector<std::string>>();
    const auto aux = header.at("aux_vocab").get<std::vector<std::string>>();
    if (words.empty() || words[0] != Vocabulary::kUnk || aux.empty() ||
        aux[0] != Vocabulary::kUnk) {
      throw MalformedInput("checkpoint vocabulary must start with <unk>");
    }
    m.vocab = Vocabulary(std::vector<std::string>(words.begin() + 1, words.end()));
    m.aux_vocab = Vocabulary(std::vector<std::string>(aux.begin() + 1, aux.end()));
    if (m.vocab.size() != words.size() || m.aux_vocab.size() != aux.size()) {
      throw MalformedInput("checkpoint vocabulary has duplicates");
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("checkpoint header: ") + e.what());
  }

  const auto count = detail::get_uint(in, 8);
  std::uint64_t expected = 0;
  m.params.for_each([&](const char*, Matrix&) { ++expected; });
  if (count != expected) throw MalformedInput("checkpoint tensor count mismatch");
  m.params.for_each([&](const char* name, Matrix& t) {
    const auto len = detail::get_uint(in, 4);
    std::string got(len, '\0');
    in.read(got.data(), static_cast<std::streamsize>(len));
    if (!in || got != name) {
      throw MalformedInput(std::string("checkpoint: expected tensor ") + name);
    }
    const auto rows = detail::get_uint(in, 8);
    const auto cols = detail::get_uint(in, 8);
    if (rows > (1ull << 31) || cols > (1ull << 31)) {
      throw MalformedInput(std::string("checkpoint: implausible shape for ") + name);
    }
    t.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      t.data()[k] = std::bit_cast<double>(detail::get_uint(in, 8));
    }
  });

  // Shape consistency with the recorded config and vocabularies.
  const auto& p = m.params;
  const auto e = static_cast<Eigen::Index>(m.config.embed_dim);
  const auto h = static_cast<Eigen::Index>(m.config.hidden);
  const Eigen::Index in1 = 3 * e + p.aux_emb.cols();
  const bool ok =
      p.word_emb.rows() == static_cast<Eigen::Index>(m.vocab.size()) &&
      p.word_emb.cols() == e && p.sos.rows() == 1 && p.sos.cols() == e &&
      p.eos.rows() == 1 && p.eos.cols() == e &&
      (p.aux_emb.size() == 0 ||
       p.aux_emb.rows() == static_cast<Eigen::Index>(m.aux_vocab.size())) &&
      p.l1_fwd.W.rows() == in1 && p.l1_bwd.W.rows() == in1 &&
      p.l2_fwd.W.rows() == 2 * h && p.l2_bwd.W.rows() == 2 * h &&
      p.l1_fwd.W.cols() == 4 * h && p.l1_bwd.W.cols() == 4 * h &&
      p.l2_fwd.W.cols() == 4 * h && p.l2_bwd.W.cols() == 4 * h &&
      p.l1_fwd.U.rows() == h && p.l1_fwd.U.cols() == 4 * h &&
      p.l1_bwd.U.rows() == h && p.l1_bwd.U.cols() == 4 * h &&
      p.l2_fwd.U.rows() == h && p.l2_fwd.U.cols() == 4 * h &&
      p.l2_bwd.U.rows() == h && p.l2_bwd.U.cols() == 4 * h &&
      p.l1_fwd.b.cols() == 4 * h && p.l1_bwd.b.cols() == 4 * h &&
      p.l2_fwd.b.cols() == 4 * h && p.l2_bwd.b.cols() == 4 * h &&
      p.head1_W.rows() == 2 * h && p.head1_W.cols() == 2 &&
      p.head1_b.cols() == 2 && p.head2_W.rows() == 2 * h &&
      p.head2_W.cols() == 5 && p.head2_b.cols() == 5;
  if (!ok) throw MalformedInput("checkpoint tensor shapes inconsistent with header");
  return m;
}

inline void save_checkpoint_file(const Tagger& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(m, out);
}

inline Tagger load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedInput("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace kpx::model
