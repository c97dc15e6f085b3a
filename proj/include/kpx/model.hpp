#pragma once

// Joint-layer bidirectional LSTM keyphrase tagger.
//
// Input tokens are embedded and windowed ([prev, cur, next] with learned
// SOS/EOS vectors), optionally followed by an auxiliary symbol embedding.
// A first BiLSTM feeds a second one; a keyword head (2-way softmax) reads the
// first layer's states and a BIOES head (5-way softmax) reads the second's.
// Training minimises gamma * J_keyword + (1 - gamma) * J_bioes, each term a
// mean per-token cross-entropy, with analytic gradients (BPTT).
//
// All tensors use the row-vector convention: a gate pre-activation is
// x W + h U + b with W of shape (in, 4h), U of shape (h, 4h), b of shape
// (1, 4h). Gate column blocks are ordered [forget, input, output, cell].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kpx/bioes.hpp"
#include "kpx/embed.hpp"
#include "kpx/error.hpp"
#include "kpx/rng.hpp"
#include "kpx/sample.hpp"
#include "kpx/text.hpp"

namespace kpx::model {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kWindow = 3;
inline constexpr std::size_t kKeywordClasses = 2;

struct TrainConfig {
  std::size_t hidden = 300;
  std::size_t embed_dim = 100;
  std::size_t aux_dim = 16;  // only used when samples carry aux symbols
  std::size_t window = kWindow;
  double gamma = 0.5;
  double dropout = 0.5;
  double learning_rate = 0.0015;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void check() const {
    if (window != kWindow) throw ContractViolation("only window 3 is supported");
    if (hidden == 0 || embed_dim == 0) {
      throw ContractViolation("hidden and embed_dim must be positive");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
      throw ContractViolation("gamma must lie in [0,1]");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ContractViolation("dropout must lie in [0,1)");
    }
    if (!(learning_rate > 0.0)) throw ContractViolation("learning rate must be > 0");
    if (batch_size == 0) throw ContractViolation("batch size must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct LstmWeights {
  Matrix W;  // in x 4h
  Matrix U;  // h x 4h
  Matrix b;  // 1 x 4h

  std::size_t hidden() const { return static_cast<std::size_t>(U.rows()); }
  std::size_t input() const { return static_cast<std::size_t>(W.rows()); }
};

struct NetworkParams {
  Matrix word_emb;  // V x e, row 0 is UNK
  Matrix sos;       // 1 x e
  Matrix eos;       // 1 x e
  Matrix aux_emb;   // A x a, row 0 is UNK; 0 x 0 without aux channel
  LstmWeights l1_fwd, l1_bwd, l2_fwd, l2_bwd;
  Matrix head1_W;  // 2h x 2
  Matrix head1_b;  // 1 x 2
  Matrix head2_W;  // 2h x 5
  Matrix head2_b;  // 1 x 5

  std::size_t hidden() const { return l1_fwd.hidden(); }
  std::size_t embed_dim() const { return static_cast<std::size_t>(word_emb.cols()); }
  std::size_t aux_dim() const { return static_cast<std::size_t>(aux_emb.cols()); }
  bool has_aux() const { return aux_emb.size() > 0; }

  /// Calls fn(name, tensor_a, tensor_b, ...) for every tensor, in a fixed
  /// order, walking the same member of each argument in lockstep.
  template <class F, class... P>
  static void zip(F&& fn, P&... ps) {
    fn("word_emb", ps.word_emb...);
    fn("sos", ps.sos...);
    fn("eos", ps.eos...);
    fn("aux_emb", ps.aux_emb...);
    fn("l1_fwd.W", ps.l1_fwd.W...);
    fn("l1_fwd.U", ps.l1_fwd.U...);
    fn("l1_fwd.b", ps.l1_fwd.b...);
    fn("l1_bwd.W", ps.l1_bwd.W...);
    fn("l1_bwd.U", ps.l1_bwd.U...);
    fn("l1_bwd.b", ps.l1_bwd.b...);
    fn("l2_fwd.W", ps.l2_fwd.W...);
    fn("l2_fwd.U", ps.l2_fwd.U...);
    fn("l2_fwd.b", ps.l2_fwd.b...);
    fn("l2_bwd.W", ps.l2_bwd.W...);
    fn("l2_bwd.U", ps.l2_bwd.U...);
    fn("l2_bwd.b", ps.l2_bwd.b...);
    fn("head1.W", ps.head1_W...);
    fn("head1.b", ps.head1_b...);
    fn("head2.W", ps.head2_W...);
    fn("head2.b", ps.head2_b...);
  }

  template <class F>
  void for_each(F&& fn) {
    zip([&](const char* name, Matrix& m) { fn(name, m); }, *this);
  }
  template <class F>
  void for_each(F&& fn) const {
    auto& self = const_cast<NetworkParams&>(*this);
    zip([&](const char* name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); },
        self);
  }

  /// Same shapes, all zeros.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    z.for_each([](const char*, Matrix& m) { m.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const char*, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const char*, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    bool eq = true;
    zip(
        [&](const char*, const Matrix& x, const Matrix& y) {
          eq = eq && x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        },
        a, b);
    return eq;
  }
};

namespace detail {

inline void fill_uniform(Matrix& m, double limit, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform(-limit, limit);
  }
}

inline double glorot(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline LstmWeights init_lstm(std::size_t in, std::size_t h, Rng& rng) {
  LstmWeights w;
  w.W.resize(in, 4 * h);
  w.U.resize(h, 4 * h);
  fill_uniform(w.W, glorot(in, h), rng);
  fill_uniform(w.U, glorot(h, h), rng);
  w.b = Matrix::Zero(1, 4 * h);
  w.b.leftCols(h).setConstant(1.0);  // forget gate
  return w;
}

}  // namespace detail

inline constexpr double kEmbeddingInitRange = 0.1;

/// Random initialisation: Glorot-uniform weight matrices, zero biases except
/// forget-gate bias 1, embeddings uniform in +-0.1. `aux_vocab` = 0 disables
/// the auxiliary channel.
inline NetworkParams init_params(std::size_t vocab, std::size_t aux_vocab,
                                 const TrainConfig& cfg, Rng& rng) {
  cfg.check();
  const std::size_t e = cfg.embed_dim, h = cfg.hidden;
  const std::size_t a = aux_vocab > 0 ? cfg.aux_dim : 0;
  NetworkParams p;
  p.word_emb.resize(vocab, e);
  p.sos.resize(1, e);
  p.eos.resize(1, e);
  detail::fill_uniform(p.word_emb, kEmbeddingInitRange, rng);
  detail::fill_uniform(p.sos, kEmbeddingInitRange, rng);
  detail::fill_uniform(p.eos, kEmbeddingInitRange, rng);
  p.aux_emb.resize(a > 0 ? aux_vocab : 0, a);
  detail::fill_uniform(p.aux_emb, kEmbeddingInitRange, rng);
  const std::size_t in1 = kWindow * e + a;
  p.l1_fwd = detail::init_lstm(in1, h, rng);
  p.l1_bwd = detail::init_lstm(in1, h, rng);
  p.l2_fwd = detail::init_lstm(2 * h, h, rng);
  p.l2_bwd = detail::init_lstm(2 * h, h, rng);
  p.head1_W.resize(2 * h, kKeywordClasses);
  p.head2_W.resize(2 * h, kTagCount);
  detail::fill_uniform(p.head1_W, detail::glorot(2 * h, kKeywordClasses), rng);
  detail::fill_uniform(p.head2_W, detail::glorot(2 * h, kTagCount), rng);
  p.head1_b = Matrix::Zero(1, kKeywordClasses);
  p.head2_b = Matrix::Zero(1, kTagCount);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Row t becomes [v_{t-1}, v_t, v_{t+1}] with sos/eos at the borders.
inline Matrix window_features(const Matrix& token_vectors, const Matrix& sos,
                              const Matrix& eos) {
  const Eigen::Index n = token_vectors.rows(), e = token_vectors.cols();
  if (n == 0) throw ContractViolation("window_features: empty sequence");
  if (sos.size() != e || eos.size() != e) {
    throw ContractViolation("window_features: boundary vector size mismatch");
  }
  Matrix out(n, kWindow * e);
  for (Eigen::Index t = 0; t < n; ++t) {
    out.block(t, 0, 1, e) = t > 0 ? token_vectors.row(t - 1) : sos.row(0);
    out.block(t, e, 1, e) = token_vectors.row(t);
    out.block(t, 2 * e, 1, e) = t + 1 < n ? token_vectors.row(t + 1) : eos.row(0);
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct CellState {
  Matrix h;  // 1 x hidden
  Matrix c;  // 1 x hidden
};

namespace detail {

inline const char* gate_name(Eigen::Index block) {
  static const char* names[] = {"forget", "input", "output", "cell"};
  return names[block];
}

// In place: pre-activations (1 x 4h) -> activations.
template <class Row>
void activate_gates(Row&& z, std::size_t hidden) {
  const auto h = static_cast<Eigen::Index>(hidden);
  for (Eigen::Index k = 0; k < 3 * h; ++k) z(0, k) = sigmoid(z(0, k));
  for (Eigen::Index k = 3 * h; k < 4 * h; ++k) z(0, k) = std::tanh(z(0, k));
}

inline void check_gates(const Matrix& z, std::size_t hidden, const char* where) {
  if (z.allFinite()) return;
  const auto h = static_cast<Eigen::Index>(hidden);
  for (Eigen::Index blk = 0; blk < 4; ++blk) {
    if (!z.middleCols(blk * h, h).allFinite()) {
      throw NumericFailure(std::string("non-finite ") + gate_name(blk) +
                           " gate in " + where);
    }
  }
}

}  // namespace detail

/// One LSTM step on a single input row.
inline CellState lstm_cell(const Matrix& x, const Matrix& h_prev,
                           const Matrix& c_prev, const LstmWeights& w) {
  const auto hd = static_cast<Eigen::Index>(w.hidden());
  if (x.rows() != 1 || x.cols() != w.W.rows() || h_prev.size() != hd ||
      c_prev.size() != hd) {
    throw ContractViolation("lstm_cell: shape mismatch");
  }
  Matrix z = x * w.W + h_prev * w.U + w.b;
  detail::check_gates(z, w.hidden(), "lstm_cell pre-activation");
  detail::activate_gates(z, w.hidden());
  CellState s;
  s.c = z.middleCols(0, hd).cwiseProduct(c_prev) +
        z.middleCols(hd, hd).cwiseProduct(z.middleCols(3 * hd, hd));
  if (!s.c.allFinite()) throw NumericFailure("non-finite cell state in lstm_cell");
  s.h = z.middleCols(2 * hd, hd).cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

/// Recorded activations of one direction of one layer, indexed by sequence
/// position (not processing order).
struct DirectionTrace {
  bool reverse = false;
  Matrix gates;   // n x 4h, post-activation [f, i, o, g]
  Matrix c;       // n x h
  Matrix tanh_c;  // n x h
  Matrix h;       // n x h
};

namespace detail {

inline DirectionTrace run_direction(const Matrix& x, const LstmWeights& w,
                                    bool reverse, const char* where) {
  const Eigen::Index n = x.rows();
  const auto hd = static_cast<Eigen::Index>(w.hidden());
  DirectionTrace tr;
  tr.reverse = reverse;
  tr.gates = x * w.W;
  tr.gates.rowwise() += w.b.row(0);
  tr.c.resize(n, hd);
  tr.tanh_c.resize(n, hd);
  tr.h.resize(n, hd);
  Matrix h_prev = Matrix::Zero(1, hd), c_prev = Matrix::Zero(1, hd);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::Index t = reverse ? n - 1 - s : s;
    auto z = tr.gates.row(t);
    z.noalias() += h_prev * w.U;
    if (!z.allFinite()) check_gates(Matrix(z), w.hidden(), where);
    activate_gates(z, w.hidden());
    c_prev = z.middleCols(0, hd).cwiseProduct(c_prev) +
             z.middleCols(hd, hd).cwiseProduct(z.middleCols(3 * hd, hd));
    tr.c.row(t) = c_prev;
    tr.tanh_c.row(t) = c_prev.array().tanh().matrix();
    h_prev = z.middleCols(2 * hd, hd).cwiseProduct(tr.tanh_c.row(t));
    tr.h.row(t) = h_prev;
  }
  if (!tr.h.allFinite()) throw NumericFailure(std::string("non-finite state in ") + where);
  return tr;
}

// Gradient of the loss w.r.t. one direction's parameters and inputs, given
// dL/dh at every position.
inline Matrix backprop_direction(const DirectionTrace& tr, const Matrix& x,
                                 const Matrix& dH, const LstmWeights& w,
                                 LstmWeights& grad) {
  const Eigen::Index n = x.rows();
  const auto hd = static_cast<Eigen::Index>(w.hidden());
  Matrix dZ(n, 4 * hd);
  Matrix h_prev_rows = Matrix::Zero(n, hd);
  Matrix dh_next = Matrix::Zero(1, hd), dc_next = Matrix::Zero(1, hd);
  for (Eigen::Index s = n - 1; s >= 0; --s) {
    const Eigen::Index t = tr.reverse ? n - 1 - s : s;
    const Eigen::Index prev = tr.reverse ? t + 1 : t - 1;
    const bool has_prev = s > 0;
    const auto f = tr.gates.row(t).middleCols(0, hd).array();
    const auto i = tr.gates.row(t).middleCols(hd, hd).array();
    const auto o = tr.gates.row(t).middleCols(2 * hd, hd).array();
    const auto g = tr.gates.row(t).middleCols(3 * hd, hd).array();
    const auto tc = tr.tanh_c.row(t).array();

    const Eigen::Array<double, 1, Eigen::Dynamic> dh =
        dH.row(t).array() + dh_next.array();
    const Eigen::Array<double, 1, Eigen::Dynamic> dc =
        dc_next.array() + dh * o * (1.0 - tc * tc);
    Eigen::Array<double, 1, Eigen::Dynamic> c_prev =
        Eigen::Array<double, 1, Eigen::Dynamic>::Zero(hd);
    if (has_prev) {
      c_prev = tr.c.row(prev).array();
      h_prev_rows.row(t) = tr.h.row(prev);
    }
    dZ.row(t).middleCols(0, hd) = (dc * c_prev * f * (1.0 - f)).matrix();
    dZ.row(t).middleCols(hd, hd) = (dc * g * i * (1.0 - i)).matrix();
    dZ.row(t).middleCols(2 * hd, hd) = (dh * tc * o * (1.0 - o)).matrix();
    dZ.row(t).middleCols(3 * hd, hd) = (dc * i * (1.0 - g * g)).matrix();
    dc_next = (dc * f).matrix();
    dh_next.noalias() = dZ.row(t) * w.U.transpose();
  }
  grad.W.noalias() += x.transpose() * dZ;
  grad.U.noalias() += h_prev_rows.transpose() * dZ;
  grad.b += dZ.colwise().sum();
  return dZ * w.W.transpose();
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      p(t, k) = std::exp(logits(t, k) - mx);
      z += p(t, k);
    }
    p.row(t) /= z;
  }
  return p;
}

inline Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Vocabulary and encoded samples

/// Index 0 is the unknown-symbol row.
class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";

  Vocabulary() : words_{std::string(kUnk)} { index_[words_[0]] = 0; }

  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) add(w);
  }

  std::size_t add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    return it->second;
  }

  std::size_t lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? 0 : it->second;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncodedSample {
  std::vector<std::size_t> words;
  std::vector<std::size_t> aux;      // empty without aux channel
  std::vector<std::size_t> bioes;    // canonical tag indices; may be empty
  std::vector<std::size_t> keyword;  // 1 iff bioes != O
};

inline std::size_t keyword_label(Tag t) { return t == Tag::O ? 0 : 1; }

// ---------------------------------------------------------------------------
// Forward pass

/// Inverted-dropout multipliers (0 or 1/(1-rate)). Empty matrices disable
/// the corresponding dropout.
struct DropoutMasks {
  Matrix layer1_in;   // n x in1
  Matrix layer2_in;   // n x 2h
  Matrix layer2_out;  // n x 2h

  bool active() const { return layer1_in.size() > 0; }
};

inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                           Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  }
  return m;
}

inline DropoutMasks sample_masks(const NetworkParams& p, std::size_t n,
                                 double rate, Rng& rng) {
  const auto rows = static_cast<Eigen::Index>(n);
  const auto h2 = static_cast<Eigen::Index>(2 * p.hidden());
  DropoutMasks m;
  m.layer1_in = dropout_mask(rows, p.l1_fwd.W.rows(), rate, rng);
  m.layer2_in = dropout_mask(rows, h2, rate, rng);
  m.layer2_out = dropout_mask(rows, h2, rate, rng);
  return m;
}

struct ForwardTrace {
  EncodedSample input;
  DropoutMasks masks;
  Matrix x1;  // layer-1 input after dropout
  DirectionTrace l1_fwd, l1_bwd;
  Matrix h1;  // n x 2h, [fwd; bwd]
  Matrix x2;  // layer-2 input after dropout
  DirectionTrace l2_fwd, l2_bwd;
  Matrix h2;       // n x 2h
  Matrix h2_drop;  // head-2 input
  Matrix keyword_probs;  // n x 2
  Matrix bioes_probs;    // n x 5

  std::size_t length() const { return input.words.size(); }
};

inline void check_input(const NetworkParams& p, const EncodedSample& s) {
  if (s.words.empty()) throw ContractViolation("forward: empty sequence");
  const auto vocab = static_cast<std::size_t>(p.word_emb.rows());
  for (auto w : s.words) {
    if (w >= vocab) {
      throw ContractViolation("forward: token index " + std::to_string(w) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  }
  if (p.has_aux()) {
    if (s.aux.size() != s.words.size()) {
      throw ContractViolation("forward: aux symbols missing or misaligned");
    }
    const auto avocab = static_cast<std::size_t>(p.aux_emb.rows());
    for (auto a : s.aux) {
      if (a >= avocab) throw ContractViolation("forward: aux index out of range");
    }
  }
}

/// Layer-1 input before dropout: window features plus aux embedding.
inline Matrix layer1_input(const NetworkParams& p, const EncodedSample& s) {
  const auto n = static_cast<Eigen::Index>(s.words.size());
  const auto e = static_cast<Eigen::Index>(p.embed_dim());
  Matrix tok(n, e);
  for (Eigen::Index t = 0; t < n; ++t) tok.row(t) = p.word_emb.row(s.words[t]);
  Matrix win = window_features(tok, p.sos, p.eos);
  if (!p.has_aux()) return win;
  const auto a = static_cast<Eigen::Index>(p.aux_dim());
  Matrix aux(n, a);
  for (Eigen::Index t = 0; t < n; ++t) aux.row(t) = p.aux_emb.row(s.aux[t]);
  return detail::concat_cols(win, aux);
}

/// Deterministic forward pass with the given dropout masks (pass an empty
/// DropoutMasks for evaluation).
inline ForwardTrace forward(const NetworkParams& p, const EncodedSample& s,
                            DropoutMasks masks) {
  check_input(p, s);
  ForwardTrace tr;
  tr.input = s;
  tr.masks = std::move(masks);
  const bool drop = tr.masks.active();

  tr.x1 = layer1_input(p, s);
  if (drop) tr.x1 = tr.x1.cwiseProduct(tr.masks.layer1_in);
  tr.l1_fwd = detail::run_direction(tr.x1, p.l1_fwd, false, "layer 1 forward");
  tr.l1_bwd = detail::run_direction(tr.x1, p.l1_bwd, true, "layer 1 backward");
  tr.h1 = detail::concat_cols(tr.l1_fwd.h, tr.l1_bwd.h);

  tr.x2 = drop ? Matrix(tr.h1.cwiseProduct(tr.masks.layer2_in)) : tr.h1;
  tr.l2_fwd = detail::run_direction(tr.x2, p.l2_fwd, false, "layer 2 forward");
  tr.l2_bwd = detail::run_direction(tr.x2, p.l2_bwd, true, "layer 2 backward");
  tr.h2 = detail::concat_cols(tr.l2_fwd.h, tr.l2_bwd.h);
  tr.h2_drop = drop ? Matrix(tr.h2.cwiseProduct(tr.masks.layer2_out)) : tr.h2;

  Matrix logits1 = tr.h1 * p.head1_W;
  logits1.rowwise() += p.head1_b.row(0);
  Matrix logits2 = tr.h2_drop * p.head2_W;
  logits2.rowwise() += p.head2_b.row(0);
  tr.keyword_probs = detail::softmax_rows(logits1);
  tr.bioes_probs = detail::softmax_rows(logits2);
  return tr;
}

enum class Mode { kTrain, kEval };

/// Train mode samples fresh dropout masks from `rng`; eval mode ignores it.
inline ForwardTrace forward(const NetworkParams& p, const EncodedSample& s,
                            Mode mode, double dropout, Rng& rng) {
  if (mode == Mode::kEval || dropout == 0.0) return forward(p, s, DropoutMasks{});
  return forward(p, s, sample_masks(p, s.words.size(), dropout, rng));
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct LossParts {
  double keyword = 0.0;  // J1
  double bioes = 0.0;    // J2
  double total = 0.0;    // gamma * J1 + (1 - gamma) * J2
};

inline double combine_loss(double j1, double j2, double gamma) {
  return gamma * j1 + (1.0 - gamma) * j2;
}

namespace detail {

inline double mean_cross_entropy(const Matrix& probs,
                                 const std::vector<std::size_t>& labels) {
  if (labels.size() != static_cast<std::size_t>(probs.rows())) {
    throw ContractViolation("labels not aligned with tokens");
  }
  double s = 0.0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] >= static_cast<std::size_t>(probs.cols())) {
      throw ContractViolation("label index out of range");
    }
    s -= std::log(probs(static_cast<Eigen::Index>(t),
                        static_cast<Eigen::Index>(labels[t])));
  }
  return s / static_cast<double>(labels.size());
}

}  // namespace detail

inline LossParts joint_loss(const ForwardTrace& tr, double gamma) {
  LossParts l;
  l.keyword = detail::mean_cross_entropy(tr.keyword_probs, tr.input.keyword);
  l.bioes = detail::mean_cross_entropy(tr.bioes_probs, tr.input.bioes);
  l.total = combine_loss(l.keyword, l.bioes, gamma);
  return l;
}

/// Adds dJ/dparams for one sample into `grad` (same shapes as `p`).
inline void backward(const ForwardTrace& tr, const NetworkParams& p,
                     double gamma, NetworkParams& grad) {
  const auto n = static_cast<Eigen::Index>(tr.length());
  const auto hd = static_cast<Eigen::Index>(p.hidden());
  const auto e = static_cast<Eigen::Index>(p.embed_dim());
  if (grad.word_emb.rows() != p.word_emb.rows() ||
      grad.word_emb.cols() != p.word_emb.cols() ||
      grad.l1_fwd.W.rows() != p.l1_fwd.W.rows() ||
      grad.l1_fwd.U.rows() != p.l1_fwd.U.rows() ||
      grad.aux_emb.rows() != p.aux_emb.rows() ||
      grad.aux_emb.cols() != p.aux_emb.cols()) {
    throw ContractViolation("backward: gradient shapes do not match parameters");
  }
  if (tr.input.keyword.size() != tr.length() || tr.input.bioes.size() != tr.length()) {
    throw ContractViolation("backward: labels not aligned with tokens");
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  // Softmax + cross-entropy: dlogits = (p - onehot) / n, scaled per head.
  Matrix d1 = tr.keyword_probs;
  Matrix d2 = tr.bioes_probs;
  for (Eigen::Index t = 0; t < n; ++t) {
    d1(t, tr.input.keyword[t]) -= 1.0;
    d2(t, tr.input.bioes[t]) -= 1.0;
  }
  d1 *= gamma * inv_n;
  d2 *= (1.0 - gamma) * inv_n;

  grad.head1_W.noalias() += tr.h1.transpose() * d1;
  grad.head1_b += d1.colwise().sum();
  grad.head2_W.noalias() += tr.h2_drop.transpose() * d2;
  grad.head2_b += d2.colwise().sum();

  const bool drop = tr.masks.active();
  Matrix dh2 = d2 * p.head2_W.transpose();
  if (drop) dh2 = dh2.cwiseProduct(tr.masks.layer2_out);

  Matrix dx2 = detail::backprop_direction(tr.l2_fwd, tr.x2, dh2.leftCols(hd),
                                          p.l2_fwd, grad.l2_fwd);
  dx2 += detail::backprop_direction(tr.l2_bwd, tr.x2, dh2.rightCols(hd),
                                    p.l2_bwd, grad.l2_bwd);
  if (drop) dx2 = dx2.cwiseProduct(tr.masks.layer2_in);

  Matrix dh1 = d1 * p.head1_W.transpose() + dx2;
  Matrix dx1 = detail::backprop_direction(tr.l1_fwd, tr.x1, dh1.leftCols(hd),
                                          p.l1_fwd, grad.l1_fwd);
  dx1 += detail::backprop_direction(tr.l1_bwd, tr.x1, dh1.rightCols(hd),
                                    p.l1_bwd, grad.l1_bwd);
  if (drop) dx1 = dx1.cwiseProduct(tr.masks.layer1_in);

  // Scatter window blocks back to embedding rows.
  const auto& words = tr.input.words;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (t > 0) {
      grad.word_emb.row(words[t - 1]) += dx1.block(t, 0, 1, e);
    } else {
      grad.sos += dx1.block(t, 0, 1, e);
    }
    grad.word_emb.row(words[t]) += dx1.block(t, e, 1, e);
    if (t + 1 < n) {
      grad.word_emb.row(words[t + 1]) += dx1.block(t, 2 * e, 1, e);
    } else {
      grad.eos += dx1.block(t, 2 * e, 1, e);
    }
    if (p.has_aux()) {
      grad.aux_emb.row(tr.input.aux[t]) +=
          dx1.block(t, kWindow * e, 1, p.aux_emb.cols());
    }
  }
}

// ---------------------------------------------------------------------------
// Optimiser

/// Adam with Nesterov momentum (NAdam, constant momentum schedule).
class Nadam {
 public:
  Nadam(const NetworkParams& shape, double lr, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps),
        m_(shape.zeros_like()), v_(shape.zeros_like()) {}

  void step(NetworkParams& params, const NetworkParams& grad) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double bc1 = 1.0 - std::pow(b1_, t);
    const double bc1_next = 1.0 - std::pow(b1_, t + 1.0);
    const double bc2 = 1.0 - std::pow(b2_, t);
    NetworkParams::zip(
        [&](const char*, Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
          for (Eigen::Index k = 0; k < p.size(); ++k) {
            const double gk = g.data()[k];
            double& mk = m.data()[k];
            double& vk = v.data()[k];
            mk = b1_ * mk + (1.0 - b1_) * gk;
            vk = b2_ * vk + (1.0 - b2_) * gk * gk;
            const double m_hat = b1_ * mk / bc1_next + (1.0 - b1_) * gk / bc1;
            const double v_hat = vk / bc2;
            p.data()[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
          }
        },
        params, const_cast<NetworkParams&>(grad), m_, v_);
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  NetworkParams m_, v_;
};

// ---------------------------------------------------------------------------
// Tagger: vocabularies + parameters + config

struct EpochRecord {
  std::size_t epoch = 0;      // 0 = before training
  LossParts train;            // running mean over the epoch, with dropout
  LossParts eval;             // whole corpus in eval mode after the epoch
};

class Tagger {
 public:
  TrainConfig config;
  Vocabulary vocab;
  Vocabulary aux_vocab;  // size 1 (UNK only) when the aux channel is off
  NetworkParams params;

  bool has_aux() const { return params.has_aux(); }

  EncodedSample encode(const std::vector<std::string>& tokens,
                       const std::vector<std::string>& aux = {}) const {
    EncodedSample s;
    s.words.reserve(tokens.size());
    for (const auto& t : tokens) s.words.push_back(vocab.lookup(text::lower(t)));
    if (has_aux()) {
      if (aux.size() != tokens.size()) {
        throw ContractViolation("model expects one aux symbol per token");
      }
      for (const auto& a : aux) s.aux.push_back(aux_vocab.lookup(a));
    }
    return s;
  }

  EncodedSample encode(const TaggedSample& sample) const {
    if (sample.tags.size() != sample.tokens.size()) {
      throw ContractViolation("sample '" + sample.id + "': tags not aligned with tokens");
    }
    EncodedSample s = encode(sample.tokens, sample.aux);
    for (Tag t : sample.tags) {
      s.bioes.push_back(index_of(t));
      s.keyword.push_back(keyword_label(t));
    }
    return s;
  }

  /// Per-token argmax of the BIOES head; ties go to the earlier label.
  std::vector<Tag> predict_tags(const std::vector<std::string>& tokens,
                                const std::vector<std::string>& aux = {}) const {
    if (tokens.empty()) return {};
    return argmax_tags(forward(params, encode(tokens, aux), DropoutMasks{}).bioes_probs);
  }

  static std::vector<Tag> argmax_tags(const Matrix& bioes_probs) {
    std::vector<Tag> tags;
    tags.reserve(static_cast<std::size_t>(bioes_probs.rows()));
    for (Eigen::Index t = 0; t < bioes_probs.rows(); ++t) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < bioes_probs.cols(); ++k) {
        if (bioes_probs(t, k) > bioes_probs(t, best)) best = k;
      }
      tags.push_back(kAllTags[static_cast<std::size_t>(best)]);
    }
    return tags;
  }
};

struct TrainResult {
  Tagger tagger;
  std::vector<EpochRecord> history;  // history[0] is the untrained model
};

namespace detail {

inline LossParts eval_loss(const Tagger& m, const std::vector<EncodedSample>& data) {
  LossParts sum;
  for (const auto& s : data) {
    const auto l = joint_loss(forward(m.params, s, DropoutMasks{}), m.config.gamma);
    sum.keyword += l.keyword;
    sum.bioes += l.bioes;
    sum.total += l.total;
  }
  const double n = static_cast<double>(data.size());
  return {sum.keyword / n, sum.bioes / n, sum.total / n};
}

}  // namespace detail

/// Builds vocabularies from the corpus (lowercased words, aux symbols),
/// initialises parameters (copying rows from `pretrained` where available)
/// and trains with mini-batch NAdam. Each batch gradient is the mean of the
/// per-sample gradients. Bit-reproducible for a fixed seed.
inline TrainResult train(const std::vector<TaggedSample>& corpus,
                         const TrainConfig& config,
                         const EmbeddingTable* pretrained = nullptr) {
  config.check();
  if (corpus.empty()) throw ContractViolation("train: empty corpus");
  const bool aux = corpus.front().has_aux();
  TrainResult result;
  Tagger& m = result.tagger;
  m.config = config;
  for (const auto& s : corpus) {
    if (s.tokens.empty()) throw ContractViolation("train: sample '" + s.id + "' is empty");
    if (s.has_aux() != aux) {
      throw ContractViolation("train: aux symbols must be present on all samples or none");
    }
    for (const auto& t : s.tokens) m.vocab.add(text::lower(t));
    for (const auto& a : s.aux) m.aux_vocab.add(a);
  }
  if (pretrained && pretrained->dim() != config.embed_dim) {
    throw ContractViolation("pretrained embeddings have dimension " +
                            std::to_string(pretrained->dim()) + ", model expects " +
                            std::to_string(config.embed_dim));
  }

  Rng rng(config.seed);
  m.params = init_params(m.vocab.size(), aux ? m.aux_vocab.size() : 0, config, rng);
  if (pretrained) {
    for (std::size_t i = 1; i < m.vocab.size(); ++i) {
      if (const auto* v = pretrained->find(m.vocab.words()[i])) {
        for (std::size_t k = 0; k < v->size(); ++k) {
          m.params.word_emb(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = (*v)[k];
        }
      }
    }
  }

  std::vector<EncodedSample> data;
  data.reserve(corpus.size());
  for (const auto& s : corpus) data.push_back(m.encode(s));

  result.history.push_back({0, {}, detail::eval_loss(m, data)});

  Nadam opt(m.params, config.learning_rate);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  NetworkParams grad = m.params.zeros_like();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    LossParts running;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      grad.for_each([](const char*, Matrix& g) { g.setZero(); });
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data[order[k]];
        const auto tr = forward(m.params, s, Mode::kTrain, config.dropout, rng);
        const auto l = joint_loss(tr, config.gamma);
        if (!std::isfinite(l.total)) {
          throw NumericFailure("non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_index));
        }
        running.keyword += l.keyword;
        running.bioes += l.bioes;
        running.total += l.total;
        backward(tr, m.params, config.gamma, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.for_each([&](const char*, Matrix& g) { g *= scale; });
      opt.step(m.params, grad);
      if (!m.params.all_finite()) {
        throw NumericFailure("non-finite parameters after epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_index));
      }
    }
    const double n = static_cast<double>(data.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = {running.keyword / n, running.bioes / n, running.total / n};
    rec.eval = detail::eval_loss(m, data);
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace kpx::model
