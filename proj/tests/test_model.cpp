#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kpx/checkpoint.hpp"
#include "kpx/metrics.hpp"
#include "kpx/model.hpp"
#include "oracles.hpp"

namespace kpx::model {
namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

TEST(WindowFeatures, ShapesAndBorders) {
  Matrix tok(3, 2);
  tok << 1, 2, 3, 4, 5, 6;
  Matrix sos(1, 2), eos(1, 2);
  sos << -1, -1;
  eos << 9, 9;
  const Matrix w = window_features(tok, sos, eos);
  ASSERT_EQ(w.rows(), 3);
  ASSERT_EQ(w.cols(), 6);
  Matrix expected(3, 6);
  expected << -1, -1, 1, 2, 3, 4,
              1, 2, 3, 4, 5, 6,
              3, 4, 5, 6, 9, 9;
  EXPECT_EQ(w, expected);

  const Matrix one = window_features(tok.topRows(1), sos, eos);
  Matrix e1(1, 6);
  e1 << -1, -1, 1, 2, 9, 9;
  EXPECT_EQ(one, e1);
  EXPECT_THROW(window_features(Matrix(0, 2), sos, eos), ContractViolation);
  EXPECT_THROW(window_features(tok, Matrix::Zero(1, 3), eos), ContractViolation);
}

LstmWeights random_lstm(std::size_t in, std::size_t h, Rng& rng) {
  LstmWeights w;
  w.W = random_matrix(in, 4 * h, rng);
  w.U = random_matrix(h, 4 * h, rng);
  w.b = random_matrix(1, 4 * h, rng);
  return w;
}

TEST(LstmCell, ZeroInputsGiveZeroState) {
  LstmWeights w;
  w.W = Matrix::Zero(3, 8);
  w.U = Matrix::Zero(2, 8);
  w.b = Matrix::Zero(1, 8);
  const auto s = lstm_cell(Matrix::Zero(1, 3), Matrix::Zero(1, 2), Matrix::Zero(1, 2), w);
  EXPECT_EQ(s.h, Matrix::Zero(1, 2));
  EXPECT_EQ(s.c, Matrix::Zero(1, 2));
}

TEST(LstmCell, SaturatedForgetGateCarriesCell) {
  Rng rng(2);
  LstmWeights w;
  w.W = Matrix::Zero(3, 8);
  w.U = Matrix::Zero(2, 8);
  w.b = Matrix::Zero(1, 8);
  w.b.leftCols(2).setConstant(20.0);   // forget gate ~1
  w.b.middleCols(2, 2).setConstant(-20.0);  // input gate ~0
  Matrix c_prev(1, 2);
  c_prev << 0.7, -1.3;
  const auto s = lstm_cell(random_matrix(1, 3, rng), random_matrix(1, 2, rng), c_prev, w);
  EXPECT_NEAR(s.c(0, 0), 0.7, 1e-7);
  EXPECT_NEAR(s.c(0, 1), -1.3, 1e-7);
}

TEST(LstmCell, MatchesScalarReference) {
  Rng rng(5);
  const std::size_t in = 4, h = 3;
  const auto w = random_lstm(in, h, rng);
  const Matrix x = random_matrix(1, in, rng), hp = random_matrix(1, h, rng),
               cp = random_matrix(1, h, rng);
  const auto s = lstm_cell(x, hp, cp, w);
  for (std::size_t j = 0; j < h; ++j) {
    double z[4];
    for (std::size_t g = 0; g < 4; ++g) {
      const auto col = static_cast<Eigen::Index>(g * h + j);
      double acc = w.b(0, col);
      for (std::size_t k = 0; k < in; ++k) acc += x(0, k) * w.W(k, col);
      for (std::size_t k = 0; k < h; ++k) acc += hp(0, k) * w.U(k, col);
      z[g] = acc;
    }
    const double f = 1 / (1 + std::exp(-z[0])), i = 1 / (1 + std::exp(-z[1])),
                 o = 1 / (1 + std::exp(-z[2])), g = std::tanh(z[3]);
    const double c = f * cp(0, j) + i * g;
    EXPECT_NEAR(s.c(0, j), c, 1e-12);
    EXPECT_NEAR(s.h(0, j), o * std::tanh(c), 1e-12);
  }
}

TEST(LstmCell, NonFiniteInputNamesGate) {
  Rng rng(1);
  auto w = random_lstm(2, 2, rng);
  w.b(0, 5) = std::nan("");  // output gate block
  try {
    lstm_cell(Matrix::Zero(1, 2), Matrix::Zero(1, 2), Matrix::Zero(1, 2), w);
    FAIL();
  } catch (const NumericFailure& e) {
    EXPECT_NE(std::string(e.what()).find("output"), std::string::npos);
  }
  EXPECT_THROW(lstm_cell(Matrix::Zero(1, 3), Matrix::Zero(1, 2), Matrix::Zero(1, 2), w),
               ContractViolation);
}

TEST(Forward, EvalIsDeterministicAndNormalised) {
  const auto f = testing::grad_fixture(4, 5, 6, 7);
  const auto a = forward(f.params, f.sample, DropoutMasks{});
  const auto b = forward(f.params, f.sample, DropoutMasks{});
  EXPECT_EQ(a.bioes_probs, b.bioes_probs);
  EXPECT_EQ(a.keyword_probs, b.keyword_probs);
  ASSERT_EQ(a.bioes_probs.rows(), 7);
  ASSERT_EQ(a.bioes_probs.cols(), 5);
  ASSERT_EQ(a.keyword_probs.cols(), 2);
  for (Eigen::Index t = 0; t < 7; ++t) {
    EXPECT_NEAR(a.bioes_probs.row(t).sum(), 1.0, 1e-9);
    EXPECT_NEAR(a.keyword_probs.row(t).sum(), 1.0, 1e-9);
  }
  Rng rng(1);
  const auto c = forward(f.params, f.sample, Mode::kEval, 0.5, rng);
  EXPECT_EQ(a.bioes_probs, c.bioes_probs);
}

TEST(Forward, RejectsBadInput) {
  auto f = testing::grad_fixture(4, 3, 4, 3);
  auto s = f.sample;
  s.words[0] = 1000;
  EXPECT_THROW(forward(f.params, s, DropoutMasks{}), ContractViolation);
  s = f.sample;
  s.aux.pop_back();
  EXPECT_THROW(forward(f.params, s, DropoutMasks{}), ContractViolation);
  s = f.sample;
  s.words.clear();
  s.aux.clear();
  EXPECT_THROW(forward(f.params, s, DropoutMasks{}), ContractViolation);
}

void swap_row_blocks(Matrix& m, Eigen::Index a, Eigen::Index b, Eigen::Index len) {
  Matrix tmp = m.middleRows(a, len);
  m.middleRows(a, len) = m.middleRows(b, len);
  m.middleRows(b, len) = tmp;
}

// Reversing the sentence, swapping the two directions, the boundary vectors
// and the matching weight blocks must reproduce the same per-token outputs.
TEST(Forward, MirrorSymmetry) {
  const auto f = testing::grad_fixture(9, 4, 3, 6, false);
  NetworkParams m = f.params;
  const Eigen::Index e = 3, h = 4;
  std::swap(m.sos, m.eos);
  std::swap(m.l1_fwd, m.l1_bwd);
  swap_row_blocks(m.l1_fwd.W, 0, 2 * e, e);
  swap_row_blocks(m.l1_bwd.W, 0, 2 * e, e);
  std::swap(m.l2_fwd, m.l2_bwd);
  swap_row_blocks(m.l2_fwd.W, 0, h, h);
  swap_row_blocks(m.l2_bwd.W, 0, h, h);
  swap_row_blocks(m.head1_W, 0, h, h);
  swap_row_blocks(m.head2_W, 0, h, h);

  EncodedSample rev = f.sample;
  std::reverse(rev.words.begin(), rev.words.end());
  const auto a = forward(f.params, f.sample, DropoutMasks{});
  const auto b = forward(m, rev, DropoutMasks{});
  const Eigen::Index n = 6;
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index k = 0; k < 5; ++k) {
      EXPECT_NEAR(a.bioes_probs(t, k), b.bioes_probs(n - 1 - t, k), 1e-12);
    }
    for (Eigen::Index k = 0; k < 2; ++k) {
      EXPECT_NEAR(a.keyword_probs(t, k), b.keyword_probs(n - 1 - t, k), 1e-12);
    }
  }
}

TEST(JointLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(combine_loss(2.0, 4.0, 0.25), 3.5);
  EXPECT_DOUBLE_EQ(combine_loss(2.0, 4.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(combine_loss(2.0, 4.0, 0.0), 4.0);

  ForwardTrace tr;
  tr.input.words = {0, 0, 0};
  tr.input.bioes = {0, 2, 4};
  tr.input.keyword = {1, 0, 1};
  tr.bioes_probs = Matrix::Constant(3, 5, 0.2);
  tr.keyword_probs = Matrix::Constant(3, 2, 0.5);
  const auto l = joint_loss(tr, 0.5);
  EXPECT_NEAR(l.bioes, std::log(5.0), 1e-15);
  EXPECT_NEAR(l.keyword, std::log(2.0), 1e-15);
  EXPECT_NEAR(l.total, 0.5 * (std::log(5.0) + std::log(2.0)), 1e-15);

  tr.keyword_probs << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
  tr.input.keyword = {0, 1, 1};
  EXPECT_NEAR(joint_loss(tr, 1.0).total,
              -(std::log(0.9) + std::log(0.8) + std::log(0.5)) / 3.0, 1e-15);
}

TEST(Backward, MatchesFiniteDifferencesInEvalMode) {
  for (std::uint64_t seed : {1, 2}) {
    const auto f = testing::grad_fixture(seed, 4, 6, 5);
    Rng rng(seed + 50);
    const auto r = testing::gradient_check(f.params, f.sample, {}, 0.5, 200, 1e-3, rng);
    EXPECT_EQ(r.checked, 200u);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Backward, MatchesFiniteDifferencesWithFixedMasks) {
  const auto f = testing::grad_fixture(7, 4, 6, 5);
  Rng rng(70);
  const auto masks = sample_masks(f.params, 5, 0.5, rng);
  const auto r = testing::gradient_check(f.params, f.sample, masks, 0.3, 200, 1e-3, rng);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, GammaOneSilencesTaggingHead) {
  const auto f = testing::grad_fixture(3, 4, 5, 6);
  NetworkParams g = f.params.zeros_like();
  backward(forward(f.params, f.sample, DropoutMasks{}), f.params, 1.0, g);
  EXPECT_EQ(g.head2_W, Matrix::Zero(g.head2_W.rows(), g.head2_W.cols()));
  EXPECT_EQ(g.head2_b, Matrix::Zero(1, 5));
  EXPECT_EQ(g.l2_fwd.W, Matrix::Zero(g.l2_fwd.W.rows(), g.l2_fwd.W.cols()));
  EXPECT_GT(g.head1_W.norm(), 0.0);
  EXPECT_GT(g.l1_fwd.W.norm(), 0.0);
}

TEST(Tagger, ArgmaxTieGoesToEarlierLabel) {
  Matrix p(3, 5);
  p << 0.2, 0.2, 0.2, 0.2, 0.2,
       0.1, 0.3, 0.3, 0.2, 0.1,
       0.0, 0.0, 0.0, 0.5, 0.5;
  EXPECT_EQ(Tagger::argmax_tags(p), (std::vector<Tag>{Tag::B, Tag::I, Tag::E}));
}

TEST(Vocab, UnknownMapsToZero) {
  Vocabulary v({"storm", "cat"});
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.lookup("<unk>"), 0u);
  EXPECT_EQ(v.lookup("storm"), 1u);
  EXPECT_EQ(v.lookup("dog"), 0u);
  EXPECT_EQ(v.add("storm"), 1u);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = 12;
  c.embed_dim = 16;
  c.epochs = 4;
  c.batch_size = 16;
  c.learning_rate = 0.01;
  return c;
}

TEST(Train, ReducesLossAndIsDeterministic) {
  const auto corpus = testing::planted_corpus(120, 21).samples;
  const auto a = train(corpus, small_config());
  const auto b = train(corpus, small_config());
  EXPECT_TRUE(a.tagger.params == b.tagger.params);
  ASSERT_EQ(a.history.size(), 5u);
  EXPECT_EQ(a.history[0].epoch, 0u);
  EXPECT_LT(a.history.back().eval.keyword, a.history[0].eval.keyword);
  EXPECT_LT(a.history.back().eval.bioes, a.history[0].eval.bioes);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].eval.total, b.history[i].eval.total);
  }
  auto other = small_config();
  other.seed = 2;
  EXPECT_FALSE(train(corpus, other).tagger.params == a.tagger.params);
}

TEST(Train, LearnsPlantedPattern) {
  const auto corpus = testing::planted_corpus(400, 31).samples;
  const auto held = testing::planted_corpus(100, 32).samples;
  auto cfg = small_config();
  cfg.epochs = 6;
  const auto r = train(corpus, cfg);
  double f1 = 0.0;
  for (const auto& s : held) {
    f1 += set_f1(keyphrase_set(s.tokens, s.tags),
                 keyphrase_set(s.tokens, r.tagger.predict_tags(s.tokens))).f1;
  }
  EXPECT_GE(f1 / static_cast<double>(held.size()), 0.9);
}

TEST(Train, RejectsBadInput) {
  EXPECT_THROW(train({}, small_config()), ContractViolation);
  auto corpus = testing::planted_corpus(4, 1).samples;
  corpus[1].aux.assign(corpus[1].tokens.size(), "X");
  EXPECT_THROW(train(corpus, small_config()), ContractViolation);
  auto bad = small_config();
  bad.dropout = 1.0;
  EXPECT_THROW(train(testing::planted_corpus(4, 1).samples, bad), ContractViolation);
  const auto table = testing::fixture_f();
  EXPECT_THROW(train(testing::planted_corpus(4, 1).samples, small_config(), &table),
               ContractViolation);
}

TEST(Train, CopiesPretrainedRows) {
  auto corpus = testing::planted_corpus(10, 3).samples;
  corpus[0].tokens[0] = "Storm";
  auto cfg = small_config();
  cfg.embed_dim = 2;
  cfg.epochs = 0;
  const auto table = testing::fixture_f();
  const auto r = train(corpus, cfg, &table);
  const auto row = r.tagger.vocab.lookup("storm");
  ASSERT_NE(row, 0u);
  EXPECT_EQ(r.tagger.params.word_emb(row, 0), 1.0);
  EXPECT_EQ(r.tagger.params.word_emb(row, 1), 0.0);
}

TEST(Train, AuxChannel) {
  auto corpus = testing::planted_corpus(40, 5).samples;
  for (auto& s : corpus) {
    for (const auto& t : s.tokens) s.aux.push_back(t[0] == 'w' ? "N" : "K");
  }
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto r = train(corpus, cfg);
  EXPECT_TRUE(r.tagger.has_aux());
  EXPECT_EQ(r.tagger.aux_vocab.size(), 3u);
  EXPECT_EQ(r.tagger.predict_tags(corpus[0].tokens, corpus[0].aux).size(),
            corpus[0].tokens.size());
  EXPECT_THROW(r.tagger.predict_tags(corpus[0].tokens), ContractViolation);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto corpus = testing::planted_corpus(30, 8).samples;
  for (auto& s : corpus) s.aux.assign(s.tokens.size(), "A");
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto r = train(corpus, cfg);
  std::stringstream buf;
  save_checkpoint(r.tagger, buf);
  const std::string bytes = buf.str();
  const Tagger back = load_checkpoint(buf);
  EXPECT_TRUE(back.params == r.tagger.params);
  EXPECT_TRUE(back.vocab == r.tagger.vocab);
  EXPECT_EQ(back.config.hidden, cfg.hidden);
  EXPECT_EQ(back.config.seed, cfg.seed);
  for (const auto& s : corpus) {
    EXPECT_EQ(back.predict_tags(s.tokens, s.aux), r.tagger.predict_tags(s.tokens, s.aux));
  }
  std::stringstream again;
  save_checkpoint(back, again);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, RejectsMalformedStreams) {
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto r = train(testing::planted_corpus(5, 8).samples, cfg);
  std::stringstream buf;
  save_checkpoint(r.tagger, buf);
  const std::string bytes = buf.str();

  const auto load = [](const std::string& s) {
    std::istringstream in(s);
    return load_checkpoint(in);
  };
  EXPECT_THROW(load(""), MalformedInput);
  EXPECT_THROW(load("NOTACKPT" + bytes.substr(8)), MalformedInput);
  EXPECT_THROW(load(bytes.substr(0, bytes.size() / 2)), MalformedInput);
  EXPECT_THROW(load(bytes.substr(0, bytes.size() - 3)), MalformedInput);
  std::string bad_header = bytes;
  bad_header[16] = '#';
  EXPECT_THROW(load(bad_header), MalformedInput);
  EXPECT_NO_THROW(load(bytes));
}

}  // namespace
}  // namespace kpx::model
