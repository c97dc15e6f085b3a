#include <gtest/gtest.h>

#include <sstream>

#include "kpx/dataprep.hpp"
#include "kpx/rng.hpp"

namespace kpx {
namespace {

using Tokens = std::vector<std::string>;

TEST(Tokenize, PeelsPunctuation) {
  EXPECT_EQ(tokenize("Stuck in the attic."), (Tokens{"Stuck", "in", "the", "attic", "."}));
  EXPECT_EQ(tokenize("wow!!"), (Tokens{"wow", "!", "!"}));
  EXPECT_EQ(tokenize("(help)"), (Tokens{"(", "help", ")"}));
  EXPECT_EQ(tokenize("don't"), (Tokens{"don't"}));
}

TEST(Tokenize, KeepsHashtagsMentionsUrls) {
  EXPECT_EQ(tokenize("#HurricaneHarvey hits!"), (Tokens{"#HurricaneHarvey", "hits", "!"}));
  EXPECT_EQ(tokenize("help @user http://a.b"), (Tokens{"help", "@user", "http://a.b"}));
  EXPECT_EQ(tokenize("(#help), @bob:"), (Tokens{"(", "#help", ")", ",", "@bob", ":"}));
  EXPECT_EQ(tokenize("https://t.co/x?y=1."), (Tokens{"https://t.co/x?y=1."}));
  EXPECT_EQ(tokenize("# @ #!"), (Tokens{"#", "@", "#", "!"}));
}

TEST(Tokenize, UnicodeWhitespace) {
  // NBSP and ideographic space separate tokens
  EXPECT_EQ(tokenize("flood\xC2\xA0warning\xE3\x80\x80now"),
            (Tokens{"flood", "warning", "now"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("  \t\n").empty());
}

FrequencyDict small_dict() {
  return FrequencyDict::from_counts({{"hurricane", 50}, {"harvey", 20}, {"boston", 30},
                                     {"bombing", 10}, {"a", 100}, {"bomb", 5},
                                     {"in", 80}, {"g", 1}});
}

TEST(SegmentHashtag, Examples) {
  const auto d = small_dict();
  EXPECT_EQ(segment_hashtag("hurricaneharvey", d), (Tokens{"hurricane", "harvey"}));
  EXPECT_EQ(segment_hashtag("harvey", d), (Tokens{"harvey"}));
  EXPECT_EQ(segment_hashtag("bostonbombing", d), (Tokens{"boston", "bombing"}));
  EXPECT_EQ(segment_hashtag("xqzv", FrequencyDict{}), (Tokens{"xqzv"}));
  EXPECT_TRUE(segment_hashtag("", d).empty());
}

TEST(SegmentHashtag, RankedDictionary) {
  std::istringstream in("the\nhurricane\nharvey\n");
  const auto d = load_frequency_dict(in);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_NEAR(*d.log_weight("harvey"), std::log(1.0 / 3.0), 1e-15);
  EXPECT_EQ(segment_hashtag("hurricaneharvey", d), (Tokens{"hurricane", "harvey"}));
}

TEST(SegmentHashtag, NeverSplitsInsideUtf8Characters) {
  const std::string body = "caf\xC3\xA9"
                           "harvey";
  const auto words = segment_hashtag(body, small_dict());
  std::string joined;
  for (const auto& w : words) {
    joined += w;
    EXPECT_TRUE(text::is_utf8_boundary(body, joined.size()));
  }
  EXPECT_EQ(joined, body);
  EXPECT_EQ(words.back(), "harvey");
}

// Exhaustive search over every split of strings up to 20 characters.
std::pair<double, Tokens> brute_force_segment(const std::string& body, const FrequencyDict& d) {
  const std::size_t n = body.size();
  double best = -std::numeric_limits<double>::infinity();
  Tokens best_words;
  for (std::uint64_t mask = 0; mask < (1ull << (n - 1)); ++mask) {
    Tokens words;
    std::size_t start = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (mask & (1ull << (i - 1))) {
        words.push_back(body.substr(start, i - start));
        start = i;
      }
    }
    words.push_back(body.substr(start));
    double s = 0.0;
    for (const auto& w : words) s += d.chunk_log_weight(w);
    if (s > best) {
      best = s;
      best_words = words;
    }
  }
  return {best, best_words};
}

TEST(SegmentHashtag, DynamicProgramMatchesExhaustiveSearch) {
  const auto d = small_dict();
  Rng rng(3);
  const Tokens pieces{"hurricane", "harvey", "boston", "bombing", "a", "in", "xq", "bomb", "g", "zz"};
  for (int trial = 0; trial < 60; ++trial) {
    std::string body;
    while (body.size() < 4 + rng.below(12)) body += pieces[rng.below(pieces.size())];
    if (body.size() > 20) body.resize(20);
    const auto dp = segment_hashtag(body, d);
    const auto [best, words] = brute_force_segment(body, d);
    EXPECT_NEAR(segmentation_log_weight(dp, d), best, 1e-9) << body;
    std::string joined;
    for (const auto& w : dp) joined += w;
    EXPECT_EQ(joined, body);
  }
}

TEST(FrequencyDictLoad, RejectsMixedAndBadCounts) {
  std::istringstream mixed("a\t3\nb\n");
  EXPECT_THROW(load_frequency_dict(mixed), MalformedInput);
  std::istringstream bad("a\t0\n");
  EXPECT_THROW(load_frequency_dict(bad), MalformedInput);
  std::istringstream junk("a\tx1\n");
  EXPECT_THROW(load_frequency_dict(junk), MalformedInput);
}

TEST(LexiconMatch, Examples) {
  EXPECT_EQ(lexicon_match({"hurricane", "sandy", "hits"}, Lexicon{"hurricane sandy", "hurricane"}),
            (SpanAnnotation{{0, 2}}));
  EXPECT_EQ(lexicon_match({"fire", "fire"}, Lexicon{"fire"}), (SpanAnnotation{{0, 1}, {1, 2}}));
  EXPECT_TRUE(lexicon_match({"calm", "day"}, Lexicon{"flood"}).empty());
  EXPECT_EQ(lexicon_match({"Red", "CROSS"}, Lexicon{"red cross"}), (SpanAnnotation{{0, 2}}));
}

TEST(LexiconLoad, RejectsTrigrams) {
  std::istringstream in("flood\nflash flood warning\n");
  try {
    load_lexicon(in);
    FAIL();
  } catch (const MalformedInput& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(Lexicon({"a b c"}), ContractViolation);
}

TEST(Annotate, Examples) {
  const auto d = small_dict();
  auto s = annotate({"1", "#BostonBombing suspect seen", {}}, Lexicon{}, d);
  EXPECT_EQ(s.tokens, (Tokens{"boston", "bombing", "suspect", "seen"}));
  EXPECT_EQ(tags_to_string(s.tags), "BEOO");

  s = annotate({"2", "calm day today", {}}, Lexicon{"flood"}, d);
  EXPECT_EQ(tags_to_string(s.tags), "OOO");

  s = annotate({"3", "flood in #Houston", {}}, Lexicon{"flood"}, d);
  EXPECT_EQ(s.tokens, (Tokens{"flood", "in", "houston"}));
  EXPECT_EQ(tags_to_string(s.tags), "SOS");
}

TEST(Annotate, HashtagWinsOverLexiconAndAuxIsExpanded) {
  // "harvey" would form a lexicon bigram with the hashtag's first word, but
  // hashtag words are excluded from lexicon matching.
  const auto s = annotate({"4", "harvey #HurricaneHarvey now", {"NNP", "HT", "RB"}},
                          Lexicon{"harvey hurricane", "harvey"}, small_dict());
  EXPECT_EQ(s.tokens, (Tokens{"harvey", "hurricane", "harvey", "now"}));
  EXPECT_EQ(tags_to_string(s.tags), "SBEO");
  EXPECT_EQ(s.aux, (Tokens{"NNP", "HT", "HT", "RB"}));
  EXPECT_TRUE(validate(s.tags).empty());
}

TEST(Annotate, MisalignedAuxIsContractViolation) {
  EXPECT_THROW(annotate({"5", "a b c", {"X"}}, Lexicon{}, FrequencyDict{}), ContractViolation);
}

TaggedSample sample_of_len(std::size_t n) {
  TaggedSample s;
  s.tokens.assign(n, "x");
  s.tags.assign(n, Tag::O);
  return s;
}

TEST(FilterCorpus, InclusiveBounds) {
  const auto kept = filter_corpus({sample_of_len(4), sample_of_len(5), sample_of_len(200),
                                   sample_of_len(201)});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].tokens.size(), 5u);
  EXPECT_EQ(kept[1].tokens.size(), 200u);
  EXPECT_EQ(filter_corpus(kept).size(), kept.size());  // idempotent
}

TEST(CorpusStats, Counts) {
  auto a = sample_of_len(3);
  a.tags = parse_tags("SOO");
  auto b = sample_of_len(6);
  b.tags = parse_tags("BESBES");
  auto st = corpus_stats({a, b});
  EXPECT_EQ(st.samples, 2u);
  EXPECT_EQ(st.keyphrases, 5u);
  EXPECT_DOUBLE_EQ(st.avg_keyphrases, 2.5);
  st = corpus_stats({});
  EXPECT_EQ(st.samples, 0u);
  EXPECT_EQ(st.avg_keyphrases, 0.0);
}

TEST(CorpusStats, TenSampleFixture) {
  // keyphrases per sample, counted by hand from the tag strings
  const std::vector<std::pair<std::string, std::size_t>> fixture{
      {"SOOOO", 1}, {"BEOOO", 1}, {"BIEOS", 2}, {"OOOOO", 0}, {"SSSOO", 3},
      {"OBEOS", 2}, {"BEBEO", 2}, {"OOOOS", 1}, {"BIIIE", 1}, {"SOBES", 3}};
  std::vector<TaggedSample> samples;
  std::size_t hand_total = 0;
  for (const auto& [tags, k] : fixture) {
    auto s = sample_of_len(5);
    s.tags = parse_tags(tags);
    samples.push_back(s);
    hand_total += k;
  }
  const auto st = corpus_stats(samples);
  EXPECT_EQ(st.keyphrases, 16u);
  EXPECT_EQ(st.keyphrases, hand_total);
  EXPECT_DOUBLE_EQ(st.avg_keyphrases, 1.6);
}

TEST(DataprepProperty, AnnotateAlwaysValid) {
  Rng rng(8);
  const Tokens vocab{"flood", "fire", "red", "cross", "#RedCross", "#Flood", "help",
                     "now", "#HurricaneHarvey", "harvey", "!", "@x"};
  const Lexicon lex{"flood", "red cross", "fire", "harvey"};
  const auto d = small_dict();
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) text += vocab[rng.below(vocab.size())] + " ";
    const auto s = annotate({"x", text, {}}, lex, d);
    EXPECT_TRUE(validate(s.tags).empty()) << text;
    EXPECT_EQ(s.tags.size(), s.tokens.size());
    const auto spans = lexicon_match(s.tokens, lex);
    EXPECT_NO_THROW(check_spans(s.tokens.size(), spans));
  }
}

}  // namespace
}  // namespace kpx
