#pragma once

// Command-line surface: prepare, segment, train, tag, eval-exact, eval-embed,
// report.
//
// Exit status: 0 success, 1 contract violation (or numeric failure),
// 2 malformed input or usage error. Diagnostics go to `err`; results go to
// files or `out`.
//
// Every subcommand accepts `--config FILE`, a flat `key = value` file whose
// keys are long option names without dashes. Flags given on the command line
// override config values.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kpx/bioes.hpp"
#include "kpx/checkpoint.hpp"
#include "kpx/dataprep.hpp"
#include "kpx/embed.hpp"
#include "kpx/error.hpp"
#include "kpx/io.hpp"
#include "kpx/metrics.hpp"
#include "kpx/model.hpp"
#include "kpx/report.hpp"
#include "kpx/text.hpp"

namespace kpx::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitMalformed = 2;

namespace detail {

// Reads `key = value` lines; '#' starts a comment line.
inline std::vector<std::pair<std::string, std::string>> read_flat_config(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw MalformedInput("expected key = value", lineno);
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw MalformedInput("empty key", lineno);
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

// Splices config entries in right after the subcommand name so that the
// command-line occurrences (parsed later, last one wins) take precedence.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path || rest.empty()) return rest;
  std::vector<std::string> injected;
  for (auto& [k, v] : read_flat_config(*path)) {
    injected.push_back("--" + k);
    injected.push_back(v);
  }
  rest.insert(rest.begin() + 1, injected.begin(), injected.end());
  return rest;
}

class OutputTarget {
 public:
  OutputTarget(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw std::runtime_error("cannot write " + path);
      stream_ = file_.get();
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

inline std::vector<TaggedSample> read_samples_file(const std::string& path,
                                                   bool require_tags = true) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open " + path);
  return io::read_samples(in, require_tags);
}

// Pairs gold and predicted samples by id, in gold order.
inline std::vector<EvalSample> align(const std::vector<TaggedSample>& gold,
                                     const std::vector<TaggedSample>& pred) {
  std::map<std::string, const TaggedSample*> by_id;
  for (const auto& p : pred) {
    if (!by_id.emplace(p.id, &p).second) {
      throw ContractViolation("duplicate prediction id '" + p.id + "'");
    }
  }
  if (pred.size() != gold.size()) {
    throw ContractViolation("gold has " + std::to_string(gold.size()) +
                            " samples, predictions " + std::to_string(pred.size()));
  }
  std::vector<EvalSample> out;
  out.reserve(gold.size());
  for (const auto& g : gold) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw ContractViolation("no prediction for id '" + g.id + "'");
    EvalSample s;
    s.id = g.id;
    s.tokens = g.tokens;
    s.gold = g.tags;
    s.pred = it->second->tags;
    if (it->second->tokens != g.tokens) s.pred_tokens = it->second->tokens;
    out.push_back(std::move(s));
  }
  return out;
}

inline json prf_json(const PrfReport& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"tp", r.tp},               {"fp", r.fp},         {"fn", r.fn}};
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies

struct PrepareArgs {
  std::string input, lexicon, freq, output;
};

inline int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  const auto tweets = io::read_file<std::vector<RawTweet>>(
      a.input, [](std::istream& in) { return io::read_tweets(in); });
  const auto lex = load_lexicon_file(a.lexicon);
  const auto dict = load_frequency_dict_file(a.freq);
  std::vector<TaggedSample> samples;
  samples.reserve(tweets.size());
  for (const auto& t : tweets) samples.push_back(annotate(t, lex, dict));
  const auto kept = filter_corpus(samples);
  const auto st = corpus_stats(kept);
  err << "prepare: " << tweets.size() << " tweets read, " << kept.size()
      << " kept, " << (tweets.size() - kept.size()) << " filtered (token count outside "
      << kMinTokens << ".." << kMaxTokens << ")\n";
  err << "prepare: " << st.keyphrases << " keyphrases, "
      << detail::fmt(st.avg_keyphrases) << " per sample\n";
  detail::OutputTarget target(a.output, out);
  io::write_samples(target.get(), kept);
  return kExitOk;
}

struct SegmentArgs {
  std::string freq, input;
  std::vector<std::string> hashtags;
};

inline int cmd_segment(const SegmentArgs& a, std::ostream& out, std::ostream&) {
  const auto dict = load_frequency_dict_file(a.freq);
  std::vector<std::string> tags = a.hashtags;
  if (!a.input.empty()) {
    std::ifstream in(a.input);
    if (!in) throw MalformedInput("cannot open " + a.input);
    std::string line;
    while (std::getline(in, line)) {
      for (auto& w : text::split_ws(line)) tags.push_back(w);
    }
  }
  for (const auto& tag : tags) {
    std::string body = tag;
    if (!body.empty() && body[0] == '#') body.erase(0, 1);
    const auto words = segment_hashtag(text::lower(body), dict);
    out << tag << '\t' << text::join(words, 0, words.size()) << '\n';
  }
  return kExitOk;
}

struct TrainArgs {
  std::string train, checkpoint, embeddings, history;
  model::TrainConfig config;
};

inline int cmd_train(const TrainArgs& a, std::ostream&, std::ostream& err) {
  const auto corpus = detail::read_samples_file(a.train);
  std::optional<EmbeddingTable> table;
  if (!a.embeddings.empty()) table = load_embeddings_file(a.embeddings);
  const auto result = model::train(corpus, a.config, table ? &*table : nullptr);
  json hist = json::array();
  for (const auto& r : result.history) {
    err << "epoch " << r.epoch << ": loss " << detail::fmt(r.eval.total)
        << " (keyword " << detail::fmt(r.eval.keyword) << ", bioes "
        << detail::fmt(r.eval.bioes) << ")\n";
    hist.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train.total},
                    {"train_keyword_loss", r.train.keyword},
                    {"train_bioes_loss", r.train.bioes},
                    {"loss", r.eval.total},
                    {"keyword_loss", r.eval.keyword},
                    {"bioes_loss", r.eval.bioes}});
  }
  model::save_checkpoint_file(result.tagger, a.checkpoint);
  if (!a.history.empty()) {
    std::ofstream h(a.history, std::ios::binary);
    if (!h) throw std::runtime_error("cannot write " + a.history);
    h << hist.dump(2) << '\n';
  }
  return kExitOk;
}

struct TagArgs {
  std::string checkpoint, input, output;
};

inline int cmd_tag(const TagArgs& a, std::ostream& out, std::ostream&) {
  const auto tagger = model::load_checkpoint_file(a.checkpoint);
  auto samples = detail::read_samples_file(a.input, false);
  for (auto& s : samples) s.tags = tagger.predict_tags(s.tokens, s.aux);
  detail::OutputTarget target(a.output, out);
  io::write_samples(target.get(), samples);
  return kExitOk;
}

struct EvalExactArgs {
  std::string gold, pred, output;
};

inline int cmd_eval_exact(const EvalExactArgs& a, std::ostream& out, std::ostream&) {
  const auto samples = detail::align(detail::read_samples_file(a.gold),
                                     detail::read_samples_file(a.pred));
  std::vector<std::vector<Tag>> gold, pred;
  double set_sum = 0.0;
  for (const auto& s : samples) {
    gold.push_back(s.gold);
    pred.push_back(s.pred);
    const auto& ptoks = s.pred_tokens.empty() ? s.tokens : s.pred_tokens;
    set_sum += set_f1(keyphrase_set(s.tokens, s.gold), keyphrase_set(ptoks, s.pred)).f1;
  }
  json j;
  j["samples"] = samples.size();
  j["micro"] = detail::prf_json(exact_match_prf(gold, pred));
  j["macro"] = detail::prf_json(exact_match_macro_prf(gold, pred));
  j["set_f1"] = samples.empty() ? 0.0 : set_sum / static_cast<double>(samples.size());
  detail::OutputTarget target(a.output, out);
  target.get() << j.dump(2) << '\n';
  return kExitOk;
}

struct EvalEmbedArgs {
  std::string gold, pred, embeddings, output, variant = "extended";
  MetricConfig config;
};

inline int cmd_eval_embed(const EvalEmbedArgs& a, std::ostream& out, std::ostream&) {
  MetricConfig cfg = a.config;
  const auto v = parse_variant(a.variant);
  if (!v) throw ContractViolation("unknown metric variant '" + a.variant + "'");
  cfg.variant = *v;
  cfg.check();
  const auto table = load_embeddings_file(a.embeddings);
  const auto samples = detail::align(detail::read_samples_file(a.gold),
                                     detail::read_samples_file(a.pred));
  const auto report = corpus_eval(samples, table, cfg);
  json j;
  j["config"] = {{"alpha", cfg.alpha},
                 {"beta", cfg.beta},
                 {"theta", cfg.theta},
                 {"variant", std::string(to_string(cfg.variant))},
                 {"embedding_dim", table.dim()}};
  j["corpus_score"] = report.corpus_score;
  json per = json::array();
  for (const auto& [id, s] : report.per_sample) per.push_back({{"id", id}, {"score", s}});
  j["samples"] = per;
  detail::OutputTarget target(a.output, out);
  target.get() << j.dump(2) << '\n';
  return kExitOk;
}

struct ReportArgs {
  std::string input, output;
  std::size_t top = 100;
};

inline int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const auto samples = detail::read_samples_file(a.input);
  const auto st = corpus_stats(samples);
  err << "report: " << st.samples << " samples, " << st.keyphrases
      << " keyphrases, " << detail::fmt(st.avg_keyphrases) << " per sample\n";
  detail::OutputTarget target(a.output, out);
  for (const auto& [phrase, count] : report_topk(samples, a.top)) {
    target.get() << phrase << '\t' << count << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_command(const std::vector<std::string>& raw_args, std::ostream& out,
                       std::ostream& err) {
  CLI::App app{"Keyphrase extraction and evaluation toolkit", "kpx"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  PrepareArgs prep;
  auto* sp = app.add_subcommand("prepare", "annotate raw tweets with BIOES keyphrase tags");
  sp->add_option("--input", prep.input, "tweets, JSON Lines")->required()->check(CLI::ExistingFile);
  sp->add_option("--lexicon", prep.lexicon, "crisis lexicon, one phrase per line")->required()->check(CLI::ExistingFile);
  sp->add_option("--freq", prep.freq, "word frequency dictionary")->required()->check(CLI::ExistingFile);
  sp->add_option("--output", prep.output, "output samples (default stdout)");

  SegmentArgs seg;
  auto* ss = app.add_subcommand("segment", "split hashtags into words");
  ss->add_option("--freq", seg.freq, "word frequency dictionary")->required()->check(CLI::ExistingFile);
  ss->add_option("--input", seg.input, "file of hashtags")->check(CLI::ExistingFile);
  ss->add_option("hashtags", seg.hashtags, "hashtags to segment");

  TrainArgs tr;
  auto* st = app.add_subcommand("train", "train the joint-layer BiLSTM tagger");
  st->add_option("--train", tr.train, "training samples, JSON Lines")->required()->check(CLI::ExistingFile);
  st->add_option("--checkpoint", tr.checkpoint, "checkpoint to write")->required();
  st->add_option("--embeddings", tr.embeddings, "pretrained word vectors")->check(CLI::ExistingFile);
  st->add_option("--history", tr.history, "write per-epoch losses as JSON");
  st->add_option("--hidden", tr.config.hidden, "LSTM hidden units")->capture_default_str();
  st->add_option("--embed-dim", tr.config.embed_dim, "word embedding dimension")->capture_default_str();
  st->add_option("--aux-dim", tr.config.aux_dim, "aux symbol embedding dimension")->capture_default_str();
  st->add_option("--gamma", tr.config.gamma, "keyword-loss weight")->capture_default_str();
  st->add_option("--dropout", tr.config.dropout, "dropout rate")->capture_default_str();
  st->add_option("--lr", tr.config.learning_rate, "learning rate")->capture_default_str();
  st->add_option("--epochs", tr.config.epochs)->capture_default_str();
  st->add_option("--batch-size", tr.config.batch_size)->capture_default_str();
  st->add_option("--seed", tr.config.seed)->capture_default_str();

  TagArgs tg;
  auto* stg = app.add_subcommand("tag", "predict BIOES tags with a trained model");
  stg->add_option("--checkpoint", tg.checkpoint)->required()->check(CLI::ExistingFile);
  stg->add_option("--input", tg.input, "samples with tokens, JSON Lines")->required()->check(CLI::ExistingFile);
  stg->add_option("--output", tg.output, "predictions (default stdout)");

  EvalExactArgs ee;
  auto* se = app.add_subcommand("eval-exact", "exact-match span P/R/F1 and set F1");
  se->add_option("--gold", ee.gold)->required()->check(CLI::ExistingFile);
  se->add_option("--pred", ee.pred)->required()->check(CLI::ExistingFile);
  se->add_option("--output", ee.output, "report (default stdout)");

  EvalEmbedArgs eb;
  auto* sb = app.add_subcommand("eval-embed", "embedding-based keyphrase set scores");
  sb->add_option("--gold", eb.gold)->required()->check(CLI::ExistingFile);
  sb->add_option("--pred", eb.pred)->required()->check(CLI::ExistingFile);
  sb->add_option("--embeddings", eb.embeddings)->required()->check(CLI::ExistingFile);
  sb->add_option("--alpha", eb.config.alpha)->capture_default_str();
  sb->add_option("--beta", eb.config.beta)->capture_default_str();
  sb->add_option("--theta", eb.config.theta)->capture_default_str();
  sb->add_option("--variant", eb.variant,
                 "greedy | symmetric-greedy | extended | average | extrema | optimal")
      ->capture_default_str();
  sb->add_option("--output", eb.output, "report (default stdout)");

  ReportArgs rp;
  auto* sr = app.add_subcommand("report", "most frequent gold keyphrases");
  sr->add_option("--input", rp.input)->required()->check(CLI::ExistingFile);
  sr->add_option("--top", rp.top)->capture_default_str()->check(CLI::PositiveNumber);
  sr->add_option("--output", rp.output, "table (default stdout)");

  for (auto* sub : app.get_subcommands({})) {
    sub->add_option("--config", "flat key = value file; flags override it");
  }

  try {
    auto args = detail::expand_config(raw_args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitMalformed;
  } catch (const MalformedInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitMalformed;
  }

  try {
    if (*sp) return cmd_prepare(prep, out, err);
    if (*ss) return cmd_segment(seg, out, err);
    if (*st) return cmd_train(tr, out, err);
    if (*stg) return cmd_tag(tg, out, err);
    if (*se) return cmd_eval_exact(ee, out, err);
    if (*sb) return cmd_eval_embed(eb, out, err);
    if (*sr) return cmd_report(rp, out, err);
  } catch (const MalformedInput& e) {
    err << "malformed input: " << e.what() << '\n';
    return kExitMalformed;
  } catch (const ContractViolation& e) {
    err << "contract violation: " << e.what() << '\n';
    return kExitContract;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  }
  err << app.help();
  return kExitMalformed;
}

}  // namespace kpx::cli
