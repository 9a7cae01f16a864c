#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "longppl/alignment.hpp"
#include "longppl/analysis.hpp"
#include "longppl/config.hpp"
#include "longppl/dump.hpp"
#include "longppl/error.hpp"
#include "longppl/longce.hpp"
#include "longppl/metrics.hpp"
#include "longppl/ngram.hpp"
#include "longppl/remote_scorer.hpp"
#include "longppl/scoring.hpp"
#include "longppl/synthetic.hpp"
#include "longppl/tiny_lm.hpp"

namespace longppl::cli {

namespace {

using nlohmann::json;

struct Options {
  std::string config;
  std::string corpus;
  std::string dump;
  std::string out;
  std::string table;
  std::string format;
  std::optional<std::uint64_t> seed;
};

AppConfig load_or_default(const Options& opts) {
  if (opts.config.empty()) return parse_config(json::object());
  return load_config(opts.config);
}

void write_output(const Options& opts, std::ostream& fallback, const std::function<void(std::ostream&)>& fn) {
  if (opts.out.empty()) {
    fn(fallback);
    return;
  }
  std::ofstream file(opts.out, std::ios::binary);
  if (!file) throw Error("cannot write " + opts.out);
  fn(file);
  if (!file) throw Error("failed writing " + opts.out);
}

// Applies fn to every item on a bounded pool; results keep input order.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, std::size_t workers, Fn fn) {
  using R = decltype(fn(items.front()));
  std::vector<std::optional<R>> slots(items.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, items.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        slots[i].emplace(fn(items[i]));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = items.size();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
  std::vector<R> out;
  out.reserve(items.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct ScorerHandle {
  std::unique_ptr<TinyLM> model;
  std::unique_ptr<Scorer> scorer;
};

ScorerHandle make_scorer(const AppConfig& cfg, const TokenizerSpec& tokenizer,
                         const std::vector<TokenizedDoc>& eval_docs) {
  ScorerHandle h;
  switch (cfg.scorer.kind) {
    case ScorerKind::ngram: {
      std::vector<TokenizedDoc> train_docs;
      if (cfg.scorer.train_corpus.empty()) {
        train_docs = eval_docs;
      } else {
        for (const auto& d : read_corpus(cfg.scorer.train_corpus)) train_docs.push_back(encode(d.text, tokenizer, d.doc_id));
      }
      h.scorer = std::make_unique<NgramScorer>(
          ngram_lm_train(train_docs, cfg.scorer.order, cfg.scorer.smoothing_k, tokenizer.vocab_size()));
      break;
    }
    case ScorerKind::remote: {
      const char* auth = std::getenv(kRemoteAuthEnv);
      h.scorer = remote_scorer(cfg.scorer.endpoint, cfg.scorer.model, auth ? auth : "");
      break;
    }
    case ScorerKind::tiny_lm:
      if (cfg.scorer.checkpoint.empty()) throw ConfigError("tiny_lm scorer needs scorer.checkpoint");
      h.model = std::make_unique<TinyLM>(load_checkpoint(cfg.scorer.checkpoint));
      h.scorer = std::make_unique<TinyLMScorer>(*h.model);
      break;
  }
  return h;
}

bool same_tokenization(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.tokens.size() != b.tokens.size()) return false;
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    if (a.tokens[i].span.start != b.tokens[i].span.start || a.tokens[i].span.end != b.tokens[i].span.end) {
      return false;
    }
  }
  return true;
}

json window_json(const AppConfig& cfg) {
  return {{"alpha", cfg.influence.alpha}, {"beta", cfg.influence.beta}, {"gamma", cfg.influence.gamma},
          {"K", cfg.window.K},           {"d", cfg.window.d}};
}

int cmd_eval(const Options& opts, std::ostream& out) {
  const auto cfg = load_or_default(opts);
  std::vector<ScoredDoc> evaluated;
  if (!opts.dump.empty()) {
    evaluated = read_dump(opts.dump);
  } else {
    if (opts.corpus.empty()) throw ConfigError("eval needs --corpus or --dump");
    auto corpus = read_corpus(opts.corpus);
    auto vocab_docs = corpus;
    if (cfg.scorer.kind == ScorerKind::ngram && !cfg.scorer.train_corpus.empty()) {
      for (auto& d : read_corpus(cfg.scorer.train_corpus)) vocab_docs.push_back(std::move(d));
    }
    const auto tokenizer = build_tokenizer(cfg.tokenizer, vocab_docs);
    std::vector<TokenizedDoc> docs;
    for (const auto& d : corpus) docs.push_back(encode(d.text, tokenizer, d.doc_id));
    const auto handle = make_scorer(cfg, tokenizer, docs);
    evaluated = parallel_map(docs, cfg.workers,
                             [&](const TokenizedDoc& d) { return score_doc(d, *handle.scorer, cfg.window); });
  }
  if (evaluated.empty()) throw ContractError("no documents to evaluate");
  std::stable_sort(evaluated.begin(), evaluated.end(),
                   [](const ScoredDoc& a, const ScoredDoc& b) { return a.doc_id < b.doc_id; });

  std::map<std::string, ScoredDoc> evaluators;
  if (cfg.evaluator_dump) {
    for (auto& d : read_dump(*cfg.evaluator_dump)) evaluators.emplace(d.doc_id, std::move(d));
  }
  std::vector<KeyTokenMask> masks;
  std::vector<std::vector<double>> soft;
  for (const auto& doc : evaluated) {
    if (!cfg.evaluator_dump) {
      masks.push_back(select_key_tokens(doc, cfg.influence));
      soft.push_back(soft_influence_weights(doc, cfg.influence));
      continue;
    }
    const auto it = evaluators.find(doc.doc_id);
    if (it == evaluators.end()) throw ContractError("evaluator dump has no document '" + doc.doc_id + "'");
    const auto mask = select_key_tokens(it->second, cfg.influence);
    const auto weights = soft_influence_weights(it->second, cfg.influence);
    if (same_tokenization(it->second, doc)) {
      masks.push_back(mask);
      soft.push_back(weights);
    } else {
      const auto evaluator_doc = it->second.tokenized();
      const auto evaluated_doc = doc.tokenized();
      masks.push_back(project_key_tokens_hard(evaluator_doc, mask, evaluated_doc));
      soft.push_back(project_weights_soft(evaluator_doc, weights, evaluated_doc));
    }
  }

  json docs = json::array();
  for (std::size_t i = 0; i < evaluated.size(); ++i) docs.push_back(summarize(evaluated[i], masks[i], soft[i]));
  const json report = {{"config", window_json(cfg)},
                       {"corpus", summarize_corpus(evaluated, masks, soft)},
                       {"documents", docs}};
  write_output(opts, out, [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  return kExitOk;
}

int cmd_select(const Options& opts, std::ostream& out) {
  const auto cfg = load_or_default(opts);
  const auto docs = read_dump(opts.dump);
  std::vector<std::vector<TokenDiagnostics>> diagnostics;
  for (const auto& doc : docs) {
    const auto mask = select_key_tokens(doc, cfg.influence);
    auto& diag = diagnostics.emplace_back();
    for (std::size_t i = 0; i < doc.records.size(); ++i) {
      const auto& r = doc.records[i];
      diag.push_back({compute_lpg(r), compute_lpv(r), static_cast<bool>(mask.flags[i]),
                      compute_soft_influence(r, cfg.influence)});
    }
  }
  write_output(opts, out, [&](std::ostream& o) { write_dump(docs, o, diagnostics); });
  return kExitOk;
}

int cmd_synth(const Options& opts, std::ostream& out) {
  const auto cfg = load_or_default(opts);
  auto task = cfg.synth.task;
  if (opts.seed) task.seed = *opts.seed;
  const auto tokenizer = cfg.tokenizer.kind == TokenizerKind::whitespace ? lines_task_tokenizer(task)
                                                                        : build_tokenizer(cfg.tokenizer, {});
  const auto docs = generate_lines_corpus(task, cfg.synth.n_docs, tokenizer, cfg.synth.target_line_limit);
  write_output(opts, out, [&](std::ostream& o) { write_tasks_jsonl(docs, o); });
  return kExitOk;
}

std::vector<TrainingExample> to_examples(const std::vector<LabeledDoc>& docs) {
  std::vector<TrainingExample> out;
  for (const auto& d : docs) out.push_back({d.doc.ids(), d.answer_token_indices});
  return out;
}

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
  const auto cfg = load_or_default(opts);
  auto section = cfg.train;
  if (opts.seed) {
    section.model.seed = *opts.seed;
    section.train.seed = *opts.seed;
    section.task.seed = *opts.seed;
  }
  const auto tokenizer = lines_task_tokenizer(section.task);
  std::optional<TinyLM> init;
  if (!section.init_checkpoint.empty()) {
    init = load_checkpoint(section.init_checkpoint);
    section.model = init->config();
    if (section.model.vocab_size != tokenizer.vocab_size()) {
      throw ConfigError("init_checkpoint vocab_size " + std::to_string(section.model.vocab_size) +
                        " does not match the task vocabulary of " + std::to_string(tokenizer.vocab_size()));
    }
  } else {
    section.model.vocab_size = tokenizer.vocab_size();
  }
  section.train.validate(section.model);

  const auto train_docs =
      generate_lines_corpus(section.task, section.n_train_docs, tokenizer, section.target_line_limit, "train-");
  auto eval_task = section.task;
  eval_task.seed += 1'000'000;
  const auto eval_docs =
      generate_lines_corpus(eval_task, section.n_eval_docs, tokenizer, section.target_line_limit, "eval-");
  const auto train_examples = to_examples(train_docs);
  const auto eval_examples = to_examples(eval_docs);

  const auto result = train(init ? *init : TinyLM(section.model), train_examples, section.train);
  write_output(opts, out, [&](std::ostream& o) { write_train_log(result.log, o); });
  if (!section.checkpoint_out.empty()) save_checkpoint(result.model, section.checkpoint_out);

  json summary = {{"loss_kind", to_string(section.train.loss_kind)},
                  {"steps", section.train.steps},
                  {"parameter_count", result.model.parameters().size()}};
  if (!eval_examples.empty()) summary["eval_answer_nll"] = answer_nll(result.model, eval_examples);
  err << summary.dump() << '\n';
  return kExitOk;
}

int cmd_correlate(const Options& opts, std::ostream& out) {
  const json report = correlate(load_score_table(opts.table));
  write_output(opts, out, [&](std::ostream& o) { o << report.dump(2) << '\n'; });
  return kExitOk;
}

void append_escaped_attr(std::string& s, const std::string& v) {
  for (char c : v) {
    if (c == '&') s += "&amp;";
    else if (c == '"') s += "&quot;";
    else if (c == '<') s += "&lt;";
    else s += c;
  }
}

int cmd_annotate(const Options& opts, std::ostream& out) {
  const auto cfg = load_or_default(opts);
  const auto format = annotate_format_from_string(opts.format.empty() ? "ansi" : opts.format);
  const auto docs = read_dump(opts.dump);
  std::string text;
  for (const auto& doc : docs) {
    const auto mask = select_key_tokens(doc, cfg.influence);
    const auto rendered = render(annotate(doc.tokenized(), mask, doc.records), format);
    if (format == AnnotateFormat::ansi) {
      text += "# " + doc.doc_id + "\n" + rendered + "\n";
    } else {
      text += "<section data-doc-id=\"";
      append_escaped_attr(text, doc.doc_id);
      text += "\">\n" + rendered + "</section>\n";
    }
  }
  write_output(opts, out, [&](std::ostream& o) { o << text; });
  return kExitOk;
}

int cmd_dump_validate(const Options& opts, std::ostream& out) {
  const auto docs = read_dump(opts.dump);
  std::size_t tokens = 0;
  for (const auto& d : docs) {
    d.check_invariants();
    tokens += d.records.size();
  }
  const json summary = {{"valid", true}, {"documents", docs.size()}, {"tokens", tokens}};
  write_output(opts, out, [&](std::ostream& o) { o << summary.dump() << '\n'; });
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long-context perplexity toolkit"};
  app.require_subcommand(1);
  Options opts;

  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", opts.config, "JSON config file"); };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", opts.out, "output path (default: stdout)"); };
  auto add_dump = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--dump", opts.dump, "per-token score dump (JSONL)");
    if (required) o->required();
  };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", opts.seed, "overrides the configured seed"); };

  auto* eval = app.add_subcommand("eval", "PPL, LongPPL and LongPPL-soft for a corpus or dump");
  add_config(eval);
  eval->add_option("--corpus", opts.corpus, "JSONL of {\"doc_id\", \"text\"}");
  add_dump(eval, false);
  add_out(eval);
  eval->add_option("--format", opts.format, "report format")->check(CLI::IsMember({"json"}));
  eval->add_option("--seed", opts.seed, "unused; accepted for uniformity");

  auto* select = app.add_subcommand("select", "append key-token diagnostics to a dump");
  add_config(select);
  add_dump(select, true);
  add_out(select);

  auto* synth = app.add_subcommand("synth", "generate lines-retrieval tasks");
  add_config(synth);
  add_seed(synth);
  add_out(synth);

  auto* trainer = app.add_subcommand("train", "train the tiny LM with CE or LongCE");
  add_config(trainer);
  add_seed(trainer);
  add_out(trainer);

  auto* corr = app.add_subcommand("correlate", "Pearson correlation of a metric against benchmark scores");
  corr->add_option("--table", opts.table, "score table JSON")->required();
  add_out(corr);
  corr->add_option("--format", opts.format, "report format")->check(CLI::IsMember({"json"}));

  auto* annot = app.add_subcommand("annotate", "highlight key tokens");
  add_config(annot);
  add_dump(annot, true);
  add_out(annot);
  annot->add_option("--format", opts.format, "ansi or html")->check(CLI::IsMember({"ansi", "html"}));

  auto* validate = app.add_subcommand("dump-validate", "check a dump against its schema");
  add_dump(validate, true);
  add_out(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "longppl: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (eval->parsed()) return cmd_eval(opts, out);
    if (select->parsed()) return cmd_select(opts, out);
    if (synth->parsed()) return cmd_synth(opts, out);
    if (trainer->parsed()) return cmd_train(opts, out, err);
    if (corr->parsed()) return cmd_correlate(opts, out);
    if (annot->parsed()) return cmd_annotate(opts, out);
    if (validate->parsed()) return cmd_dump_validate(opts, out);
  } catch (const ConfigError& e) {
    err << "longppl: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "longppl: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace longppl::cli
