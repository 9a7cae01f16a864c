#include "longppl/config.hpp"

#include <fstream>
#include <set>

#include "longppl/error.hpp"

namespace longppl {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

std::filesystem::path resolve(const json& j, const char* key, const std::filesystem::path& base) {
  if (!j.contains(key)) return {};
  std::filesystem::path p = j.at(key).get<std::string>();
  return p.is_relative() && !base.empty() ? base / p : p;
}

LinesTaskSpec parse_task(const json& j, LinesTaskSpec t, const std::string& section) {
  check_keys(j, {"n_lines", "value_digits", "target_line", "seed", "filler_vocab", "n_hard_lines"}, section);
  t.n_lines = j.value("n_lines", t.n_lines);
  t.value_digits = j.value("value_digits", t.value_digits);
  t.target_line = j.value("target_line", t.target_line);
  t.seed = j.value("seed", t.seed);
  if (j.contains("filler_vocab")) t.filler_vocab = j.at("filler_vocab").get<std::vector<std::string>>();
  t.n_hard_lines = j.value("n_hard_lines", t.n_hard_lines);
  return t;
}

}  // namespace

void AppConfig::validate() const {
  window.validate();
  influence.validate();
  if (scorer.order < 1) throw ConfigError("scorer.order must be >= 1");
  if (!(scorer.smoothing_k > 0.0)) throw ConfigError("scorer.smoothing_k must be > 0");
  if (tokenizer.kind == TokenizerKind::bpe && (tokenizer.vocab_file.empty() || tokenizer.merges_file.empty())) {
    throw ConfigError("bpe tokenizer needs vocab_file and merges_file");
  }
  train.model.validate();
  train.train.validate(train.model);
  synth.task.validate();
}

AppConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  AppConfig c;
  try {
    check_keys(j, {"tokenizer", "scorer", "window", "influence", "train", "synth", "evaluator_dump", "workers"},
               "top level");
    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      check_keys(t, {"kind", "vocab_file", "merges_file"}, "tokenizer");
      if (t.contains("kind")) c.tokenizer.kind = tokenizer_kind_from_string(t.at("kind").get<std::string>());
      c.tokenizer.vocab_file = resolve(t, "vocab_file", base_dir);
      c.tokenizer.merges_file = resolve(t, "merges_file", base_dir);
    }
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      check_keys(s, {"kind", "order", "smoothing_k", "train_corpus", "endpoint", "model", "checkpoint"}, "scorer");
      if (s.contains("kind")) {
        const auto kind = s.at("kind").get<std::string>();
        if (kind == "ngram") c.scorer.kind = ScorerKind::ngram;
        else if (kind == "remote") c.scorer.kind = ScorerKind::remote;
        else if (kind == "tiny_lm") c.scorer.kind = ScorerKind::tiny_lm;
        else throw ConfigError("unknown scorer kind '" + kind + "'");
      }
      c.scorer.order = s.value("order", c.scorer.order);
      c.scorer.smoothing_k = s.value("smoothing_k", c.scorer.smoothing_k);
      c.scorer.train_corpus = resolve(s, "train_corpus", base_dir);
      c.scorer.endpoint = s.value("endpoint", c.scorer.endpoint);
      c.scorer.model = s.value("model", c.scorer.model);
      c.scorer.checkpoint = resolve(s, "checkpoint", base_dir);
    }
    if (j.contains("window")) {
      const auto& w = j.at("window");
      check_keys(w, {"K", "d"}, "window");
      c.window.K = w.value("K", c.window.K);
      c.window.d = w.value("d", c.window.d);
    }
    if (j.contains("influence")) {
      const auto& i = j.at("influence");
      check_keys(i, {"alpha", "beta", "gamma"}, "influence");
      c.influence.alpha = i.value("alpha", c.influence.alpha);
      c.influence.beta = i.value("beta", c.influence.beta);
      c.influence.gamma = i.value("gamma", c.influence.gamma);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t,
                 {"model", "optimizer", "task", "n_train_docs", "n_eval_docs", "target_line_limit",
                  "checkpoint_out", "init_checkpoint"},
                 "train");
      if (t.contains("model")) {
        check_keys(t.at("model"),
                   {"vocab_size", "context_window", "embedding_dim", "hidden_dim", "conv_width", "n_heads", "seed"},
                   "train.model");
        c.train.model = t.at("model").get<TinyLMConfig>();
      }
      if (t.contains("optimizer")) {
        check_keys(t.at("optimizer"),
                   {"loss_kind", "learning_rate", "momentum", "grad_clip", "steps", "batch_size", "K_short", "d",
                    "gamma", "normalization", "seed"},
                   "train.optimizer");
        c.train.train = t.at("optimizer").get<TrainConfig>();
      }
      if (t.contains("task")) c.train.task = parse_task(t.at("task"), c.train.task, "train.task");
      c.train.n_train_docs = t.value("n_train_docs", c.train.n_train_docs);
      c.train.n_eval_docs = t.value("n_eval_docs", c.train.n_eval_docs);
      c.train.target_line_limit = t.value("target_line_limit", c.train.target_line_limit);
      c.train.checkpoint_out = resolve(t, "checkpoint_out", base_dir);
      c.train.init_checkpoint = resolve(t, "init_checkpoint", base_dir);
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      check_keys(s, {"task", "n_docs", "target_line_limit"}, "synth");
      if (s.contains("task")) c.synth.task = parse_task(s.at("task"), c.synth.task, "synth.task");
      c.synth.n_docs = s.value("n_docs", c.synth.n_docs);
      c.synth.target_line_limit = s.value("target_line_limit", c.synth.target_line_limit);
    }
    if (j.contains("evaluator_dump")) c.evaluator_dump = resolve(j, "evaluator_dump", base_dir);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

std::vector<CorpusDoc> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus " + path.string());
  std::vector<CorpusDoc> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      CorpusDoc doc{j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()};
      if (!seen.insert(doc.doc_id).second) throw ParseError(line_no, "duplicate doc_id '" + doc.doc_id + "'");
      out.push_back(std::move(doc));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad corpus line: ") + e.what());
    }
  }
  return out;
}

TokenizerSpec build_tokenizer(const TokenizerConfig& cfg, std::span<const CorpusDoc> corpus) {
  switch (cfg.kind) {
    case TokenizerKind::byte_level:
      return TokenizerSpec::byte_level();
    case TokenizerKind::bpe:
      return load_bpe(cfg.vocab_file, cfg.merges_file);
    case TokenizerKind::whitespace: {
      std::vector<std::string> texts;
      for (const auto& d : corpus) texts.push_back(d.text);
      return TokenizerSpec::whitespace_from_corpus(texts);
    }
  }
  throw ConfigError("unknown tokenizer kind");
}

}  // namespace longppl
