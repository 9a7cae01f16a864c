#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "longppl/longce.hpp"
#include "longppl/metrics.hpp"
#include "longppl/scoring.hpp"
#include "longppl/synthetic.hpp"
#include "longppl/tiny_lm.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

struct TokenizerConfig {
  TokenizerKind kind = TokenizerKind::byte_level;
  std::filesystem::path vocab_file;   // bpe
  std::filesystem::path merges_file;  // bpe
};

enum class ScorerKind { ngram, remote, tiny_lm };

struct ScorerConfig {
  ScorerKind kind = ScorerKind::ngram;
  // ngram: trained on train_corpus, or on the evaluated corpus when empty.
  std::size_t order = 3;
  double smoothing_k = 0.1;
  std::filesystem::path train_corpus;
  // remote; the bearer token comes from the environment.
  std::string endpoint;
  std::string model;
  // tiny_lm
  std::filesystem::path checkpoint;
};

struct SynthConfig {
  LinesTaskSpec task;
  std::size_t n_docs = 10;
  std::size_t target_line_limit = 0;
};

struct TrainSection {
  TinyLMConfig model;
  TrainConfig train;
  LinesTaskSpec task;            // training documents
  std::size_t n_train_docs = 200;
  std::size_t n_eval_docs = 50;
  std::size_t target_line_limit = 0;
  std::filesystem::path checkpoint_out;
  std::filesystem::path init_checkpoint;  // continue from this model instead of a fresh init
};

// One JSON document with optional sections
//   {"tokenizer", "scorer", "window", "influence", "train", "synth",
//    "evaluator_dump", "workers"}.
// Relative paths resolve against the config file's directory.
struct AppConfig {
  TokenizerConfig tokenizer;
  ScorerConfig scorer;
  WindowConfig window;
  InfluenceConfig influence;
  TrainSection train;
  SynthConfig synth;
  std::optional<std::filesystem::path> evaluator_dump;
  std::size_t workers = 0;  // 0: hardware concurrency

  void validate() const;
};

AppConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
// Missing file or invalid JSON raise ConfigError.
AppConfig load_config(const std::filesystem::path& path);

struct CorpusDoc {
  std::string doc_id;
  std::string text;
};

// JSONL of {"doc_id", "text"}; doc ids must be unique.
std::vector<CorpusDoc> read_corpus(const std::filesystem::path& path);

TokenizerSpec build_tokenizer(const TokenizerConfig& cfg, std::span<const CorpusDoc> corpus);

}  // namespace longppl
