#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "longppl/tokenizer.hpp"

namespace longppl {

// Per-token log-probabilities (nats) under the full prefix and under the
// truncated short context.
struct TokenScoreRecord {
  std::size_t token_index = 0;
  double logp_long = 0.0;
  double logp_short = 0.0;
  std::size_t short_ctx_len = 0;

  friend bool operator==(const TokenScoreRecord&, const TokenScoreRecord&) = default;
};

// Scores for one document. `tokens` carries text and spans so a dump read
// back from disk can still be aligned against another tokenization.
struct ScoredDoc {
  std::string doc_id;
  std::vector<Token> tokens;
  std::vector<TokenScoreRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  std::vector<double> logp_long() const;
  std::vector<double> logp_short() const;
  TokenizedDoc tokenized() const;

  // Throws ContractError on any TokenScoreRecord / ScoredDoc invariant violation.
  void check_invariants() const;
};

struct WindowConfig {
  std::size_t K = 4096;  // short-context length in tokens
  std::size_t d = 1024;  // sliding-window step in tokens

  void validate() const;  // 1 <= d <= K, else ConfigError
};

// A conditional next-token model. Implementations must be safe for
// concurrent const calls, or document that they serialize internally.
class Scorer {
 public:
  virtual ~Scorer() = default;

  // log P(target | context) in nats. An empty context asks for the
  // unconditional distribution.
  virtual double logprob(std::span<const TokenId> context, TokenId target) const = 0;

  // Batched form: entry j is log P(seq[j] | seq[0..j)), entry 0 unconditional.
  // `doc_offset` is the index of seq[0] in the document being scored; models
  // that only look at token ids ignore it. The default calls logprob per
  // position.
  virtual std::vector<double> score_sequence(std::span<const TokenId> seq,
                                             std::size_t doc_offset) const;

  // Entries [from, seq.size()) of score_sequence. Models that can skip the
  // output layer for the leading positions override this.
  virtual std::vector<double> score_suffix(std::span<const TokenId> seq, std::size_t doc_offset,
                                           std::size_t from) const;
};

// Entry i is log P(x_i | x_0..x_{i-1}).
std::vector<double> score_long(std::span<const TokenId> tokens, const Scorer& scorer);
std::vector<double> score_long(const TokenizedDoc& doc, const Scorer& scorer);

struct ShortScore {
  double logp = 0.0;
  std::size_t ctx_len = 0;
};

// First token of the short context used for token `index` under the block
// rule: blocks of d tokens starting at multiples of d; a block starting at
// b >= K uses context start b - K, earlier blocks use the full prefix.
std::size_t short_context_start(std::size_t index, const WindowConfig& cfg);

// Block-sliding short-context scores. `logp_long` may be supplied to reuse
// long scores for tokens whose short context is the whole prefix; when
// empty those tokens are scored by the block pass as well.
std::vector<ShortScore> score_short_sliding(std::span<const TokenId> tokens, const Scorer& scorer,
                                            const WindowConfig& cfg,
                                            std::span<const double> logp_long = {});
std::vector<ShortScore> score_short_sliding(const TokenizedDoc& doc, const Scorer& scorer,
                                            const WindowConfig& cfg);

ScoredDoc score_doc(const TokenizedDoc& doc, const Scorer& scorer, const WindowConfig& cfg);

}  // namespace longppl
