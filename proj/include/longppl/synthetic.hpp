#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "longppl/metrics.hpp"
#include "longppl/scoring.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

std::vector<std::string> default_filler_vocab();

// A lines-retrieval document:
//
//   line <name>: REGISTER_CONTENT is <value>\n        (n_lines times)
//   Question: what is the REGISTER_CONTENT in line <target name>?\n
//   Answer: line <target name>: REGISTER_CONTENT is <target value>
//
// Names are distinct "word-word" pairs drawn from filler_vocab; values are
// value_digits-digit numbers. The value tokens of the last n_hard_lines
// records form an extra labelled class used to build mispredicted-token
// populations.
struct LinesTaskSpec {
  std::size_t n_lines = 100;
  std::size_t value_digits = 5;
  std::size_t target_line = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> filler_vocab = default_filler_vocab();
  std::size_t n_hard_lines = 0;

  void validate() const;
};

struct LabeledDoc {
  TokenizedDoc doc;
  std::vector<std::size_t> answer_token_indices;  // sorted
  std::string answer_value;
  Span answer_span;
  // Token range [first, end) of the target record line.
  std::size_t target_line_first_token = 0;
  std::size_t target_line_end_token = 0;
  std::vector<std::size_t> hard_token_indices;  // sorted, disjoint from answers
};

LabeledDoc generate_lines_task(const LinesTaskSpec& spec, const TokenizerSpec& tokenizer,
                               std::string doc_id = {});

// Whitespace tokenizer covering every word any lines task with this
// spec's filler_vocab and value_digits can produce. value_digits <= 4.
TokenizerSpec lines_task_tokenizer(const LinesTaskSpec& spec);

// n_docs documents; document i uses seed spec.seed + i and a target line
// drawn from [0, target_line_limit) (0 means any line). Doc ids are
// "<prefix><i>" with i zero-padded to six digits.
std::vector<LabeledDoc> generate_lines_corpus(const LinesTaskSpec& spec, std::size_t n_docs,
                                              const TokenizerSpec& tokenizer,
                                              std::size_t target_line_limit = 0,
                                              const std::string& id_prefix = "lines-");

// {"doc_id", "text", "answer_span": [start, end], "answer_value"} per line.
void write_tasks_jsonl(std::span<const LabeledDoc> docs, std::ostream& out);

// Probabilities the oracle assigns to the document's actual next token.
// Hard-class probabilities are optional; without them hard tokens are filler.
struct OracleSpec {
  double p_answer_long = 0.9;
  double p_answer_short = 0.01;
  double p_filler = 0.5;
  std::optional<double> p_hard_long;
  std::optional<double> p_hard_short;

  void validate() const;
};

// Scorer with analytically known long/short behaviour on one LabeledDoc.
// At position i it predicts the document's token x_i with probability
//   p_answer_long / p_answer_short   for answer tokens, depending on whether
//                                    the context reaches back to the target
//                                    line,
//   p_hard_long / p_hard_short       for hard tokens, same rule,
//   p_filler                         otherwise,
// and spreads the remainder uniformly over the other vocab_size - 1 ids.
class OracleScorer final : public Scorer {
 public:
  OracleScorer(LabeledDoc labeled, OracleSpec spec, std::size_t vocab_size);

  // Locates the context inside the document; ambiguous or foreign contexts
  // raise ScoringError.
  double logprob(std::span<const TokenId> context, TokenId target) const override;
  std::vector<double> score_sequence(std::span<const TokenId> seq,
                                     std::size_t doc_offset) const override;

  double logprob_at(std::size_t position, std::size_t ctx_start, TokenId target) const;

 private:
  enum class TokenClass : unsigned char { filler, answer, hard };

  LabeledDoc labeled_;
  OracleSpec spec_;
  std::size_t vocab_size_;
  std::vector<TokenId> ids_;
  std::vector<TokenClass> classes_;
};

std::unique_ptr<OracleScorer> oracle_scorer(const LabeledDoc& labeled, const OracleSpec& spec,
                                            std::size_t vocab_size);

struct SelectionMetrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;  // mean of recall and specificity
  double precision = 0.0;          // 0 when nothing is selected
  double recall = 0.0;
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t true_neg = 0;
  std::size_t false_neg = 0;
};

// Answer tokens are the positives.
SelectionMetrics selection_accuracy(const KeyTokenMask& mask, const LabeledDoc& labeled);

}  // namespace longppl
