#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "longppl/scoring.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

// Add-k smoothed n-gram model. Histories shorter than order-1 are padded
// with a begin-of-sequence marker, so a truncated context is scored exactly
// like the start of a document. Immutable once built.
class NgramScorer final : public Scorer {
 public:
  double logprob(std::span<const TokenId> context, TokenId target) const override;
  std::vector<double> score_sequence(std::span<const TokenId> seq,
                                     std::size_t doc_offset) const override;

  std::size_t order() const noexcept { return order_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  double smoothing_k() const noexcept { return k_; }

 private:
  friend NgramScorer ngram_lm_train(std::span<const TokenizedDoc>, std::size_t, double,
                                    std::size_t);
  NgramScorer(std::size_t order, double k, std::size_t vocab_size)
      : order_(order), k_(k), vocab_size_(vocab_size) {}

  struct HistoryHash {
    std::size_t operator()(const std::vector<TokenId>& h) const noexcept;
  };
  struct HistoryStats {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };

  // History for predicting position `pos` of `seq`: the order-1 preceding
  // ids, padded on the left with kBos.
  std::vector<TokenId> history(std::span<const TokenId> seq, std::size_t pos) const;
  double conditional(const std::vector<TokenId>& hist, TokenId target) const;

  static constexpr TokenId kBos = -1;

  std::size_t order_;
  double k_;
  std::size_t vocab_size_;
  std::unordered_map<std::vector<TokenId>, HistoryStats, HistoryHash> table_;
};

// Counts every (history, next) pair of the corpus. vocab_size of 0 means
// "largest id seen + 1"; a larger value widens the smoothing support.
NgramScorer ngram_lm_train(std::span<const TokenizedDoc> corpus, std::size_t order,
                           double smoothing_k, std::size_t vocab_size = 0);

}  // namespace longppl
