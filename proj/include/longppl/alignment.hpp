#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "longppl/metrics.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

// Maps every character (byte) of a document's source text to the index of
// the token whose span contains it.
class CharWeightIndex {
 public:
  explicit CharWeightIndex(const TokenizedDoc& doc);

  std::size_t size() const noexcept { return owner_.size(); }
  std::size_t owner(std::size_t char_pos) const { return owner_.at(char_pos); }

 private:
  std::vector<std::size_t> owner_;
};

// An evaluated token is key iff every character of its span lies in some
// key evaluator token. This is the largest evaluated-token set whose decoded
// text stays inside the evaluator's key text.
KeyTokenMask project_key_tokens_hard(const TokenizedDoc& evaluator, const KeyTokenMask& evaluator_mask,
                                     const TokenizedDoc& evaluated);

// Each evaluated token receives the per-character average of the weights of
// the evaluator tokens covering it.
std::vector<double> project_weights_soft(const TokenizedDoc& evaluator,
                                         std::span<const double> evaluator_weights,
                                         const TokenizedDoc& evaluated);

}  // namespace longppl
