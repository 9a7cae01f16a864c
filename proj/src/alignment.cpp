#include "longppl/alignment.hpp"

#include <algorithm>

#include "longppl/error.hpp"

namespace longppl {

namespace {

void check_same_source(const TokenizedDoc& a, const TokenizedDoc& b) {
  if (a.source_text != b.source_text) {
    throw AlignmentError("cannot align '" + a.doc_id + "' and '" + b.doc_id +
                         "': source texts differ");
  }
  try {
    a.check_invariants();
    b.check_invariants();
  } catch (const ContractError& e) {
    throw AlignmentError(e.what());
  }
}

}  // namespace

CharWeightIndex::CharWeightIndex(const TokenizedDoc& doc) : owner_(doc.source_text.size()) {
  for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
    const auto& span = doc.tokens[t].span;
    std::fill(owner_.begin() + static_cast<std::ptrdiff_t>(span.start),
              owner_.begin() + static_cast<std::ptrdiff_t>(span.end), t);
  }
}

KeyTokenMask project_key_tokens_hard(const TokenizedDoc& evaluator, const KeyTokenMask& evaluator_mask,
                                     const TokenizedDoc& evaluated) {
  check_same_source(evaluator, evaluated);
  if (evaluator_mask.size() != evaluator.size()) {
    throw ContractError("evaluator mask does not match the evaluator tokenization");
  }
  const CharWeightIndex index(evaluator);
  std::vector<bool> flags(evaluated.size(), false);
  for (std::size_t t = 0; t < evaluated.size(); ++t) {
    const auto& span = evaluated.tokens[t].span;
    bool all_key = true;
    for (std::size_t c = span.start; c < span.end && all_key; ++c) {
      all_key = evaluator_mask.flags[index.owner(c)];
    }
    flags[t] = all_key;
  }
  return KeyTokenMask::from_flags(std::move(flags));
}

std::vector<double> project_weights_soft(const TokenizedDoc& evaluator,
                                         std::span<const double> evaluator_weights,
                                         const TokenizedDoc& evaluated) {
  check_same_source(evaluator, evaluated);
  if (evaluator_weights.size() != evaluator.size()) {
    throw ContractError("evaluator weights do not match the evaluator tokenization");
  }
  const CharWeightIndex index(evaluator);
  std::vector<double> out(evaluated.size(), 0.0);
  for (std::size_t t = 0; t < evaluated.size(); ++t) {
    const auto& span = evaluated.tokens[t].span;
    double sum = 0.0;
    double lo = evaluator_weights[index.owner(span.start)];
    double hi = lo;
    // Walk runs of characters sharing one evaluator token.
    std::size_t c = span.start;
    while (c < span.end) {
      const std::size_t owner = index.owner(c);
      const std::size_t run_end = std::min(span.end, evaluator.tokens[owner].span.end);
      const double w = evaluator_weights[owner];
      sum += w * static_cast<double>(run_end - c);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
      c = run_end;
    }
    // The mean of equal weights is that weight; skip the rounding of sum/n.
    out[t] = lo == hi ? lo : std::clamp(sum / static_cast<double>(span.size()), lo, hi);
  }
  return out;
}

}  // namespace longppl
