#include "longppl/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "longppl/error.hpp"

namespace longppl {

namespace {

void check_logp(double logp, std::size_t token_index) {
  if (!std::isfinite(logp)) throw ScoringError(token_index, "scorer returned a non-finite log-probability");
  if (logp > 0.0) throw ScoringError(token_index, "scorer returned a positive log-probability");
}

std::vector<double> checked_sequence(const Scorer& scorer, std::span<const TokenId> seq,
                                     std::size_t doc_offset, std::size_t from = 0) {
  auto out = from == 0 ? scorer.score_sequence(seq, doc_offset) : scorer.score_suffix(seq, doc_offset, from);
  if (out.size() != seq.size() - from) {
    throw ScoringError(doc_offset, "batched scorer returned " + std::to_string(out.size()) +
                                       " values for " + std::to_string(seq.size() - from) + " tokens");
  }
  return out;
}

}  // namespace

std::vector<double> ScoredDoc::logp_long() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.logp_long);
  return out;
}

std::vector<double> ScoredDoc::logp_short() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.logp_short);
  return out;
}

TokenizedDoc ScoredDoc::tokenized() const {
  TokenizedDoc doc;
  doc.doc_id = doc_id;
  doc.tokens = tokens;
  doc.source_text = decode(tokens);
  return doc;
}

void ScoredDoc::check_invariants() const {
  if (tokens.size() != records.size()) {
    throw ContractError("doc '" + doc_id + "': " + std::to_string(records.size()) +
                        " records for " + std::to_string(tokens.size()) + " tokens");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.token_index != i) {
      throw ContractError("doc '" + doc_id + "': token_index " + std::to_string(r.token_index) +
                          " at position " + std::to_string(i));
    }
    if (!std::isfinite(r.logp_long) || !std::isfinite(r.logp_short) || r.logp_long > 0.0 ||
        r.logp_short > 0.0) {
      throw ContractError("doc '" + doc_id + "': token " + std::to_string(i) +
                          " log-probabilities must be finite and <= 0");
    }
    if (r.short_ctx_len > r.token_index) {
      throw ContractError("doc '" + doc_id + "': token " + std::to_string(i) +
                          " short context longer than its prefix");
    }
  }
}

void WindowConfig::validate() const {
  if (d < 1 || d > K) {
    throw ConfigError("window config requires 1 <= d <= K (got K=" + std::to_string(K) +
                      ", d=" + std::to_string(d) + ")");
  }
}

std::vector<double> Scorer::score_sequence(std::span<const TokenId> seq, std::size_t) const {
  std::vector<double> out;
  out.reserve(seq.size());
  for (std::size_t j = 0; j < seq.size(); ++j) out.push_back(logprob(seq.first(j), seq[j]));
  return out;
}

std::vector<double> Scorer::score_suffix(std::span<const TokenId> seq, std::size_t doc_offset,
                                         std::size_t from) const {
  if (from > seq.size()) throw ContractError("suffix start past the sequence end");
  auto all = score_sequence(seq, doc_offset);
  if (all.size() != seq.size()) {
    throw ScoringError(doc_offset, "batched scorer returned " + std::to_string(all.size()) +
                                       " values for " + std::to_string(seq.size()) + " tokens");
  }
  all.erase(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(from));
  return all;
}

std::vector<double> score_long(std::span<const TokenId> tokens, const Scorer& scorer) {
  if (tokens.empty()) throw ContractError("cannot score an empty document");
  auto out = checked_sequence(scorer, tokens, 0);
  for (std::size_t i = 0; i < out.size(); ++i) check_logp(out[i], i);
  return out;
}

std::vector<double> score_long(const TokenizedDoc& doc, const Scorer& scorer) {
  return score_long(doc.ids(), scorer);
}

std::size_t short_context_start(std::size_t index, const WindowConfig& cfg) {
  const std::size_t block_start = index - index % cfg.d;
  return block_start >= cfg.K ? block_start - cfg.K : 0;
}

std::vector<ShortScore> score_short_sliding(std::span<const TokenId> tokens, const Scorer& scorer,
                                            const WindowConfig& cfg,
                                            std::span<const double> logp_long) {
  cfg.validate();
  const std::size_t n = tokens.size();
  if (n == 0) throw ContractError("cannot score an empty document");
  if (!logp_long.empty() && logp_long.size() != n) {
    throw ContractError("logp_long has " + std::to_string(logp_long.size()) + " entries for " +
                        std::to_string(n) + " tokens");
  }

  std::vector<ShortScore> out(n);
  for (std::size_t block = 0; block < n; block += cfg.d) {
    const std::size_t block_end = std::min(block + cfg.d, n);
    const std::size_t ctx_start = short_context_start(block, cfg);

    if (ctx_start == 0 && !logp_long.empty()) {
      for (std::size_t i = block; i < block_end; ++i) out[i] = {logp_long[i], i};
      continue;
    }
    auto window = tokens.subspan(ctx_start, block_end - ctx_start);
    auto scores = checked_sequence(scorer, window, ctx_start, block - ctx_start);
    for (std::size_t i = block; i < block_end; ++i) {
      const double lp = scores[i - block];
      check_logp(lp, i);
      out[i] = {lp, i - ctx_start};
    }
  }
  return out;
}

std::vector<ShortScore> score_short_sliding(const TokenizedDoc& doc, const Scorer& scorer,
                                            const WindowConfig& cfg) {
  return score_short_sliding(doc.ids(), scorer, cfg);
}

ScoredDoc score_doc(const TokenizedDoc& doc, const Scorer& scorer, const WindowConfig& cfg) {
  cfg.validate();
  const auto ids = doc.ids();
  const auto longs = score_long(ids, scorer);
  const auto shorts = score_short_sliding(ids, scorer, cfg, longs);

  ScoredDoc out;
  out.doc_id = doc.doc_id;
  out.tokens = doc.tokens;
  out.records.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.records.push_back({i, longs[i], shorts[i].logp, shorts[i].ctx_len});
  }
  return out;
}

}  // namespace longppl
