#include "longppl/ngram.hpp"

#include <algorithm>
#include <cmath>

#include "longppl/error.hpp"

namespace longppl {

std::size_t NgramScorer::HistoryHash::operator()(const std::vector<TokenId>& h) const noexcept {
  std::size_t seed = h.size();
  for (TokenId id : h) {
    seed ^= static_cast<std::size_t>(static_cast<std::uint32_t>(id)) + 0x9e3779b97f4a7c15ULL +
            (seed << 6) + (seed >> 2);
  }
  return seed;
}

std::vector<TokenId> NgramScorer::history(std::span<const TokenId> seq, std::size_t pos) const {
  const std::size_t len = order_ - 1;
  std::vector<TokenId> h(len, kBos);
  for (std::size_t j = 0; j < len && j < pos; ++j) h[len - 1 - j] = seq[pos - 1 - j];
  return h;
}

double NgramScorer::conditional(const std::vector<TokenId>& hist, TokenId target) const {
  if (target < 0 || static_cast<std::size_t>(target) >= vocab_size_) {
    throw ContractError("target id " + std::to_string(target) + " outside n-gram vocabulary of size " +
                        std::to_string(vocab_size_));
  }
  double count = 0.0;
  double total = 0.0;
  if (auto it = table_.find(hist); it != table_.end()) {
    total = static_cast<double>(it->second.total);
    if (auto jt = it->second.next.find(target); jt != it->second.next.end()) {
      count = static_cast<double>(jt->second);
    }
  }
  return std::log((count + k_) / (total + k_ * static_cast<double>(vocab_size_)));
}

double NgramScorer::logprob(std::span<const TokenId> context, TokenId target) const {
  return conditional(history(context, context.size()), target);
}

std::vector<double> NgramScorer::score_sequence(std::span<const TokenId> seq, std::size_t) const {
  std::vector<double> out;
  out.reserve(seq.size());
  for (std::size_t j = 0; j < seq.size(); ++j) out.push_back(conditional(history(seq, j), seq[j]));
  return out;
}

NgramScorer ngram_lm_train(std::span<const TokenizedDoc> corpus, std::size_t order,
                           double smoothing_k, std::size_t vocab_size) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (!(smoothing_k > 0.0) || !std::isfinite(smoothing_k)) {
    throw ConfigError("n-gram smoothing_k must be a positive finite number");
  }
  std::size_t n_tokens = 0;
  TokenId max_id = -1;
  for (const auto& doc : corpus) {
    n_tokens += doc.size();
    for (const auto& t : doc.tokens) {
      if (t.id < 0) throw ConfigError("n-gram corpus contains a negative token id");
      max_id = std::max(max_id, t.id);
    }
  }
  if (n_tokens == 0) throw ConfigError("n-gram corpus is empty");

  NgramScorer model(order, smoothing_k,
                    std::max(vocab_size, static_cast<std::size_t>(max_id) + 1));
  for (const auto& doc : corpus) {
    const auto ids = doc.ids();
    for (std::size_t j = 0; j < ids.size(); ++j) {
      auto& stats = model.table_[model.history(ids, j)];
      ++stats.total;
      ++stats.next[ids[j]];
    }
  }
  return model;
}

}  // namespace longppl
