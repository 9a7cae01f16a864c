#include "longppl/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "longppl/error.hpp"

namespace longppl {

namespace {

void check_logps(std::span<const double> logp) {
  for (std::size_t i = 0; i < logp.size(); ++i) {
    if (!std::isfinite(logp[i]) || logp[i] > 0.0) {
      throw ContractError("log-probability at token " + std::to_string(i) +
                          " must be finite and <= 0");
    }
  }
}

void check_mask(const KeyTokenMask& mask, std::size_t n) {
  if (mask.flags.size() != n || mask.weights.size() != n) {
    throw ContractError("key-token mask covers " + std::to_string(mask.flags.size()) +
                        " tokens, scores cover " + std::to_string(n));
  }
}

}  // namespace

void InfluenceConfig::validate() const {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (std::isnan(alpha) || std::isnan(beta)) throw ConfigError("alpha and beta must not be NaN");
}

KeyTokenMask KeyTokenMask::from_flags(std::vector<bool> flags) {
  KeyTokenMask mask;
  const auto n_key = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  mask.weights.assign(flags.size(), 0.0);
  if (n_key > 0) {
    const double w = 1.0 / static_cast<double>(n_key);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i]) mask.weights[i] = w;
    }
  }
  mask.flags = std::move(flags);
  return mask;
}

std::size_t KeyTokenMask::n_key() const noexcept {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json::object();
  if (!r.doc_id.empty()) j["doc_id"] = r.doc_id;
  j["ppl"] = r.ppl;
  j["longppl"] = r.longppl ? nlohmann::json(*r.longppl) : nlohmann::json(nullptr);
  j["longppl_soft"] = r.longppl_soft;
  j["n_tokens"] = r.n_tokens;
  j["n_key_tokens"] = r.n_key_tokens;
  j["key_fraction"] = r.key_fraction;
}

double compute_ppl(std::span<const double> logp) {
  if (logp.empty()) throw UndefinedMetricError("perplexity of an empty token list is undefined");
  check_logps(logp);
  double sum = 0.0;
  for (double lp : logp) sum += lp;
  return std::exp(-sum / static_cast<double>(logp.size()));
}

KeyTokenMask select_key_tokens(const ScoredDoc& scored, const InfluenceConfig& cfg) {
  cfg.validate();
  std::vector<bool> flags(scored.records.size(), false);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const auto& r = scored.records[i];
    flags[i] = compute_lpg(r) > cfg.alpha && compute_lpv(r) > cfg.beta;
  }
  return KeyTokenMask::from_flags(std::move(flags));
}

LongPplResult compute_longppl(std::span<const double> logp_long, const KeyTokenMask& mask) {
  check_mask(mask, logp_long.size());
  check_logps(logp_long);
  const std::size_t n_key = mask.n_key();
  if (n_key == 0) return {std::nullopt, 0};
  double acc = 0.0;
  for (std::size_t i = 0; i < logp_long.size(); ++i) {
    if (mask.flags[i]) acc += mask.weights[i] * logp_long[i];
  }
  return {std::exp(-acc), n_key};
}

LongPplResult compute_longppl(const ScoredDoc& evaluated, const KeyTokenMask& mask) {
  return compute_longppl(evaluated.logp_long(), mask);
}

LongPplResult compute_longppl(std::span<const ScoredDoc> evaluated,
                              std::span<const KeyTokenMask> masks) {
  if (evaluated.size() != masks.size()) throw ContractError("one mask per document is required");
  double sum = 0.0;
  std::size_t n_key = 0;
  for (std::size_t d = 0; d < evaluated.size(); ++d) {
    const auto logp = evaluated[d].logp_long();
    check_mask(masks[d], logp.size());
    check_logps(logp);
    for (std::size_t i = 0; i < logp.size(); ++i) {
      if (masks[d].flags[i]) {
        sum += logp[i];
        ++n_key;
      }
    }
  }
  if (n_key == 0) return {std::nullopt, 0};
  return {std::exp(-sum / static_cast<double>(n_key)), n_key};
}

double compute_soft_influence(const TokenScoreRecord& r, const InfluenceConfig& cfg) {
  return std::min(std::exp(compute_lpg(r)), cfg.gamma);
}

std::vector<double> soft_influence_weights(const ScoredDoc& scored, const InfluenceConfig& cfg) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(scored.records.size());
  for (const auto& r : scored.records) out.push_back(compute_soft_influence(r, cfg));
  return out;
}

double compute_longppl_soft(std::span<const double> logp_long, std::span<const double> weights) {
  if (logp_long.size() != weights.size()) {
    throw ContractError("soft weights cover " + std::to_string(weights.size()) +
                        " tokens, scores cover " + std::to_string(logp_long.size()));
  }
  if (logp_long.empty()) throw UndefinedMetricError("LongPPL-soft of an empty token list is undefined");
  check_logps(logp_long);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < logp_long.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      throw ContractError("soft weight at token " + std::to_string(i) + " must be finite and >= 0");
    }
    num += weights[i] * logp_long[i];
    den += weights[i];
  }
  if (!(den > 0.0)) throw UndefinedMetricError("LongPPL-soft needs a positive total weight");
  return std::exp(-num / den);
}

double compute_longppl_soft(const ScoredDoc& scored, const InfluenceConfig& cfg) {
  return compute_longppl_soft(scored.logp_long(), soft_influence_weights(scored, cfg));
}

MetricReport summarize(const ScoredDoc& evaluated, const KeyTokenMask& mask,
                       std::span<const double> soft_weights) {
  const auto logp = evaluated.logp_long();
  MetricReport r;
  r.doc_id = evaluated.doc_id;
  r.ppl = compute_ppl(logp);
  const auto longppl = compute_longppl(logp, mask);
  r.longppl = longppl.value;
  r.n_key_tokens = longppl.n_key_tokens;
  r.longppl_soft = compute_longppl_soft(logp, soft_weights);
  r.n_tokens = logp.size();
  r.key_fraction = static_cast<double>(r.n_key_tokens) / static_cast<double>(r.n_tokens);
  return r;
}

MetricReport summarize(const ScoredDoc& scored, const KeyTokenMask& mask, const InfluenceConfig& cfg) {
  return summarize(scored, mask, soft_influence_weights(scored, cfg));
}

MetricReport summarize_corpus(std::span<const ScoredDoc> evaluated,
                              std::span<const KeyTokenMask> masks,
                              std::span<const std::vector<double>> soft_weights) {
  if (evaluated.size() != soft_weights.size()) {
    throw ContractError("one soft-weight vector per document is required");
  }
  std::vector<double> all_logp;
  std::vector<double> all_w;
  for (std::size_t d = 0; d < evaluated.size(); ++d) {
    const auto logp = evaluated[d].logp_long();
    if (soft_weights[d].size() != logp.size()) {
      throw ContractError("soft weights of doc '" + evaluated[d].doc_id + "' do not match its length");
    }
    all_logp.insert(all_logp.end(), logp.begin(), logp.end());
    all_w.insert(all_w.end(), soft_weights[d].begin(), soft_weights[d].end());
  }
  MetricReport r;
  r.ppl = compute_ppl(all_logp);
  const auto longppl = compute_longppl(evaluated, masks);
  r.longppl = longppl.value;
  r.n_key_tokens = longppl.n_key_tokens;
  r.longppl_soft = compute_longppl_soft(all_logp, all_w);
  r.n_tokens = all_logp.size();
  r.key_fraction = static_cast<double>(r.n_key_tokens) / static_cast<double>(r.n_tokens);
  return r;
}

}  // namespace longppl
