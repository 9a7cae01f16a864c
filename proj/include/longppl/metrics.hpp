#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "longppl/scoring.hpp"

namespace longppl {

// Thresholds in nats; gamma is the clamp of the soft influence ratio.
struct InfluenceConfig {
  double alpha = 2.0;
  double beta = -2.0;
  double gamma = 5.0;

  void validate() const;
};

// Key flags I(x_i) and their normalized weights I(x_i) / sum_j I(x_j).
struct KeyTokenMask {
  std::vector<bool> flags;
  std::vector<double> weights;

  static KeyTokenMask from_flags(std::vector<bool> flags);
  std::size_t size() const noexcept { return flags.size(); }
  std::size_t n_key() const noexcept;
};

// A LongPPL value, or the explicit "no key tokens" outcome.
struct LongPplResult {
  std::optional<double> value;
  std::size_t n_key_tokens = 0;

  bool defined() const noexcept { return value.has_value(); }
};

struct MetricReport {
  std::string doc_id;  // empty for corpus-level reports
  double ppl = 0.0;
  std::optional<double> longppl;
  double longppl_soft = 0.0;
  std::size_t n_tokens = 0;
  std::size_t n_key_tokens = 0;
  double key_fraction = 0.0;
};

void to_json(nlohmann::json& j, const MetricReport& r);

// exp(-mean(logp)). Throws UndefinedMetricError on an empty list and
// ContractError on positive or non-finite entries.
double compute_ppl(std::span<const double> logp);

inline double compute_lpg(const TokenScoreRecord& r) { return r.logp_long - r.logp_short; }
inline double compute_lpv(const TokenScoreRecord& r) { return r.logp_long; }

// Key iff LPG > alpha and LPV > beta (strict on both).
KeyTokenMask select_key_tokens(const ScoredDoc& scored, const InfluenceConfig& cfg);

// exp(-sum_i w_i logp_i) with the mask's normalized weights. `logp_long`
// comes from the evaluated model; the mask usually from an evaluator.
LongPplResult compute_longppl(std::span<const double> logp_long, const KeyTokenMask& mask);
LongPplResult compute_longppl(const ScoredDoc& evaluated, const KeyTokenMask& mask);

// Corpus level: all documents' key tokens pooled into one equal-weight mean.
LongPplResult compute_longppl(std::span<const ScoredDoc> evaluated,
                              std::span<const KeyTokenMask> masks);

// min(exp(LPG), gamma).
double compute_soft_influence(const TokenScoreRecord& r, const InfluenceConfig& cfg);
std::vector<double> soft_influence_weights(const ScoredDoc& scored, const InfluenceConfig& cfg);

// exp(-sum_i w_i logp_i / sum_j w_j) with unnormalized non-negative weights.
double compute_longppl_soft(std::span<const double> logp_long, std::span<const double> weights);
// Weights taken from the document's own long/short scores.
double compute_longppl_soft(const ScoredDoc& scored, const InfluenceConfig& cfg);

MetricReport summarize(const ScoredDoc& evaluated, const KeyTokenMask& mask,
                       std::span<const double> soft_weights);
MetricReport summarize(const ScoredDoc& scored, const KeyTokenMask& mask, const InfluenceConfig& cfg);

// Pools tokens across documents for every field.
MetricReport summarize_corpus(std::span<const ScoredDoc> evaluated,
                              std::span<const KeyTokenMask> masks,
                              std::span<const std::vector<double>> soft_weights);

}  // namespace longppl
