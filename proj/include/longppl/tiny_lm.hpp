#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "longppl/scoring.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

// Desk-scale autoregressive LM:
//
//   x_p   = E[s_p] + sum_{o=1}^{W-1} C_o E[s_{p-o}]      (causal token mixing)
//   h_p   = x_p + Wo * concat_heads sum_{j<=p} softmax_j(q_p.k_j / sqrt(D/heads)) v_j
//   g_p   = h_p + W2 relu(W1 h_p + b1) + b2
//   logits_p = U g_p + c
//
// where s = (BOS, x_0, ..., x_{n-2}), so position p predicts x_p and
// position 0 gives the unconditional distribution. All math is double.
struct TinyLMConfig {
  std::size_t vocab_size = 256;
  std::size_t context_window = 256;
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t conv_width = 6;
  std::size_t n_heads = 4;  // must divide embedding_dim
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t parameter_count() const;

  static constexpr std::size_t kMaxVocab = 512;
  static constexpr std::size_t kMaxContext = 512;
  static constexpr std::size_t kMaxParameters = 1'000'000;
};

void to_json(nlohmann::json& j, const TinyLMConfig& c);
void from_json(const nlohmann::json& j, TinyLMConfig& c);

// Row-major n x vocab_size matrix of log-probabilities.
struct LogProbMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

class TinyLM {
 public:
  explicit TinyLM(const TinyLMConfig& config);  // deterministic init from config.seed

  const TinyLMConfig& config() const noexcept { return config_; }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  LogProbMatrix forward(std::span<const TokenId> tokens) const;
  // Entry i - from is log P(x_i | x_<i), for i >= from.
  std::vector<double> target_logprobs(std::span<const TokenId> tokens, std::size_t from = 0) const;

  // Adds d/dtheta of -sum_i weights[i] * log P(x_i | x_<i) into `grad`.
  // Weights are constants. Returns the target log-probabilities.
  std::vector<double> accumulate_gradients(std::span<const TokenId> tokens,
                                           std::span<const double> weights,
                                           std::span<double> grad) const;

  // As above, with weights computed from this pass's target log-probabilities
  // (e.g. LongCE weights) so the forward pass is shared.
  using WeightFn = std::function<std::vector<double>(std::span<const double> target_logp)>;
  std::vector<double> accumulate_gradients(std::span<const TokenId> tokens, const WeightFn& weight_fn,
                                           std::span<double> grad) const;

 private:
  friend struct TinyLMConfig;
  struct Layout;
  struct Cache;

  // Output rows are computed for positions >= from only.
  void run(std::span<const TokenId> tokens, Cache& cache, std::size_t from = 0) const;

  TinyLMConfig config_;
  std::vector<double> params_;
};

// Scorer view over a model; the model must outlive it.
class TinyLMScorer final : public Scorer {
 public:
  explicit TinyLMScorer(const TinyLM& model) : model_(model) {}

  double logprob(std::span<const TokenId> context, TokenId target) const override;
  std::vector<double> score_sequence(std::span<const TokenId> seq,
                                     std::size_t doc_offset) const override;
  std::vector<double> score_suffix(std::span<const TokenId> seq, std::size_t doc_offset,
                                   std::size_t from) const override;

 private:
  const TinyLM& model_;
};

struct GradientSet {
  std::vector<double> grad;
  double loss = 0.0;  // -sum_i w_i logp_i over the batch
};

// Exact gradients of the weighted loss over a batch of sequences.
GradientSet tiny_lm_gradients(const TinyLM& model, std::span<const std::vector<TokenId>> batch,
                              std::span<const std::vector<double>> weights);

// Same loss without gradients (for finite-difference checks).
double tiny_lm_weighted_loss(const TinyLM& model, std::span<const std::vector<TokenId>> batch,
                             std::span<const std::vector<double>> weights);

// First line: JSON header {"format_version", "config", "seed", "parameter_count"};
// then parameter_count little-endian float64 values.
void save_checkpoint(const TinyLM& model, const std::filesystem::path& path);
TinyLM load_checkpoint(const std::filesystem::path& path);

}  // namespace longppl
