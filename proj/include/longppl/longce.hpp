#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "longppl/tiny_lm.hpp"

namespace longppl {

enum class LossKind { ce, longce };
enum class Normalization { sum, mean };

std::string_view to_string(LossKind k);
std::string_view to_string(Normalization n);
LossKind loss_kind_from_string(std::string_view s);
Normalization normalization_from_string(std::string_view s);

struct TrainConfig {
  LossKind loss_kind = LossKind::ce;
  double learning_rate = 0.05;
  double momentum = 0.9;     // 0 disables momentum
  double grad_clip = 0.0;    // global L2 norm; 0 disables clipping
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::size_t K_short = 64;  // short-context length for the weights
  std::size_t d = 16;
  double gamma = 5.0;
  Normalization normalization = Normalization::mean;
  std::uint64_t seed = 0;    // batch sampling

  void validate(const TinyLMConfig& model) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> weights;
  std::vector<double> nll;  // -logp per token
  std::optional<double> answer_nll;
};

// -mean(logps).
double compute_ce(std::span<const double> logps);

// w_i = min(exp(logp_long_i - logp_short_i), gamma); total = -sum w_i logp_long_i,
// divided by n under mean normalization.
LossBreakdown compute_longce(std::span<const double> logps_long, std::span<const double> logps_short,
                             double gamma, Normalization norm = Normalization::mean);

struct TrainingExample {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> answer_positions;  // may be empty
};

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_weight = 1.0;
  double max_weight = 1.0;
  std::optional<double> answer_nll;  // over the batch, before the update
};

struct TrainResult {
  TinyLM model;
  std::vector<StepLog> log;
};

using StepCallback = std::function<void(const StepLog&, const TinyLM&)>;

// Each step draws batch_size examples with replacement, computes per-token
// weights from the current model (a long pass plus, for LongCE, a sliding
// window short pass), and applies one SGD update. Weights are never reused
// across steps. Non-finite losses raise TrainingError.
TrainResult train(TinyLM model, std::span<const TrainingExample> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// Per-token weights the trainer would use for one sequence.
std::vector<double> training_weights(const TinyLM& model, std::span<const TokenId> tokens,
                                     const TrainConfig& cfg);

// Mean -logp over all answer positions of the examples.
double answer_nll(const TinyLM& model, std::span<const TrainingExample> examples);

// {"step", "loss", "mean_weight", "max_weight", "answer_nll"?} per line.
void write_train_log(std::span<const StepLog> log, std::ostream& out);

}  // namespace longppl
