#include "longppl/longce.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "longppl/error.hpp"
#include "longppl/metrics.hpp"

namespace longppl {

std::string_view to_string(LossKind k) { return k == LossKind::ce ? "ce" : "longce"; }

std::string_view to_string(Normalization n) { return n == Normalization::sum ? "sum" : "mean"; }

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "ce" || s == "CE") return LossKind::ce;
  if (s == "longce" || s == "LongCE") return LossKind::longce;
  throw ConfigError("unknown loss_kind '" + std::string(s) + "'");
}

Normalization normalization_from_string(std::string_view s) {
  if (s == "sum") return Normalization::sum;
  if (s == "mean") return Normalization::mean;
  throw ConfigError("unknown normalization '" + std::string(s) + "'");
}

void TrainConfig::validate(const TinyLMConfig& model) const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (K_short >= model.context_window) {
    throw ConfigError("K_short (" + std::to_string(K_short) + ") must be below the context window (" +
                      std::to_string(model.context_window) + ")");
  }
  WindowConfig{K_short, d}.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss_kind", to_string(c.loss_kind)},
       {"learning_rate", c.learning_rate},
       {"momentum", c.momentum},
       {"grad_clip", c.grad_clip},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"K_short", c.K_short},
       {"d", c.d},
       {"gamma", c.gamma},
       {"normalization", to_string(c.normalization)},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("loss_kind")) c.loss_kind = loss_kind_from_string(j.at("loss_kind").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.K_short = j.value("K_short", c.K_short);
  c.d = j.value("d", c.d);
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("normalization")) {
    c.normalization = normalization_from_string(j.at("normalization").get<std::string>());
  }
  c.seed = j.value("seed", c.seed);
}

double compute_ce(std::span<const double> logps) {
  if (logps.empty()) throw UndefinedMetricError("cross-entropy of an empty token list is undefined");
  double sum = 0.0;
  for (double lp : logps) sum += lp;
  return -sum / static_cast<double>(logps.size());
}

LossBreakdown compute_longce(std::span<const double> logps_long, std::span<const double> logps_short,
                             double gamma, Normalization norm) {
  if (logps_long.size() != logps_short.size()) {
    throw ContractError("LongCE needs aligned passes (" + std::to_string(logps_long.size()) + " long vs " +
                        std::to_string(logps_short.size()) + " short)");
  }
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (logps_long.empty()) throw UndefinedMetricError("LongCE of an empty token list is undefined");
  LossBreakdown out;
  out.weights.reserve(logps_long.size());
  out.nll.reserve(logps_long.size());
  for (std::size_t i = 0; i < logps_long.size(); ++i) {
    const double w = std::min(std::exp(logps_long[i] - logps_short[i]), gamma);
    out.weights.push_back(w);
    out.nll.push_back(-logps_long[i]);
    out.total += w * out.nll.back();
  }
  if (norm == Normalization::mean) out.total /= static_cast<double>(logps_long.size());
  return out;
}

namespace {

std::vector<double> weights_from_long(const TinyLM& model, std::span<const TokenId> tokens,
                                      std::span<const double> logp_long, const TrainConfig& cfg) {
  if (cfg.loss_kind == LossKind::ce) return std::vector<double>(tokens.size(), 1.0);
  const TinyLMScorer scorer(model);
  const auto shorts = score_short_sliding(tokens, scorer, WindowConfig{cfg.K_short, cfg.d}, logp_long);
  std::vector<double> logp_short(shorts.size());
  for (std::size_t i = 0; i < shorts.size(); ++i) logp_short[i] = shorts[i].logp;
  return compute_longce(logp_long, logp_short, cfg.gamma, cfg.normalization).weights;
}

}  // namespace

std::vector<double> training_weights(const TinyLM& model, std::span<const TokenId> tokens,
                                     const TrainConfig& cfg) {
  if (cfg.loss_kind == LossKind::ce) return std::vector<double>(tokens.size(), 1.0);
  return weights_from_long(model, tokens, model.target_logprobs(tokens), cfg);
}

TrainResult train(TinyLM model, std::span<const TrainingExample> corpus, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate(model.config());
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  for (const auto& ex : corpus) {
    if (ex.tokens.empty()) throw ContractError("training example without tokens");
    for (auto p : ex.answer_positions) {
      if (p >= ex.tokens.size()) throw ContractError("answer position past the end of its example");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  auto params = model.parameters();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size());
  std::vector<double> scaled;

  TrainResult result{model, {}};
  result.log.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    StepLog entry;
    entry.step = step;
    double weight_sum = 0.0;
    double weight_max = 0.0;
    std::size_t weight_count = 0;
    double answer_sum = 0.0;
    std::size_t answer_count = 0;

    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& ex = corpus[pick(rng)];
      const double n = static_cast<double>(ex.tokens.size());
      const double scale =
          (cfg.normalization == Normalization::mean ? 1.0 / n : 1.0) / static_cast<double>(cfg.batch_size);
      std::vector<double> weights;
      const auto logp = model.accumulate_gradients(
          ex.tokens,
          [&](std::span<const double> logp_long) {
            weights = weights_from_long(model, ex.tokens, logp_long, cfg);
            scaled.resize(weights.size());
            for (std::size_t i = 0; i < weights.size(); ++i) scaled[i] = weights[i] * scale;
            return scaled;
          },
          grad);
      for (std::size_t i = 0; i < logp.size(); ++i) {
        entry.loss -= scaled[i] * logp[i];
        weight_sum += weights[i];
        weight_max = std::max(weight_max, weights[i]);
      }
      weight_count += weights.size();
      for (auto p : ex.answer_positions) {
        answer_sum -= logp[p];
        ++answer_count;
      }
    }
    entry.mean_weight = weight_sum / static_cast<double>(weight_count);
    entry.max_weight = weight_max;
    if (answer_count > 0) entry.answer_nll = answer_sum / static_cast<double>(answer_count);
    if (!std::isfinite(entry.loss)) throw TrainingError(step, "loss is not finite");

    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    if (!std::isfinite(norm2)) throw TrainingError(step, "gradient is not finite");
    double clip = 1.0;
    if (cfg.grad_clip > 0.0 && norm2 > cfg.grad_clip * cfg.grad_clip) clip = cfg.grad_clip / std::sqrt(norm2);
    for (std::size_t k = 0; k < params.size(); ++k) {
      velocity[k] = cfg.momentum * velocity[k] + clip * grad[k];
      params[k] -= cfg.learning_rate * velocity[k];
    }

    result.log.push_back(entry);
    if (on_step) on_step(entry, model);
  }
  result.model = std::move(model);
  return result;
}

double answer_nll(const TinyLM& model, std::span<const TrainingExample> examples) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    if (ex.answer_positions.empty()) continue;
    const auto logp = model.target_logprobs(ex.tokens);
    for (auto p : ex.answer_positions) {
      sum -= logp.at(p);
      ++count;
    }
  }
  if (count == 0) throw UndefinedMetricError("no answer positions to evaluate");
  return sum / static_cast<double>(count);
}

void write_train_log(std::span<const StepLog> log, std::ostream& out) {
  for (const auto& s : log) {
    nlohmann::json j = {{"step", s.step},
                        {"loss", s.loss},
                        {"mean_weight", s.mean_weight},
                        {"max_weight", s.max_weight}};
    if (s.answer_nll) j["answer_nll"] = *s.answer_nll;
    out << j.dump() << '\n';
  }
}

}  // namespace longppl
