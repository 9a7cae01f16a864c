#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>

#include "longppl/scoring.hpp"

namespace longppl {

struct RemoteScorerOptions {
  std::string endpoint;  // http://host[:port]/path
  std::string model;
  std::string auth_token;  // sent as a bearer token when non-empty
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{120};
};

// Scores through an HTTP endpoint that echoes per-token log-probabilities of
// the prompt:
//   POST {"model": str, "prompt_token_ids": [int], "echo_logprobs": true}
//   200  {"token_logprobs": [float|null, ...]}  (one entry per prompt token)
// One request per batched call. Requests are serialized per scorer; transport
// failures, 429 and 5xx responses are retried with exponential backoff.
class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(RemoteScorerOptions options);
  ~RemoteScorer() override;

  RemoteScorer(const RemoteScorer&) = delete;
  RemoteScorer& operator=(const RemoteScorer&) = delete;

  double logprob(std::span<const TokenId> context, TokenId target) const override;
  // Null entries come back as NaN; the scheduler rejects them only where used.
  std::vector<double> score_sequence(std::span<const TokenId> seq,
                                     std::size_t doc_offset) const override;

  std::size_t requests_sent() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex mu_;
};

std::unique_ptr<RemoteScorer> remote_scorer(const std::string& endpoint, const std::string& model,
                                            const std::string& auth);

// Name of the environment variable the CLI reads the bearer token from.
inline constexpr const char* kRemoteAuthEnv = "LONGPPL_API_KEY";

}  // namespace longppl
