#include "longppl/remote_scorer.hpp"

#include <cmath>
#include <limits>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "longppl/error.hpp"

namespace longppl {

namespace {

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("remote endpoint '" + url + "' lacks a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

struct RemoteScorer::Impl {
  RemoteScorerOptions options;
  std::string path;
  httplib::Client client;
  std::size_t requests = 0;

  Impl(RemoteScorerOptions opts, const ParsedUrl& url)
      : options(std::move(opts)), path(url.path), client(url.base) {
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    client.set_write_timeout(options.timeout);
    if (!options.auth_token.empty()) client.set_bearer_token_auth(options.auth_token);
  }

  std::vector<double> request(std::span<const TokenId> ids, std::size_t doc_offset) {
    nlohmann::json body = {{"model", options.model},
                           {"prompt_token_ids", std::vector<TokenId>(ids.begin(), ids.end())},
                           {"echo_logprobs", true}};
    const auto payload = body.dump();

    std::string failure;
    auto backoff = options.initial_backoff;
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      ++requests;
      auto res = client.Post(path, payload, "application/json");
      if (!res) {
        failure = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) return parse(res->body, ids.size());
      failure = "HTTP " + std::to_string(res->status);
      if (!retryable(res->status)) break;
    }
    throw ScoringError(doc_offset, "remote scorer failed after retries (" + failure + ")");
  }

  static std::vector<double> parse(const std::string& body, std::size_t expected) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("remote response is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("token_logprobs") || !j["token_logprobs"].is_array()) {
      throw ProtocolError("remote response lacks a token_logprobs array");
    }
    const auto& arr = j["token_logprobs"];
    if (arr.size() != expected) {
      throw ProtocolError("remote response has " + std::to_string(arr.size()) +
                          " logprobs for " + std::to_string(expected) + " prompt tokens");
    }
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
      if (v.is_null()) {
        out.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (v.is_number()) {
        out.push_back(v.get<double>());
      } else {
        throw ProtocolError("remote response has a non-numeric logprob");
      }
    }
    return out;
  }
};

RemoteScorer::RemoteScorer(RemoteScorerOptions options) {
  if (options.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  auto url = parse_endpoint(options.endpoint);
  impl_ = std::make_unique<Impl>(std::move(options), url);
}

RemoteScorer::~RemoteScorer() = default;

double RemoteScorer::logprob(std::span<const TokenId> context, TokenId target) const {
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.push_back(target);
  std::lock_guard lock(mu_);
  const double lp = impl_->request(seq, 0).back();
  if (std::isnan(lp)) throw ScoringError(context.size(), "remote scorer returned null");
  return lp;
}

std::vector<double> RemoteScorer::score_sequence(std::span<const TokenId> seq,
                                                 std::size_t doc_offset) const {
  std::lock_guard lock(mu_);
  return impl_->request(seq, doc_offset);
}

std::size_t RemoteScorer::requests_sent() const {
  std::lock_guard lock(mu_);
  return impl_->requests;
}

std::unique_ptr<RemoteScorer> remote_scorer(const std::string& endpoint, const std::string& model,
                                            const std::string& auth) {
  return std::make_unique<RemoteScorer>(RemoteScorerOptions{endpoint, model, auth});
}

}  // namespace longppl
