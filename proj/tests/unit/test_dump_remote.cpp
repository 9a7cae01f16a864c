#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "longppl/dump.hpp"
#include "longppl/error.hpp"
#include "longppl/remote_scorer.hpp"
#include "support/oracles.hpp"

using namespace longppl;

namespace {

std::string dump_line(const nlohmann::json& j) { return j.dump() + "\n"; }

nlohmann::json record(const std::string& doc, std::size_t i, const std::string& text, std::size_t start) {
  return {{"doc_id", doc},
          {"token_index", i},
          {"token_text", text},
          {"span", {start, start + text.size()}},
          {"logp_long", -0.5},
          {"logp_short", -1.0},
          {"short_ctx_len", i}};
}

// Local HTTP server on an ephemeral port, stopped on destruction.
class MockServer {
 public:
  explicit MockServer(httplib::Server::Handler handler) {
    server_.Post("/v1/score", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/score"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RemoteScorerOptions fast_options(const std::string& endpoint) {
  RemoteScorerOptions o;
  o.endpoint = endpoint;
  o.model = "mock";
  o.max_retries = 3;
  o.initial_backoff = std::chrono::milliseconds(1);
  o.timeout = std::chrono::seconds(5);
  return o;
}

}  // namespace

TEST_SUITE("dump") {
  TEST_CASE("write then read round trips exactly") {
    std::mt19937_64 rng(21);
    std::vector<ScoredDoc> docs;
    for (int i = 0; i < 4; ++i) docs.push_back(oracle::random_scored_doc(rng, "doc" + std::to_string(i), 30 + i));
    std::stringstream ss;
    write_dump(docs, ss);
    const auto back = read_dump(ss);
    REQUIRE(back.size() == docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      CHECK(back[d].doc_id == docs[d].doc_id);
      CHECK(back[d].records == docs[d].records);
      CHECK(back[d].tokens == docs[d].tokens);
    }
  }

  TEST_CASE("diagnostics are appended and ignored on read") {
    std::mt19937_64 rng(2);
    std::vector<ScoredDoc> docs{oracle::random_scored_doc(rng, "a", 5)};
    std::vector<std::vector<TokenDiagnostics>> diag{std::vector<TokenDiagnostics>(5, {3.0, -0.5, true, 5.0})};
    std::stringstream ss;
    write_dump(docs, ss, diag);
    const auto first = nlohmann::json::parse(ss.str().substr(0, ss.str().find('\n')));
    CHECK(first.at("is_key") == true);
    CHECK(first.at("soft_w") == 5.0);
    CHECK(read_dump(ss)[0].records == docs[0].records);
    std::vector<std::vector<TokenDiagnostics>> short_diag{std::vector<TokenDiagnostics>(4)};
    std::stringstream bad;
    CHECK_THROWS_AS(write_dump(docs, bad, short_diag), ContractError);
  }

  TEST_CASE("missing logp_short names the field and line") {
    auto r0 = record("x", 0, "a", 0);
    auto r1 = record("x", 1, "b", 1);
    r1.erase("logp_short");
    std::stringstream ss(dump_line(r0) + dump_line(r1));
    try {
      read_dump(ss);
      FAIL("expected ParseError");
    } catch (const ValidationError&) {
      FAIL("expected a schema error, not a value error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("logp_short") != std::string::npos);
    }
  }

  TEST_CASE("positive log-probability is a validation error") {
    auto r = record("x", 0, "a", 0);
    r["logp_long"] = 0.25;
    std::stringstream ss(dump_line(r));
    CHECK_THROWS_AS(read_dump(ss), ValidationError);
  }

  TEST_CASE("structural problems") {
    std::stringstream not_json("{oops\n");
    CHECK_THROWS_AS(read_dump(not_json), ParseError);
    auto skip = record("x", 1, "a", 0);
    std::stringstream gap(dump_line(skip));
    CHECK_THROWS_AS(read_dump(gap), ValidationError);
    auto a = record("x", 0, "a", 0), b = record("y", 0, "b", 0), c = record("x", 1, "c", 1);
    std::stringstream interleaved(dump_line(a) + dump_line(b) + dump_line(c));
    CHECK_THROWS_AS(read_dump(interleaved), ValidationError);
    auto wide = record("x", 1, "b", 1);
    wide["short_ctx_len"] = 5;
    std::stringstream too_long(dump_line(record("x", 0, "a", 0)) + dump_line(wide));
    CHECK_THROWS_AS(read_dump(too_long), ValidationError);
    auto shifted = record("x", 1, "b", 4);
    std::stringstream hole(dump_line(record("x", 0, "a", 0)) + dump_line(shifted));
    CHECK_THROWS_AS(read_dump(hole), ValidationError);
  }

  TEST_CASE("blank lines are skipped and token_id is optional") {
    auto r = record("x", 0, "a", 0);
    r["token_id"] = 97;
    std::stringstream ss("\n" + dump_line(r) + "\n");
    const auto docs = read_dump(ss);
    REQUIRE(docs.size() == 1);
    CHECK(docs[0].tokens[0].id == 97);
    std::stringstream none(dump_line(record("x", 0, "a", 0)));
    CHECK(read_dump(none)[0].tokens[0].id == -1);
  }

  TEST_CASE("format_double keeps full precision") {
    for (double v : {-0.1, -1e-300, -std::log(3.0), -12345.678901234567}) {
      CHECK(std::stod(format_double(v)) == v);
    }
  }
}

TEST_SUITE("remote") {
  TEST_CASE("fixed logprobs come back per prompt token") {
    std::atomic<int> hits{0};
    MockServer server([&](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      const auto body = nlohmann::json::parse(req.body);
      const auto n = body.at("prompt_token_ids").size();
      nlohmann::json lp = nlohmann::json::array();
      for (std::size_t i = 0; i < n; ++i) lp.push_back(-0.25 * static_cast<double>(i + 1));
      res.set_content(nlohmann::json{{"token_logprobs", lp}}.dump(), "application/json");
    });
    RemoteScorer scorer(fast_options(server.endpoint()));
    const std::vector<TokenId> ids{5, 6, 7, 8};
    const auto lp = scorer.score_sequence(ids, 0);
    CHECK(lp == std::vector<double>{-0.25, -0.5, -0.75, -1.0});
    CHECK(scorer.logprob(std::span<const TokenId>(ids.data(), 2), 9) == -0.75);
    CHECK(hits == 2);
    CHECK(scorer.requests_sent() == 2);
  }

  TEST_CASE("a short response is a protocol error") {
    MockServer server([](const httplib::Request& req, httplib::Response& res) {
      const auto n = nlohmann::json::parse(req.body).at("prompt_token_ids").size();
      res.set_content(nlohmann::json{{"token_logprobs", std::vector<double>(n - 1, -1.0)}}.dump(),
                      "application/json");
    });
    RemoteScorer scorer(fast_options(server.endpoint()));
    const std::vector<TokenId> ids{1, 2, 3};
    CHECK_THROWS_AS(scorer.score_sequence(ids, 0), ProtocolError);
  }

  TEST_CASE("server errors are retried") {
    std::atomic<int> hits{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
      if (++hits <= 2) {
        res.status = 500;
        return;
      }
      res.set_content(R"({"token_logprobs": [null, -1.5]})", "application/json");
    });
    RemoteScorer scorer(fast_options(server.endpoint()));
    const std::vector<TokenId> ids{1, 2};
    const auto lp = scorer.score_sequence(ids, 0);
    CHECK(hits == 3);
    CHECK(std::isnan(lp[0]));
    CHECK(lp[1] == -1.5);
  }

  TEST_CASE("client errors are not retried") {
    std::atomic<int> hits{0};
    MockServer server([&](const httplib::Request&, httplib::Response& res) {
      ++hits;
      res.status = 400;
    });
    RemoteScorer scorer(fast_options(server.endpoint()));
    const std::vector<TokenId> ids{1};
    CHECK_THROWS_AS(scorer.score_sequence(ids, 3), ScoringError);
    CHECK(hits == 1);
  }

  TEST_CASE("null for a needed token is a scoring error") {
    MockServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"token_logprobs": [null]})", "application/json");
    });
    RemoteScorer scorer(fast_options(server.endpoint()));
    CHECK_THROWS_AS(scorer.logprob({}, 4), ScoringError);
  }

  TEST_CASE("endpoint validation") {
    CHECK_THROWS_AS(RemoteScorer{fast_options("localhost:8000/x")}, ConfigError);
    auto o = fast_options("http://127.0.0.1:1/x");
    o.max_retries = -1;
    CHECK_THROWS_AS(RemoteScorer{o}, ConfigError);
  }
}
