#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "longppl/error.hpp"
#include "longppl/metrics.hpp"
#include "longppl/synthetic.hpp"

using namespace longppl;

namespace {

TokenizerSpec fixture_bpe() {
  return load_bpe(std::string(LONGPPL_TEST_DATA) + "/lines_vocab.txt",
                  std::string(LONGPPL_TEST_DATA) + "/lines_merges.txt");
}

std::string answer_text(const LabeledDoc& d) {
  std::string out;
  for (auto i : d.answer_token_indices) out += d.doc.tokens[i].text;
  return out;
}

// "line <name>: REGISTER_CONTENT is <value>" for line k of the source text.
std::string record_value(const std::string& text, std::size_t k) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t i = 0; i <= k; ++i) std::getline(in, line);
  return line.substr(line.rfind(' ') + 1);
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("generation is deterministic in the seed") {
    LinesTaskSpec spec;
    spec.n_lines = 3;
    spec.seed = 42;
    const auto a = generate_lines_task(spec, TokenizerSpec::byte_level(), "a");
    const auto b = generate_lines_task(spec, TokenizerSpec::byte_level(), "a");
    CHECK(a.doc.source_text == b.doc.source_text);
    CHECK(a.answer_token_indices == b.answer_token_indices);
    spec.seed = 43;
    CHECK(generate_lines_task(spec, TokenizerSpec::byte_level()).doc.source_text != a.doc.source_text);
  }

  TEST_CASE("answer tokens decode to the target line's value") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      LinesTaskSpec spec;
      spec.n_lines = 12;
      spec.target_line = seed % 12;
      spec.seed = seed;
      for (const auto& tok : {TokenizerSpec::byte_level(), fixture_bpe()}) {
        const auto d = generate_lines_task(spec, tok);
        CHECK(answer_text(d) == d.answer_value);
        CHECK(d.answer_value.size() == spec.value_digits);
        CHECK(record_value(d.doc.source_text, spec.target_line) == d.answer_value);
        CHECK(d.doc.source_text.substr(d.answer_span.start, d.answer_span.size()) == d.answer_value);
        CHECK(d.answer_token_indices.back() + 1 == d.doc.size());
        CHECK_NOTHROW(d.doc.check_invariants());
      }
    }
  }

  TEST_CASE("document template") {
    LinesTaskSpec spec;
    spec.n_lines = 2;
    spec.value_digits = 3;
    spec.target_line = 1;
    const auto text = generate_lines_task(spec, TokenizerSpec::byte_level()).doc.source_text;
    CHECK(text.rfind("line ", 0) == 0);
    CHECK(text.find(": REGISTER_CONTENT is ") != std::string::npos);
    CHECK(text.find("\nQuestion: what is the REGISTER_CONTENT in line ") != std::string::npos);
    CHECK(text.find("?\nAnswer: line ") != std::string::npos);
  }

  TEST_CASE("1350 lines give roughly 32k subword tokens") {
    LinesTaskSpec spec;
    spec.n_lines = 1350;
    spec.target_line = 675;
    const auto d = generate_lines_task(spec, fixture_bpe());
    CHECK(d.doc.size() >= 24000);
    CHECK(d.doc.size() <= 40000);
  }

  TEST_CASE("spec validation") {
    LinesTaskSpec spec;
    spec.n_lines = 3;
    spec.target_line = 3;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.target_line = 0;
    spec.filler_vocab = {"a", "b"};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.filler_vocab = {"a b", "c"};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.filler_vocab = default_filler_vocab();
    spec.value_digits = 5;
    CHECK_THROWS_AS(lines_task_tokenizer(spec), ConfigError);
  }

  TEST_CASE("whitespace lines tokenizer covers every generated word") {
    LinesTaskSpec spec;
    spec.n_lines = 30;
    spec.value_digits = 2;
    spec.filler_vocab = {"amber", "basin", "cedar", "delta", "ember", "fern", "garnet"};
    const auto tok = lines_task_tokenizer(spec);
    const auto docs = generate_lines_corpus(spec, 20, tok, 5, "w-");
    REQUIRE(docs.size() == 20);
    CHECK(docs[3].doc.doc_id == "w-000003");
    for (const auto& d : docs) {
      for (const auto& t : d.doc.tokens) CHECK(t.id != 0);
      CHECK(d.target_line_first_token < 5 * 5);
      CHECK(d.answer_token_indices.size() == 1);
    }
    const auto again = generate_lines_corpus(spec, 20, tok, 5, "w-");
    CHECK(again[7].doc.source_text == docs[7].doc.source_text);
  }

  TEST_CASE("tasks JSONL") {
    LinesTaskSpec spec;
    spec.n_lines = 4;
    const auto docs = generate_lines_corpus(spec, 2, TokenizerSpec::byte_level());
    std::stringstream ss;
    write_tasks_jsonl(docs, ss);
    std::string line;
    std::getline(ss, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("doc_id") == "lines-000000");
    CHECK(j.at("answer_value") == docs[0].answer_value);
    CHECK(j.at("answer_span")[0] == docs[0].answer_span.start);
  }

  TEST_CASE("oracle scorer gives the constructed probabilities") {
    LinesTaskSpec spec;
    spec.n_lines = 40;
    spec.target_line = 2;
    const auto labeled = generate_lines_task(spec, TokenizerSpec::byte_level());
    const OracleSpec os{0.9, 0.01, 0.5, std::nullopt, std::nullopt};
    const auto scorer = oracle_scorer(labeled, os, 256);
    const auto a = labeled.answer_token_indices.front();
    const auto id = labeled.doc.tokens[a].id;
    CHECK(scorer->logprob_at(a, 0, id) == doctest::Approx(std::log(0.9)));
    const auto after_target = labeled.target_line_end_token + 1;
    CHECK(scorer->logprob_at(a, after_target, id) == doctest::Approx(std::log(0.01)));
    CHECK(scorer->logprob_at(5, 0, labeled.doc.tokens[5].id) == doctest::Approx(std::log(0.5)));
    CHECK(scorer->logprob_at(5, 3, labeled.doc.tokens[5].id) == doctest::Approx(std::log(0.5)));

    // probabilities over the vocabulary sum to one
    double total = 0.0;
    for (TokenId t = 0; t < 256; ++t) total += std::exp(scorer->logprob_at(a, after_target, t));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    const auto doc_scores = score_doc(labeled.doc, *scorer, {256, 64});
    const auto& r = doc_scores.records[a];
    CHECK(compute_lpg(r) == doctest::Approx(std::log(0.9 / 0.01)).epsilon(1e-12));
    CHECK(compute_lpg(r) == doctest::Approx(4.4998).epsilon(1e-4));
    const auto mask = select_key_tokens(doc_scores, {});
    CHECK(mask.flags[a]);
    const auto acc = selection_accuracy(mask, labeled);
    CHECK(acc.accuracy == 1.0);
    CHECK(acc.precision == 1.0);
    CHECK(acc.recall == 1.0);
  }

  TEST_CASE("oracle spec and selection errors") {
    CHECK_THROWS_AS((OracleSpec{0.1, 0.2, 0.5, std::nullopt, std::nullopt}.validate()), ConfigError);
    CHECK_THROWS_AS((OracleSpec{0.9, 0.1, 0.0, std::nullopt, std::nullopt}.validate()), ConfigError);
    CHECK_THROWS_AS((OracleSpec{0.9, 0.1, 0.5, 0.2, std::nullopt}.validate()), ConfigError);
    LinesTaskSpec spec;
    spec.n_lines = 3;
    const auto labeled = generate_lines_task(spec, TokenizerSpec::byte_level());
    CHECK_THROWS_AS(selection_accuracy(KeyTokenMask::from_flags({true}), labeled), ContractError);
    const auto perfect = [&] {
      std::vector<bool> f(labeled.doc.size(), false);
      for (auto i : labeled.answer_token_indices) f[i] = true;
      return KeyTokenMask::from_flags(f);
    }();
    CHECK(selection_accuracy(perfect, labeled).accuracy == 1.0);
    CHECK(selection_accuracy(perfect, labeled).balanced_accuracy == 1.0);
  }
}
