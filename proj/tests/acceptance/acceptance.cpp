// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "longppl/alignment.hpp"
#include "longppl/analysis.hpp"
#include "longppl/dump.hpp"
#include "longppl/longce.hpp"
#include "longppl/metrics.hpp"
#include "longppl/ngram.hpp"
#include "longppl/scoring.hpp"
#include "longppl/synthetic.hpp"
#include "longppl/tiny_lm.hpp"
#include "support/oracles.hpp"

using namespace longppl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1: metric formulas against product-form oracles ----
Outcome formula_oracle() {
  std::vector<ScoredDoc> docs;
  std::ifstream in(std::string(LONGPPL_TEST_DATA) + "/small_dump.jsonl");
  for (auto& d : read_dump(in)) docs.push_back(std::move(d));
  std::mt19937_64 rng(2024);
  for (std::size_t i = 0; docs.size() < 10; ++i) {
    docs.push_back(oracle::random_scored_doc(rng, "fixture-" + std::to_string(i), 40 + 60 * i, 0.15));
  }
  const InfluenceConfig cfg;
  double worst = 0.0;
  std::size_t keyed = 0;
  for (const auto& d : docs) {
    const auto lp = d.logp_long();
    const auto ls = d.logp_short();
    worst = std::max(worst, oracle::rel_err(compute_ppl(lp), oracle::ppl(lp)));
    worst = std::max(worst, oracle::rel_err(compute_longppl_soft(d, cfg), oracle::longppl_soft(lp, ls, cfg.gamma)));
    std::vector<bool> key;
    for (const auto& r : d.records) key.push_back(oracle::is_key(r.logp_long, r.logp_short, cfg.alpha, cfg.beta));
    const auto mask = select_key_tokens(d, cfg);
    if (mask.flags != key) return {false, d.doc_id + ": key flags differ from the oracle"};
    const auto lppl = compute_longppl(lp, mask);
    if (lppl.defined() != (mask.n_key() > 0)) return {false, d.doc_id + ": LongPPL definedness is wrong"};
    if (lppl.defined()) {
      ++keyed;
      worst = std::max(worst, oracle::rel_err(*lppl.value, oracle::longppl(lp, key)));
    }
  }
  return {worst <= 1e-12 && keyed == docs.size(),
          "10 docs, " + std::to_string(keyed) + " with key tokens, max rel err " + fmt("%.2e", worst)};
}

// ---- 2: block sliding window against per-token truncation ----
Outcome sliding_window() {
  std::mt19937_64 rng(5);
  const auto doc = encode(oracle::random_text(rng, 1150), TokenizerSpec::byte_level(), "five-k");
  if (doc.size() < 5000) return {false, "fixture has only " + std::to_string(doc.size()) + " tokens"};
  const std::vector<TokenizedDoc> corpus{doc};
  const auto lm = ngram_lm_train(corpus, 5, 0.1, 256);
  const auto ids = doc.ids();
  for (std::size_t K : {3, 64}) {
    const auto got = score_short_sliding(doc, lm, {K, 1});
    const auto expected = oracle::truncated_scores(ids, lm, K);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (got[i].logp != expected[i] || got[i].ctx_len != std::min(i, K)) {
        return {false, "K=" + std::to_string(K) + " differs at token " + std::to_string(i)};
      }
    }
  }

  const auto big = encode(oracle::random_text(rng, 2800), TokenizerSpec::byte_level(), "twelve-k");
  const std::vector<TokenizedDoc> big_corpus{big};
  const auto big_lm = ngram_lm_train(big_corpus, 3, 0.1, 256);
  const WindowConfig w{4096, 1024};
  const auto short_scores = score_short_sliding(big, big_lm, w);
  std::size_t checked = 0;
  for (std::size_t i = w.K + w.d; i < big.size(); ++i, ++checked) {
    const auto len = short_scores[i].ctx_len;
    if (len < w.K || len >= w.K + w.d) {
      return {false, "token " + std::to_string(i) + " has short_ctx_len " + std::to_string(len)};
    }
  }
  return {checked > 0, "d=1 bit-exact on " + std::to_string(doc.size()) + " tokens for K=3,64; bounds hold on " +
                           std::to_string(checked) + " tokens of a " + std::to_string(big.size()) +
                           "-token doc"};
}

// ---- 3 and 4: key-token selection on oracle-scored lines tasks ----
struct Pooled {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
};

void pool(Pooled& p, const SelectionMetrics& m) {
  p.tp += m.true_pos;
  p.fp += m.false_pos;
  p.fn += m.false_neg;
}

std::vector<LabeledDoc> selection_docs(std::size_t n_hard_lines) {
  std::vector<LabeledDoc> out;
  for (std::uint64_t i = 0; i < 100; ++i) {
    LinesTaskSpec spec;
    spec.n_lines = 40;
    spec.target_line = i % 5;
    spec.n_hard_lines = n_hard_lines;
    spec.seed = 300 + i;
    out.push_back(generate_lines_task(spec, TokenizerSpec::byte_level(), "sel-" + std::to_string(i)));
  }
  return out;
}

const WindowConfig kSelectionWindow{256, 64};

Outcome synthetic_selection() {
  const double p_long = std::exp(-0.105);
  const OracleSpec os{p_long, p_long * std::exp(-4.5), 0.5, std::nullopt, std::nullopt};
  Pooled p;
  for (const auto& labeled : selection_docs(0)) {
    const auto scorer = oracle_scorer(labeled, os, 256);
    const auto scored = score_doc(labeled.doc, *scorer, kSelectionWindow);
    pool(p, selection_accuracy(select_key_tokens(scored, {}), labeled));
  }
  return {p.precision() == 1.0 && p.recall() == 1.0,
          "100 docs, " + std::to_string(p.tp) + " answer tokens, precision " + fmt("%.6f", p.precision()) +
              " recall " + fmt("%.6f", p.recall())};
}

Outcome lpv_necessity() {
  const double p_long = std::exp(-0.105);
  const OracleSpec os{p_long, p_long * std::exp(-4.5), 0.5, std::exp(-3.0), std::exp(-6.0)};
  const InfluenceConfig lpg_only{2.0, -std::numeric_limits<double>::infinity(), 5.0};
  Pooled gain_only, both;
  std::size_t hard = 0;
  for (const auto& labeled : selection_docs(3)) {
    const auto scorer = oracle_scorer(labeled, os, 256);
    const auto scored = score_doc(labeled.doc, *scorer, kSelectionWindow);
    pool(gain_only, selection_accuracy(select_key_tokens(scored, lpg_only), labeled));
    pool(both, selection_accuracy(select_key_tokens(scored, {}), labeled));
    hard += labeled.hard_token_indices.size();
  }
  return {hard > 0 && gain_only.precision() < 1.0 && both.precision() == 1.0 && both.recall() == 1.0,
          std::to_string(hard) + " hard tokens; LPG-only precision " + fmt("%.4f", gain_only.precision()) +
              ", LPG+LPV precision " + fmt("%.4f", both.precision()) + " recall " + fmt("%.4f", both.recall())};
}

// ---- 5: gradients against central finite differences ----
Outcome gradient_check() {
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TinyLMConfig c;
    c.vocab_size = 17;
    c.context_window = 48;
    c.embedding_dim = 8;
    c.hidden_dim = 12;
    c.conv_width = 4;
    c.n_heads = 2;
    c.seed = seed;
    TinyLM m(c);
    std::mt19937_64 rng(900 + seed);
    std::uniform_int_distribution<TokenId> tok(0, 16);
    std::uniform_real_distribution<double> wd(0.1, 5.0);
    std::vector<std::vector<TokenId>> batch{std::vector<TokenId>(20), std::vector<TokenId>(33)};
    std::vector<std::vector<double>> w;
    for (auto& s : batch) {
      for (auto& t : s) t = tok(rng);
      w.emplace_back(s.size());
      for (auto& x : w.back()) x = wd(rng);
    }
    const auto g = tiny_lm_gradients(m, batch, w);
    auto p = m.parameters();
    std::uniform_int_distribution<std::size_t> coord(0, p.size() - 1);
    for (int k = 0; k < 24; ++k, ++coords) {
      const auto i = coord(rng);
      const double old = p[i], h = 1e-5;
      p[i] = old + h;
      const double up = tiny_lm_weighted_loss(m, batch, w);
      p[i] = old - h;
      const double down = tiny_lm_weighted_loss(m, batch, w);
      p[i] = old;
      const double fd = (up - down) / (2 * h);
      const double scale = std::max({std::fabs(fd), std::fabs(g.grad[i]), 1e-7});
      worst = std::max(worst, std::fabs(fd - g.grad[i]) / scale);
    }
  }
  return {worst < 1e-4, std::to_string(coords) + " coordinates over 5 seeds, max rel err " + fmt("%.2e", worst)};
}

// ---- 6: LongCE against CE on the lines corpus ----
//
// Each seed pretrains a fresh model with CE on 4-line documents, where the
// record sits inside any short window, then fine-tunes two copies on 16-line
// documents whose answer is beyond the 64-token short context: one with CE,
// one with LongCE.
std::vector<TrainingExample> lines_examples(std::size_t n_lines, std::size_t limit, std::size_t n_docs,
                                            std::uint64_t seed, const TokenizerSpec& tok,
                                            const LinesTaskSpec& base) {
  auto spec = base;
  spec.n_lines = n_lines;
  spec.seed = seed;
  std::vector<TrainingExample> out;
  for (const auto& d : generate_lines_corpus(spec, n_docs, tok, limit)) {
    out.push_back({d.doc.ids(), d.answer_token_indices});
  }
  return out;
}

Outcome longce_gain() {
  LinesTaskSpec base;
  base.value_digits = 1;
  base.filler_vocab = {"amber", "basin", "cedar", "delta", "ember"};
  base.n_lines = 16;
  const auto tok = lines_task_tokenizer(base);
  const auto pretrain_set = lines_examples(4, 4, 20000, 7, tok, base);
  const auto train_set = lines_examples(16, 3, 20000, 0, tok, base);
  const auto eval_set = lines_examples(16, 3, 200, 1'000'000, tok, base);

  TinyLMConfig mc;
  mc.vocab_size = tok.vocab_size();
  mc.context_window = 256;
  mc.embedding_dim = 32;
  mc.hidden_dim = 64;
  mc.conv_width = 6;
  mc.n_heads = 4;

  TrainConfig pre;
  pre.loss_kind = LossKind::ce;
  pre.learning_rate = 0.1;
  pre.momentum = 0.9;
  pre.grad_clip = 1.0;
  pre.steps = 3000;
  pre.batch_size = 8;

  TrainConfig fine = pre;
  fine.learning_rate = 0.03;
  fine.steps = 300;
  fine.K_short = 64;
  fine.d = 16;
  fine.gamma = 5.0;

  int wins = 0;
  std::string pairs;
  std::vector<StepLog> ce_log0;
  std::optional<TinyLM> pretrained0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    mc.seed = seed;
    pre.seed = 500 + seed;
    fine.seed = 1000 + seed;
    const auto base_model = train(TinyLM(mc), pretrain_set, pre).model;
    fine.loss_kind = LossKind::ce;
    const auto ce = train(base_model, train_set, fine);
    fine.loss_kind = LossKind::longce;
    const auto lce = train(base_model, train_set, fine);
    const double ce_nll = answer_nll(ce.model, eval_set);
    const double lce_nll = answer_nll(lce.model, eval_set);
    if (lce_nll < ce_nll) ++wins;
    std::printf("  seed %llu: CE %.4f  LongCE %.4f\n", static_cast<unsigned long long>(seed), ce_nll, lce_nll);
    std::fflush(stdout);
    if (seed == 0) {
      ce_log0 = ce.log;
      pretrained0 = base_model;
    }
  }

  // K_short above the document length makes every short context the full
  // prefix, so every LongCE weight is exactly 1.
  auto ones = fine;
  ones.seed = 1000;
  ones.loss_kind = LossKind::longce;
  ones.K_short = 128;
  ones.d = 16;
  const auto ones_run = train(*pretrained0, train_set, ones);
  double max_diff = 0.0;
  bool all_one = ones_run.log.size() == ce_log0.size();
  for (std::size_t i = 0; all_one && i < ce_log0.size(); ++i) {
    max_diff = std::max(max_diff, std::fabs(ones_run.log[i].loss - ce_log0[i].loss));
    all_one = ones_run.log[i].max_weight == 1.0 && ones_run.log[i].mean_weight == 1.0;
  }
  return {wins >= 8 && all_one && max_diff <= 1e-6,
          "LongCE lower answer NLL in " + std::to_string(wins) + "/10 pairs; all-ones trajectory max |dloss| " +
              fmt("%.2e", max_diff) + (all_one ? "" : " (weights were not all 1)")};
}

// ---- 7: key-token projection between two tokenizations ----
Outcome alignment_soundness() {
  std::mt19937_64 rng(71);
  std::size_t checked_tokens = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto text = oracle::random_text(rng, 25);
    const auto evaluator = encode(text, make_bpe(oracle::random_merges(rng, text, 12)));
    const auto evaluated = encode(text, make_bpe(oracle::random_merges(rng, text, 14)));
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> wdist(0.0, 5.0);
    std::vector<bool> flags;
    std::vector<double> w;
    for (std::size_t i = 0; i < evaluator.size(); ++i) {
      flags.push_back(coin(rng));
      w.push_back(wdist(rng));
    }
    const auto allowed = oracle::key_bytes(evaluator, flags);
    const auto hard = project_key_tokens_hard(evaluator, KeyTokenMask::from_flags(flags), evaluated).flags;
    const auto fail = [&](const std::string& what) { return Outcome{false, "fixture " + std::to_string(trial) + ": " + what}; };

    // decode subset
    const auto projected = oracle::key_bytes(evaluated, hard);
    for (std::size_t c = 0; c < text.size(); ++c) {
      if (projected[c] && !allowed[c]) return fail("projected text leaves the key text");
    }
    // maximality: every excluded token would break the subset condition
    for (std::size_t t = 0; t < evaluated.size(); ++t, ++checked_tokens) {
      if (hard[t]) continue;
      const auto& span = evaluated.tokens[t].span;
      bool breaks = span.empty();
      for (std::size_t c = span.start; c < span.end; ++c) breaks = breaks || !allowed[c];
      if (!breaks) return fail("token " + std::to_string(t) + " could be added");
    }
    if (project_key_tokens_hard(evaluator, KeyTokenMask::from_flags(flags), evaluator).flags != flags) {
      return fail("identity hard projection changed the mask");
    }
    if (project_weights_soft(evaluator, w, evaluator) != w) return fail("identity soft projection changed weights");
    const double c = wdist(rng);
    for (double v : project_weights_soft(evaluator, std::vector<double>(evaluator.size(), c), evaluated)) {
      if (v != c) return fail("soft projection of a constant is not exact");
    }
  }
  return {true, "50 fixtures, " + std::to_string(checked_tokens) + " evaluated tokens"};
}

// ---- 8: Pearson correlation ----
Outcome correlation_fixtures() {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 3.0);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> x(15), up(15), down(15);
    for (auto& v : x) v = g(rng);
    const double a = 0.5 + t, b = g(rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      up[i] = a * x[i] + b;
      down[i] = -a * x[i] + b;
    }
    worst = std::max({worst, std::fabs(pearson(x, up) - 1.0), std::fabs(pearson(x, down) + 1.0)});
  }
  double worst_inv = 0.0;
  bool bounded = true;
  std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-50.0, 50.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(12), y(12);
    for (auto& v : x) v = g(rng);
    for (auto& v : y) v = g(rng);
    const double r = pearson(x, y);
    bounded = bounded && r >= -1.0 && r <= 1.0;
    worst_inv = std::max(worst_inv, std::fabs(pearson(y, x) - r));
    const double a = scale(rng), b = shift(rng);
    std::vector<double> x2(x);
    for (auto& v : x2) v = a * v + b;
    worst_inv = std::max(worst_inv, std::fabs(pearson(x2, y) - r));
    for (auto& v : x2) v = -v;
    worst_inv = std::max(worst_inv, std::fabs(pearson(x2, y) + r));
  }
  return {worst <= 1e-12 && worst_inv <= 1e-12 && bounded,
          "linear fixtures max |r -+ 1| " + fmt("%.2e", worst) + ", invariants max deviation " +
              fmt("%.2e", worst_inv)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "formula oracle equivalence", 1.0, formula_oracle},
      {2, "sliding-window exactness", 30.0, sliding_window},
      {3, "synthetic key-token selection", 60.0, synthetic_selection},
      {4, "LPV necessity", 60.0, lpv_necessity},
      {5, "gradient correctness", 60.0, gradient_check},
      {6, "LongCE vs CE directional gain", 900.0, longce_gain},
      {7, "alignment soundness", 60.0, alignment_soundness},
      {8, "correlation fixtures", 60.0, correlation_fixtures},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("criterion %d %s: %s (%s; %.2f s of %.0f s)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
