#include "longppl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <set>

#include <json.hpp>

#include "longppl/error.hpp"

namespace longppl {

std::vector<std::string> default_filler_vocab() {
  return {"amber",   "anchor",  "arch",    "atlas",   "basin",   "beacon",  "birch",  "bolt",
          "brisk",   "canyon",  "cedar",   "chalk",   "clause",  "cobalt",  "comet",  "coral",
          "crest",   "delta",   "dune",    "ember",   "fable",   "fern",    "flint",  "forge",
          "garnet",  "glade",   "granite", "harbor",  "hazel",   "heron",   "ivory",  "jasper",
          "juniper", "kettle",  "lagoon",  "lantern", "ledger",  "linen",   "maple",  "marble",
          "meadow",  "mosaic",  "nectar",  "nimbus",  "oasis",   "onyx",    "orchid", "pebble",
          "pilot",   "quartz",  "quill",   "raven",   "ripple",  "saffron", "signal", "slate",
          "summit",  "tender",  "thistle", "timber",  "velvet",  "willow",  "zephyr", "zinc"};
}

void LinesTaskSpec::validate() const {
  if (n_lines == 0) throw ConfigError("lines task needs at least one line");
  if (target_line >= n_lines) throw ConfigError("target_line must be < n_lines");
  if (value_digits == 0 || value_digits > 18) throw ConfigError("value_digits must be in [1, 18]");
  if (n_hard_lines > 0 && target_line + n_hard_lines >= n_lines) {
    throw ConfigError("hard lines must come after the target line");
  }
  std::set<std::string> unique(filler_vocab.begin(), filler_vocab.end());
  if (unique.size() != filler_vocab.size() || unique.size() < 2) {
    throw ConfigError("filler_vocab needs at least two distinct words");
  }
  for (const auto& w : filler_vocab) {
    if (w.empty() || w.find_first_of(" \t\n\r:?") != std::string::npos) {
      throw ConfigError("filler word '" + w + "' contains a separator");
    }
  }
  if (n_lines > filler_vocab.size() * (filler_vocab.size() - 1)) {
    throw ConfigError("filler_vocab too small for " + std::to_string(n_lines) + " distinct line names");
  }
}

namespace {

std::vector<std::size_t> tokens_overlapping(const TokenizedDoc& doc, Span span) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    const auto& s = doc.tokens[i].span;
    if (s.start < span.end && span.start < s.end) out.push_back(i);
  }
  return out;
}

}  // namespace

LabeledDoc generate_lines_task(const LinesTaskSpec& spec, const TokenizerSpec& tokenizer,
                               std::string doc_id) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto& words = spec.filler_vocab;

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(words.size() * (words.size() - 1));
  for (std::size_t a = 0; a < words.size(); ++a) {
    for (std::size_t b = 0; b < words.size(); ++b) {
      if (a != b) pairs.emplace_back(a, b);
    }
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::uint64_t lo = 1;
  for (std::size_t i = 1; i < spec.value_digits; ++i) lo *= 10;
  const std::uint64_t hi = lo * 10 - 1;
  const std::uint64_t space = spec.value_digits == 1 ? 10 : hi - lo + 1;
  std::uniform_int_distribution<std::uint64_t> value_dist(spec.value_digits == 1 ? 0 : lo, hi);
  std::set<std::uint64_t> used;

  std::vector<std::string> names(spec.n_lines);
  std::vector<std::string> values(spec.n_lines);
  for (std::size_t i = 0; i < spec.n_lines; ++i) {
    names[i] = words[pairs[i].first] + "-" + words[pairs[i].second];
    std::uint64_t v = value_dist(rng);
    if (space >= spec.n_lines) {
      while (used.contains(v)) v = value_dist(rng);
      used.insert(v);
    }
    values[i] = std::to_string(v);
  }

  std::string text;
  std::vector<Span> line_spans(spec.n_lines);
  std::vector<Span> value_spans(spec.n_lines);
  for (std::size_t i = 0; i < spec.n_lines; ++i) {
    const std::size_t start = text.size();
    text += "line " + names[i] + ": REGISTER_CONTENT is ";
    value_spans[i] = {text.size(), text.size() + values[i].size()};
    text += values[i] + "\n";
    line_spans[i] = {start, text.size()};
  }
  const auto& target_name = names[spec.target_line];
  text += "Question: what is the REGISTER_CONTENT in line " + target_name + "?\n";
  text += "Answer: line " + target_name + ": REGISTER_CONTENT is ";
  const Span answer_span{text.size(), text.size() + values[spec.target_line].size()};
  text += values[spec.target_line];

  LabeledDoc out;
  out.doc = encode(text, tokenizer, std::move(doc_id));
  out.answer_value = values[spec.target_line];
  out.answer_span = answer_span;
  out.answer_token_indices = tokens_overlapping(out.doc, answer_span);
  {
    std::string decoded;
    for (auto i : out.answer_token_indices) decoded += out.doc.tokens[i].text;
    if (decoded != out.answer_value) {
      throw ContractError("tokenizer merges the answer value with surrounding text");
    }
  }
  const auto target_tokens = tokens_overlapping(out.doc, line_spans[spec.target_line]);
  out.target_line_first_token = target_tokens.front();
  out.target_line_end_token = target_tokens.back() + 1;
  for (std::size_t i = spec.n_lines - spec.n_hard_lines; i < spec.n_lines; ++i) {
    if (i == spec.target_line) continue;
    auto hard = tokens_overlapping(out.doc, value_spans[i]);
    out.hard_token_indices.insert(out.hard_token_indices.end(), hard.begin(), hard.end());
  }
  return out;
}

TokenizerSpec lines_task_tokenizer(const LinesTaskSpec& spec) {
  LinesTaskSpec probe = spec;
  probe.target_line = 0;
  probe.n_hard_lines = 0;
  probe.validate();
  if (spec.value_digits > 4) throw ConfigError("lines_task_tokenizer supports value_digits <= 4");
  std::vector<std::string> words = {"line", "REGISTER_CONTENT", "is", "Question:", "what", "the", "in", "Answer:"};
  for (const auto& a : spec.filler_vocab) {
    for (const auto& b : spec.filler_vocab) {
      if (a == b) continue;
      words.push_back(a + "-" + b + ":");
      words.push_back(a + "-" + b + "?");
    }
  }
  std::uint64_t lo = 1;
  for (std::size_t i = 1; i < spec.value_digits; ++i) lo *= 10;
  for (std::uint64_t v = spec.value_digits == 1 ? 0 : lo; v < lo * 10; ++v) words.push_back(std::to_string(v));
  return TokenizerSpec::whitespace(std::move(words));
}

std::vector<LabeledDoc> generate_lines_corpus(const LinesTaskSpec& spec, std::size_t n_docs,
                                              const TokenizerSpec& tokenizer,
                                              std::size_t target_line_limit,
                                              const std::string& id_prefix) {
  const std::size_t limit = target_line_limit == 0 ? spec.n_lines : target_line_limit;
  if (limit > spec.n_lines) throw ConfigError("target_line_limit exceeds n_lines");
  std::vector<LabeledDoc> out;
  out.reserve(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) {
    LinesTaskSpec doc_spec = spec;
    doc_spec.seed = spec.seed + i;
    std::mt19937_64 rng(doc_spec.seed ^ 0x9e3779b97f4a7c15ULL);
    doc_spec.target_line = std::uniform_int_distribution<std::size_t>(0, limit - 1)(rng);
    char id[24];
    std::snprintf(id, sizeof id, "%06zu", i);
    out.push_back(generate_lines_task(doc_spec, tokenizer, id_prefix + id));
  }
  return out;
}

void write_tasks_jsonl(std::span<const LabeledDoc> docs, std::ostream& out) {
  for (const auto& d : docs) {
    nlohmann::json j = {{"doc_id", d.doc.doc_id},
                        {"text", d.doc.source_text},
                        {"answer_span", {d.answer_span.start, d.answer_span.end}},
                        {"answer_value", d.answer_value}};
    out << j.dump() << '\n';
  }
}

void OracleSpec::validate() const {
  auto in_unit = [](double p) { return p > 0.0 && p <= 1.0; };
  if (!in_unit(p_answer_long) || !in_unit(p_answer_short) || !in_unit(p_filler)) {
    throw ConfigError("oracle probabilities must lie in (0, 1]");
  }
  if (!(p_answer_long > p_answer_short)) throw ConfigError("oracle needs p_answer_long > p_answer_short");
  if (p_hard_long.has_value() != p_hard_short.has_value()) {
    throw ConfigError("oracle hard-class probabilities must be given together");
  }
  if (p_hard_long) {
    if (!in_unit(*p_hard_long) || !in_unit(*p_hard_short)) {
      throw ConfigError("oracle probabilities must lie in (0, 1]");
    }
    if (!(*p_hard_long > *p_hard_short)) throw ConfigError("oracle needs p_hard_long > p_hard_short");
  }
}

OracleScorer::OracleScorer(LabeledDoc labeled, OracleSpec spec, std::size_t vocab_size)
    : labeled_(std::move(labeled)), spec_(spec), vocab_size_(vocab_size) {
  spec_.validate();
  if (vocab_size_ < 2) throw ConfigError("oracle needs a vocabulary of at least two ids");
  ids_ = labeled_.doc.ids();
  classes_.assign(ids_.size(), TokenClass::filler);
  for (auto i : labeled_.answer_token_indices) classes_.at(i) = TokenClass::answer;
  if (spec_.p_hard_long) {
    for (auto i : labeled_.hard_token_indices) classes_.at(i) = TokenClass::hard;
  }
}

double OracleScorer::logprob_at(std::size_t position, std::size_t ctx_start, TokenId target) const {
  if (position >= ids_.size()) throw ScoringError(position, "oracle position past the document end");
  const bool sees_target_line = ctx_start <= labeled_.target_line_first_token;
  double p = spec_.p_filler;
  switch (classes_[position]) {
    case TokenClass::answer:
      p = sees_target_line ? spec_.p_answer_long : spec_.p_answer_short;
      break;
    case TokenClass::hard:
      p = sees_target_line ? *spec_.p_hard_long : *spec_.p_hard_short;
      break;
    case TokenClass::filler:
      break;
  }
  if (target == ids_[position]) return std::log(p);
  return std::log((1.0 - p) / static_cast<double>(vocab_size_ - 1));
}

double OracleScorer::logprob(std::span<const TokenId> context, TokenId target) const {
  const std::size_t len = context.size();
  std::optional<std::size_t> found;
  for (std::size_t pos = len; pos < ids_.size(); ++pos) {
    if (std::equal(context.begin(), context.end(), ids_.begin() + static_cast<std::ptrdiff_t>(pos - len))) {
      if (found) throw ScoringError(pos, "oracle context occurs more than once in its document");
      found = pos;
      if (len == 0) break;  // the empty context means the document start
    }
  }
  if (!found) throw ScoringError(len, "oracle context is not part of its document");
  return logprob_at(*found, *found - len, target);
}

std::vector<double> OracleScorer::score_sequence(std::span<const TokenId> seq,
                                                 std::size_t doc_offset) const {
  if (doc_offset + seq.size() > ids_.size() ||
      !std::equal(seq.begin(), seq.end(), ids_.begin() + static_cast<std::ptrdiff_t>(doc_offset))) {
    throw ScoringError(doc_offset, "oracle asked to score a sequence from another document");
  }
  std::vector<double> out;
  out.reserve(seq.size());
  for (std::size_t j = 0; j < seq.size(); ++j) out.push_back(logprob_at(doc_offset + j, doc_offset, seq[j]));
  return out;
}

std::unique_ptr<OracleScorer> oracle_scorer(const LabeledDoc& labeled, const OracleSpec& spec,
                                            std::size_t vocab_size) {
  return std::make_unique<OracleScorer>(labeled, spec, vocab_size);
}

SelectionMetrics selection_accuracy(const KeyTokenMask& mask, const LabeledDoc& labeled) {
  const std::size_t n = labeled.doc.size();
  if (mask.size() != n) throw ContractError("mask is not aligned with the labelled document");
  if (labeled.answer_token_indices.empty()) {
    throw UndefinedMetricError("selection accuracy needs at least one answer token");
  }
  std::vector<bool> positive(n, false);
  for (auto i : labeled.answer_token_indices) positive.at(i) = true;

  SelectionMetrics m;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.flags[i]) {
      positive[i] ? ++m.true_pos : ++m.false_pos;
    } else {
      positive[i] ? ++m.false_neg : ++m.true_neg;
    }
  }
  const auto d = [](std::size_t x) { return static_cast<double>(x); };
  m.accuracy = d(m.true_pos + m.true_neg) / d(n);
  m.recall = d(m.true_pos) / d(m.true_pos + m.false_neg);
  m.precision = m.true_pos + m.false_pos == 0 ? 0.0 : d(m.true_pos) / d(m.true_pos + m.false_pos);
  const double specificity =
      m.true_neg + m.false_pos == 0 ? 1.0 : d(m.true_neg) / d(m.true_neg + m.false_pos);
  m.balanced_accuracy = 0.5 * (m.recall + specificity);
  return m;
}

}  // namespace longppl
