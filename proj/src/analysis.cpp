#include "longppl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "longppl/error.hpp"

namespace longppl {

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ContractError("pearson needs equal-length inputs");
  if (xs.size() < 3) throw UndefinedMetricError("pearson needs at least 3 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw ContractError("pearson inputs must be finite");
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson is undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void BenchmarkScoreTable::validate() const {
  if (rows.size() < 3) {
    throw UndefinedMetricError("correlation needs at least 3 rows, got " + std::to_string(rows.size()));
  }
  std::set<std::string> names;
  for (const auto& r : rows) {
    if (!names.insert(r.model_name).second) throw ContractError("duplicate model name '" + r.model_name + "'");
    if (!std::isfinite(r.metric_value) || !std::isfinite(r.benchmark_score)) {
      throw ContractError("row '" + r.model_name + "' has a non-finite value");
    }
  }
}

BenchmarkScoreTable parse_score_table(const nlohmann::json& j) {
  const auto& rows = j.is_object() && j.contains("rows") ? j.at("rows") : j;
  if (!rows.is_array()) throw ParseError(0, "score table must be an array of rows");
  BenchmarkScoreTable table;
  try {
    for (const auto& r : rows) {
      table.rows.push_back({r.at("model_name").get<std::string>(), r.at("metric_value").get<double>(),
                            r.at("benchmark_score").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("bad score table row: ") + e.what());
  }
  return table;
}

BenchmarkScoreTable load_score_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return parse_score_table(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, path + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const CorrelationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.table.rows) {
    rows.push_back({{"model_name", row.model_name},
                    {"metric_value", row.metric_value},
                    {"benchmark_score", row.benchmark_score}});
  }
  j = {{"pearson_r", r.r}, {"n", r.n}, {"rows", rows}};
}

CorrelationReport correlate(const BenchmarkScoreTable& table) {
  table.validate();
  std::vector<double> xs, ys;
  for (const auto& row : table.rows) {
    xs.push_back(row.metric_value);
    ys.push_back(row.benchmark_score);
  }
  return {pearson(xs, ys), table.rows.size(), table};
}

AnnotateFormat annotate_format_from_string(std::string_view s) {
  if (s == "ansi") return AnnotateFormat::ansi;
  if (s == "html") return AnnotateFormat::html;
  throw ConfigError("unknown annotation format '" + std::string(s) + "'");
}

AnnotatedDoc annotate(const TokenizedDoc& doc, const KeyTokenMask& mask,
                      std::span<const TokenScoreRecord> records) {
  if (mask.flags.size() != doc.tokens.size()) {
    throw ContractError("mask covers " + std::to_string(mask.flags.size()) + " tokens, document has " +
                        std::to_string(doc.tokens.size()));
  }
  if (!records.empty() && records.size() != doc.tokens.size()) {
    throw ContractError("records do not match the document length");
  }
  AnnotatedDoc out{doc.doc_id, doc.source_text, {}};
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (!mask.flags[i]) continue;
    const Span s = doc.tokens[i].span;
    if (s.end > doc.source_text.size() || s.start >= s.end) {
      throw ContractError("token " + std::to_string(i) + " span is out of bounds");
    }
    if (s.start < prev_end) throw ContractError("token " + std::to_string(i) + " overlaps the previous key token");
    prev_end = s.end;
    KeySpan k{s, i, std::nullopt, std::nullopt};
    if (!records.empty()) {
      k.lpg = compute_lpg(records[i]);
      k.lpv = compute_lpv(records[i]);
    }
    out.spans.push_back(k);
  }
  return out;
}

namespace {

constexpr std::string_view kAnsiOpen = "\x1b[1;4;31m";
constexpr std::string_view kAnsiClose = "\x1b[0m";
constexpr std::string_view kHtmlPrefix = "<pre class=\"longppl\">";
constexpr std::string_view kHtmlSuffix = "</pre>\n";
constexpr std::string_view kMarkOpen = "<mark";
constexpr std::string_view kMarkClose = "</mark>";

void append_html_escaped(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string render(const AnnotatedDoc& doc, AnnotateFormat format) {
  const std::string& text = doc.source_text;
  std::string out;
  std::size_t pos = 0;
  if (format == AnnotateFormat::ansi) {
    if (text.find('\x1b') != std::string::npos) {
      throw ContractError("text containing ESC bytes cannot be rendered as ANSI");
    }
    for (const auto& k : doc.spans) {
      if (k.span.end > text.size() || k.span.start < pos) throw ContractError("annotation span out of bounds");
      out.append(text, pos, k.span.start - pos);
      out += kAnsiOpen;
      out.append(text, k.span.start, k.span.size());
      out += kAnsiClose;
      pos = k.span.end;
    }
    out.append(text, pos);
    return out;
  }
  out += kHtmlPrefix;
  for (const auto& k : doc.spans) {
    if (k.span.end > text.size() || k.span.start < pos) throw ContractError("annotation span out of bounds");
    append_html_escaped(out, std::string_view(text).substr(pos, k.span.start - pos));
    out += "<mark data-token=\"" + std::to_string(k.token_index) + "\"";
    if (k.lpg) out += " data-lpg=\"" + short_number(*k.lpg) + "\"";
    if (k.lpv) out += " data-lpv=\"" + short_number(*k.lpv) + "\"";
    out += ">";
    append_html_escaped(out, std::string_view(text).substr(k.span.start, k.span.size()));
    out += kMarkClose;
    pos = k.span.end;
  }
  append_html_escaped(out, std::string_view(text).substr(pos));
  out += kHtmlSuffix;
  return out;
}

ParsedAnnotation parse_rendered(std::string_view rendered, AnnotateFormat format) {
  ParsedAnnotation out;
  std::optional<std::size_t> open;
  if (format == AnnotateFormat::ansi) {
    std::size_t i = 0;
    while (i < rendered.size()) {
      if (rendered.substr(i).starts_with(kAnsiOpen)) {
        if (open) throw ParseError(0, "nested highlight");
        open = out.text.size();
        i += kAnsiOpen.size();
      } else if (rendered.substr(i).starts_with(kAnsiClose)) {
        if (!open) throw ParseError(0, "unbalanced highlight");
        out.spans.push_back({*open, out.text.size()});
        open.reset();
        i += kAnsiClose.size();
      } else {
        out.text += rendered[i++];
      }
    }
    if (open) throw ParseError(0, "unterminated highlight");
    return out;
  }

  if (!rendered.starts_with(kHtmlPrefix) || !rendered.ends_with(kHtmlSuffix)) {
    throw ParseError(0, "not a rendered annotation");
  }
  const auto body = rendered.substr(kHtmlPrefix.size(), rendered.size() - kHtmlPrefix.size() - kHtmlSuffix.size());
  std::size_t i = 0;
  while (i < body.size()) {
    const auto rest = body.substr(i);
    if (rest.starts_with(kMarkOpen)) {
      const auto gt = rest.find('>');
      if (gt == std::string_view::npos) throw ParseError(0, "unterminated <mark> tag");
      if (open) throw ParseError(0, "nested highlight");
      open = out.text.size();
      i += gt + 1;
    } else if (rest.starts_with(kMarkClose)) {
      if (!open) throw ParseError(0, "unbalanced highlight");
      out.spans.push_back({*open, out.text.size()});
      open.reset();
      i += kMarkClose.size();
    } else if (rest.front() == '&') {
      static constexpr std::pair<std::string_view, char> entities[] = {
          {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}};
      bool matched = false;
      for (const auto& [name, c] : entities) {
        if (rest.starts_with(name)) {
          out.text += c;
          i += name.size();
          matched = true;
          break;
        }
      }
      if (!matched) throw ParseError(0, "unknown HTML entity");
    } else {
      out.text += rest.front();
      ++i;
    }
  }
  if (open) throw ParseError(0, "unterminated highlight");
  return out;
}

}  // namespace longppl
