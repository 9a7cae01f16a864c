#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "longppl/metrics.hpp"
#include "longppl/scoring.hpp"
#include "longppl/tokenizer.hpp"

namespace longppl {

// Product-moment correlation. Needs equal lengths >= 3 and non-zero
// variance on both sides (UndefinedMetricError otherwise).
double pearson(std::span<const double> xs, std::span<const double> ys);

struct BenchmarkRow {
  std::string model_name;
  double metric_value = 0.0;
  double benchmark_score = 0.0;
};

struct BenchmarkScoreTable {
  std::vector<BenchmarkRow> rows;

  void validate() const;  // >= 3 rows, unique names, finite values
};

// [{"model_name", "metric_value", "benchmark_score"}, ...] or {"rows": [...]}.
BenchmarkScoreTable parse_score_table(const nlohmann::json& j);
BenchmarkScoreTable load_score_table(const std::string& path);

struct CorrelationReport {
  double r = 0.0;
  std::size_t n = 0;
  BenchmarkScoreTable table;
};

void to_json(nlohmann::json& j, const CorrelationReport& r);

CorrelationReport correlate(const BenchmarkScoreTable& table);

enum class AnnotateFormat { ansi, html };

AnnotateFormat annotate_format_from_string(std::string_view s);

struct KeySpan {
  Span span;
  std::size_t token_index = 0;
  std::optional<double> lpg;
  std::optional<double> lpv;
};

struct AnnotatedDoc {
  std::string doc_id;
  std::string source_text;
  std::vector<KeySpan> spans;  // increasing, non-overlapping
};

// One KeySpan per key token. Records, when given, supply LPG/LPV.
AnnotatedDoc annotate(const TokenizedDoc& doc, const KeyTokenMask& mask,
                      std::span<const TokenScoreRecord> records = {});

std::string render(const AnnotatedDoc& doc, AnnotateFormat format);

// Inverse of render: the plain text and the highlighted spans.
struct ParsedAnnotation {
  std::string text;
  std::vector<Span> spans;
};

ParsedAnnotation parse_rendered(std::string_view rendered, AnnotateFormat format);

}  // namespace longppl
