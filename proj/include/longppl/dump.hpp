#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "longppl/scoring.hpp"

namespace longppl {

// Optional per-token fields appended to a dump line by `select`.
struct TokenDiagnostics {
  double lpg = 0.0;
  double lpv = 0.0;
  bool is_key = false;
  double soft_w = 1.0;
};

// JSONL, one object per token:
//   {"doc_id", "token_index", "token_text", "span": [start, end],
//    "logp_long", "logp_short", "short_ctx_len"}
// plus "token_id" when known and the TokenDiagnostics fields when given.
// Floats are written with 17 significant digits.
void write_dump(std::span<const ScoredDoc> docs, std::ostream& out,
                std::span<const std::vector<TokenDiagnostics>> diagnostics = {});
void write_dump(std::span<const ScoredDoc> docs, const std::filesystem::path& path,
                std::span<const std::vector<TokenDiagnostics>> diagnostics = {});

// Throws ParseError (schema) or ValidationError (value bounds), both
// carrying the 1-based line number.
std::vector<ScoredDoc> read_dump(std::istream& in);
std::vector<ScoredDoc> read_dump(const std::filesystem::path& path);

std::string format_double(double value);

}  // namespace longppl
