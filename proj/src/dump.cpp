#include "longppl/dump.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "longppl/error.hpp"

namespace longppl {

using nlohmann::json;

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_dump(std::span<const ScoredDoc> docs, std::ostream& out,
                std::span<const std::vector<TokenDiagnostics>> diagnostics) {
  if (!diagnostics.empty() && diagnostics.size() != docs.size()) {
    throw ContractError("diagnostics must cover every document");
  }
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = docs[d];
    doc.check_invariants();
    if (!diagnostics.empty() && diagnostics[d].size() != doc.size()) {
      throw ContractError("diagnostics for doc '" + doc.doc_id + "' do not match its length");
    }
    const auto id_json = json(doc.doc_id).dump();
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& r = doc.records[i];
      const auto& t = doc.tokens[i];
      out << "{\"doc_id\":" << id_json << ",\"token_index\":" << r.token_index;
      if (t.id >= 0) out << ",\"token_id\":" << t.id;
      std::string text_json;
      try {
        text_json = json(t.text).dump();
      } catch (const json::type_error&) {
        throw ContractError("doc '" + doc.doc_id + "': token " + std::to_string(i) +
                            " text is not valid UTF-8 and cannot be stored in a dump");
      }
      out << ",\"token_text\":" << text_json << ",\"span\":[" << t.span.start << ',' << t.span.end << ']'
          << ",\"logp_long\":" << format_double(r.logp_long)
          << ",\"logp_short\":" << format_double(r.logp_short)
          << ",\"short_ctx_len\":" << r.short_ctx_len;
      if (!diagnostics.empty()) {
        const auto& g = diagnostics[d][i];
        out << ",\"lpg\":" << format_double(g.lpg) << ",\"lpv\":" << format_double(g.lpv)
            << ",\"is_key\":" << (g.is_key ? "true" : "false")
            << ",\"soft_w\":" << format_double(g.soft_w);
      }
      out << "}\n";
    }
  }
}

void write_dump(std::span<const ScoredDoc> docs, const std::filesystem::path& path,
                std::span<const std::vector<TokenDiagnostics>> diagnostics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_dump(docs, out, diagnostics);
  if (!out) throw Error("failed writing " + path.string());
}

namespace {

const json& field(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ParseError(line, std::string("missing field '") + name + "'");
  return *it;
}

std::size_t unsigned_field(const json& obj, const char* name, std::size_t line) {
  const auto& v = field(obj, name, line);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ParseError(line, std::string("field '") + name + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double logp_field(const json& obj, const char* name, std::size_t line) {
  const auto& v = field(obj, name, line);
  if (!v.is_number()) throw ParseError(line, std::string("field '") + name + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || x > 0.0) {
    throw ValidationError(line, std::string("field '") + name + "' must be finite and <= 0");
  }
  return x;
}

}  // namespace

std::vector<ScoredDoc> read_dump(std::istream& in) {
  std::vector<ScoredDoc> docs;
  std::unordered_set<std::string> finished;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text == "\r") continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line, "expected a JSON object");

    const auto& id_v = field(obj, "doc_id", line);
    if (!id_v.is_string()) throw ParseError(line, "field 'doc_id' must be a string");
    auto doc_id = id_v.get<std::string>();
    const auto token_index = unsigned_field(obj, "token_index", line);
    const auto& text_v = field(obj, "token_text", line);
    if (!text_v.is_string()) throw ParseError(line, "field 'token_text' must be a string");
    const auto& span_v = field(obj, "span", line);
    if (!span_v.is_array() || span_v.size() != 2 || !span_v[0].is_number_unsigned() ||
        !span_v[1].is_number_unsigned()) {
      throw ParseError(line, "field 'span' must be [start, end]");
    }
    const double logp_long = logp_field(obj, "logp_long", line);
    const double logp_short = logp_field(obj, "logp_short", line);
    const auto short_ctx_len = unsigned_field(obj, "short_ctx_len", line);
    TokenId token_id = -1;
    if (auto it = obj.find("token_id"); it != obj.end()) {
      if (!it->is_number_integer()) throw ParseError(line, "field 'token_id' must be an integer");
      token_id = it->get<TokenId>();
    }

    if (docs.empty() || docs.back().doc_id != doc_id) {
      if (!docs.empty()) finished.insert(docs.back().doc_id);
      if (finished.contains(doc_id)) {
        throw ValidationError(line, "records of doc '" + doc_id + "' are not contiguous");
      }
      docs.push_back({doc_id, {}, {}});
    }
    auto& doc = docs.back();
    if (token_index != doc.records.size()) {
      throw ValidationError(line, "token_index " + std::to_string(token_index) + " out of sequence (expected " +
                                      std::to_string(doc.records.size()) + ")");
    }
    Token tok{token_id, text_v.get<std::string>(), {span_v[0].get<std::size_t>(), span_v[1].get<std::size_t>()}};
    const std::size_t expected_start = doc.tokens.empty() ? 0 : doc.tokens.back().span.end;
    if (tok.span.start != expected_start || tok.span.size() != tok.text.size() || tok.text.empty()) {
      throw ValidationError(line, "span does not continue the document or disagrees with token_text");
    }
    if (short_ctx_len > token_index) {
      throw ValidationError(line, "short_ctx_len exceeds token_index");
    }
    doc.tokens.push_back(std::move(tok));
    doc.records.push_back({token_index, logp_long, logp_short, short_ctx_len});
  }
  return docs;
}

std::vector<ScoredDoc> read_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_dump(in);
}

}  // namespace longppl
