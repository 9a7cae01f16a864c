#include "longppl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>

#include "longppl/error.hpp"

namespace longppl {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Pre-segmentation shared by the whitespace and bpe tokenizers.
std::vector<Span> segment(std::string_view text) {
  std::vector<Span> out;
  std::size_t pos = 0;
  const std::size_t n = text.size();
  if (pos < n && is_space(text[pos])) {
    while (pos < n && is_space(text[pos])) ++pos;
    out.push_back({0, pos});
  }
  while (pos < n) {
    const std::size_t start = pos;
    while (pos < n && !is_space(text[pos])) ++pos;
    while (pos < n && is_space(text[pos])) ++pos;
    out.push_back({start, pos});
  }
  return out;
}

std::string_view strip_trailing_space(std::string_view s) {
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<TokenId> TokenizedDoc::ids() const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.id);
  return out;
}

void TokenizedDoc::check_invariants() const {
  std::size_t expected_start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.span.start != expected_start || t.span.empty() || t.span.end > source_text.size()) {
      throw ContractError("doc '" + doc_id + "': token " + std::to_string(i) +
                          " span breaks the gap-free cover of the source text");
    }
    if (source_text.compare(t.span.start, t.span.size(), t.text) != 0) {
      throw ContractError("doc '" + doc_id + "': token " + std::to_string(i) +
                          " text differs from its source substring");
    }
    expected_start = t.span.end;
  }
  if (expected_start != source_text.size()) {
    throw ContractError("doc '" + doc_id + "': tokens do not cover the whole source text");
  }
}

std::string_view to_string(TokenizerKind kind) {
  switch (kind) {
    case TokenizerKind::byte_level: return "byte-level";
    case TokenizerKind::whitespace: return "whitespace";
    case TokenizerKind::bpe: return "bpe";
  }
  return "unknown";
}

TokenizerKind tokenizer_kind_from_string(std::string_view name) {
  if (name == "byte-level" || name == "byte") return TokenizerKind::byte_level;
  if (name == "whitespace") return TokenizerKind::whitespace;
  if (name == "bpe") return TokenizerKind::bpe;
  throw ConfigError("unknown tokenizer kind '" + std::string(name) + "'");
}

TokenizerSpec::TokenizerSpec(TokenizerKind kind, std::vector<std::string> vocab,
                             std::vector<MergePair> merges)
    : kind_(kind), vocab_(std::move(vocab)), merges_(std::move(merges)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    auto [it, inserted] = index_.emplace(vocab_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw ConfigError("duplicate vocabulary entry '" + escape_token(vocab_[i]) + "' at ids " +
                        std::to_string(it->second) + " and " + std::to_string(i));
    }
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    if (left.empty() || right.empty()) {
      throw ConfigError("merge " + std::to_string(r) + " has an empty side");
    }
    if (!index_.contains(left) || !index_.contains(right) || !index_.contains(left + right)) {
      throw ConfigError("merge " + std::to_string(r) + " ('" + escape_token(left) + "' '" +
                        escape_token(right) + "') references a token missing from the vocabulary");
    }
    if (!ranks_.emplace(merges_[r], r).second) {
      throw ConfigError("merge " + std::to_string(r) + " duplicates an earlier merge");
    }
  }
}

TokenizerSpec TokenizerSpec::byte_level() {
  std::vector<std::string> vocab;
  vocab.reserve(256);
  for (int b = 0; b < 256; ++b) vocab.emplace_back(1, static_cast<char>(b));
  return TokenizerSpec(TokenizerKind::byte_level, std::move(vocab), {});
}

TokenizerSpec TokenizerSpec::whitespace(std::vector<std::string> words) {
  std::vector<std::string> vocab;
  vocab.reserve(words.size() + 1);
  vocab.emplace_back(kUnknownWord);
  for (auto& w : words) {
    if (w.empty() || std::any_of(w.begin(), w.end(), is_space)) {
      throw ConfigError("whitespace vocabulary entry '" + escape_token(w) +
                        "' is empty or contains whitespace");
    }
    vocab.push_back(std::move(w));
  }
  return TokenizerSpec(TokenizerKind::whitespace, std::move(vocab), {});
}

TokenizerSpec TokenizerSpec::whitespace_from_corpus(std::span<const std::string> texts) {
  std::set<std::string, std::less<>> words;
  for (const auto& text : texts) {
    for (const auto& s : segment(text)) {
      auto w = strip_trailing_space(std::string_view(text).substr(s.start, s.size()));
      if (!w.empty() && w != kUnknownWord) words.emplace(w);
    }
  }
  return whitespace(std::vector<std::string>(words.begin(), words.end()));
}

TokenizerSpec TokenizerSpec::bpe(std::vector<std::string> vocab, std::vector<MergePair> merges) {
  return TokenizerSpec(TokenizerKind::bpe, std::move(vocab), std::move(merges));
}

const std::string& TokenizerSpec::token_string(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab_.size()));
  }
  return vocab_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> TokenizerSpec::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> TokenizerSpec::merge_rank(std::string_view left,
                                                     std::string_view right) const {
  auto it = ranks_.find(std::pair<std::string, std::string>(left, right));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

namespace {

void encode_bpe_segment(std::string_view text, std::size_t offset, const TokenizerSpec& spec,
                        std::vector<Token>& out) {
  // Symbols are spans relative to `text`; merging concatenates neighbours.
  std::vector<Span> symbols;
  symbols.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) symbols.push_back({i, i + 1});

  auto piece = [&](const Span& s) { return text.substr(s.start, s.size()); };

  while (symbols.size() > 1) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto rank = spec.merge_rank(piece(symbols[i]), piece(symbols[i + 1]));
      if (rank && (!best || *rank < *best)) best = rank;
    }
    if (!best) break;
    const auto& [left, right] = spec.merges()[*best];
    std::vector<Span> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && piece(symbols[i]) == left && piece(symbols[i + 1]) == right) {
        merged.push_back({symbols[i].start, symbols[i + 1].end});
        ++i;
      } else {
        merged.push_back(symbols[i]);
      }
    }
    symbols = std::move(merged);
  }

  for (const auto& s : symbols) {
    auto id = spec.find(piece(s));
    if (!id) {
      char hex[8];
      std::snprintf(hex, sizeof(hex), "0x%02x", static_cast<unsigned char>(text[s.start]));
      throw ConfigError(std::string("bpe vocabulary has no entry for byte ") + hex);
    }
    out.push_back({*id, std::string(piece(s)), {offset + s.start, offset + s.end}});
  }
}

}  // namespace

TokenizedDoc encode(std::string_view text, const TokenizerSpec& spec, std::string doc_id) {
  TokenizedDoc doc;
  doc.doc_id = std::move(doc_id);
  doc.source_text = std::string(text);
  switch (spec.kind()) {
    case TokenizerKind::byte_level:
      doc.tokens.reserve(text.size());
      for (std::size_t i = 0; i < text.size(); ++i) {
        doc.tokens.push_back({static_cast<TokenId>(static_cast<unsigned char>(text[i])),
                              std::string(1, text[i]),
                              {i, i + 1}});
      }
      break;
    case TokenizerKind::whitespace:
      for (const auto& s : segment(text)) {
        auto piece = text.substr(s.start, s.size());
        auto word = strip_trailing_space(piece);
        TokenId id = 0;
        if (!word.empty()) id = spec.find(word).value_or(0);
        doc.tokens.push_back({id, std::string(piece), s});
      }
      break;
    case TokenizerKind::bpe:
      for (const auto& s : segment(text)) {
        encode_bpe_segment(text.substr(s.start, s.size()), s.start, spec, doc.tokens);
      }
      break;
  }
  return doc;
}

std::string decode(std::span<const Token> tokens) {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

TokenizerSpec make_bpe(std::span<const MergePair> merges) {
  std::vector<std::string> vocab;
  std::set<std::string, std::less<>> seen;
  for (int b = 0; b < 256; ++b) {
    vocab.emplace_back(1, static_cast<char>(b));
    seen.insert(vocab.back());
  }
  for (const auto& [left, right] : merges) {
    auto joined = left + right;
    if (seen.insert(joined).second) vocab.push_back(std::move(joined));
  }
  return TokenizerSpec::bpe(std::move(vocab), std::vector<MergePair>(merges.begin(), merges.end()));
}

std::string escape_token(std::string_view raw) {
  std::string out;
  for (char c : raw) {
    const auto u = static_cast<unsigned char>(c);
    switch (c) {
      case ' ': out += "\\s"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default:
        if (u < 0x20 || u == 0x7f) {
          char hex[8];
          std::snprintf(hex, sizeof(hex), "\\x%02x", u);
          out += hex;
        } else {
          out += c;
        }
    }
  }
  return out;
}

std::string unescape_token(std::string_view escaped) {
  std::string out;
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    char c = escaped[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    if (++i >= escaped.size()) throw ConfigError("dangling backslash in token '" + std::string(escaped) + "'");
    switch (escaped[i]) {
      case 's': out += ' '; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      case '\\': out += '\\'; break;
      case 'x': {
        if (i + 2 >= escaped.size()) {
          throw ConfigError("truncated \\x escape in token '" + std::string(escaped) + "'");
        }
        auto hex = std::string(escaped.substr(i + 1, 2));
        if (!std::isxdigit(static_cast<unsigned char>(hex[0])) ||
            !std::isxdigit(static_cast<unsigned char>(hex[1]))) {
          throw ConfigError("bad \\x escape in token '" + std::string(escaped) + "'");
        }
        out += static_cast<char>(std::stoi(hex, nullptr, 16));
        i += 2;
        break;
      }
      default:
        throw ConfigError("unknown escape in token '" + std::string(escaped) + "'");
    }
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

TokenizerSpec load_bpe(const std::filesystem::path& vocab_file,
                       const std::filesystem::path& merges_file) {
  std::vector<std::string> vocab;
  auto vocab_lines = read_lines(vocab_file);
  vocab.reserve(vocab_lines.size());
  for (std::size_t i = 0; i < vocab_lines.size(); ++i) {
    if (vocab_lines[i].empty()) {
      throw ConfigError(vocab_file.string() + ":" + std::to_string(i + 1) + ": empty token");
    }
    vocab.push_back(unescape_token(vocab_lines[i]));
  }

  std::vector<MergePair> merges;
  auto merge_lines = read_lines(merges_file);
  for (std::size_t i = 0; i < merge_lines.size(); ++i) {
    const auto& line = merge_lines[i];
    if (line.empty()) continue;
    auto sep = line.find(' ');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= line.size() ||
        line.find(' ', sep + 1) != std::string::npos) {
      throw ConfigError(merges_file.string() + ":" + std::to_string(i + 1) +
                        ": expected exactly two space-separated tokens");
    }
    merges.emplace_back(unescape_token(line.substr(0, sep)), unescape_token(line.substr(sep + 1)));
  }
  return TokenizerSpec::bpe(std::move(vocab), std::move(merges));
}

void save_bpe(const TokenizerSpec& spec, const std::filesystem::path& vocab_file,
              const std::filesystem::path& merges_file) {
  std::ofstream v(vocab_file, std::ios::binary);
  std::ofstream m(merges_file, std::ios::binary);
  if (!v || !m) throw ConfigError("cannot write bpe files");
  for (const auto& tok : spec.vocabulary()) v << escape_token(tok) << '\n';
  for (const auto& [l, r] : spec.merges()) m << escape_token(l) << ' ' << escape_token(r) << '\n';
}

}  // namespace longppl
