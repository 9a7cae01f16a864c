#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace longppl {

using TokenId = std::int32_t;

// Half-open byte interval [start, end) into a source text. All "characters"
// in this toolkit are bytes of the UTF-8 source.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - start; }
  bool empty() const noexcept { return end <= start; }
  bool contains(std::size_t pos) const noexcept { return pos >= start && pos < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Token {
  TokenId id = -1;
  std::string text;
  Span span;

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenizedDoc {
  std::string doc_id;
  std::string source_text;
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  std::vector<TokenId> ids() const;

  // Throws ContractError when spans are not a gap-free cover of source_text
  // or a token's text differs from its source substring.
  void check_invariants() const;
};

enum class TokenizerKind { byte_level, whitespace, bpe };

std::string_view to_string(TokenizerKind kind);
TokenizerKind tokenizer_kind_from_string(std::string_view name);

using MergePair = std::pair<std::string, std::string>;

// Immutable description of a tokenizer. Safe to share across threads.
//
// byte_level  id == byte value, 256 entries.
// whitespace  segments are `\S+\s*` (plus a leading `\s+` segment when the
//             text starts with whitespace); the id is looked up from the
//             segment with trailing whitespace stripped, falling back to
//             id 0 ("<unk>").
// bpe         same pre-segmentation as whitespace, then greedy lowest-rank
//             pair merging inside each segment starting from single bytes.
class TokenizerSpec {
 public:
  static TokenizerSpec byte_level();
  static TokenizerSpec whitespace(std::vector<std::string> words);
  static TokenizerSpec whitespace_from_corpus(std::span<const std::string> texts);
  static TokenizerSpec bpe(std::vector<std::string> vocab, std::vector<MergePair> merges);

  TokenizerKind kind() const noexcept { return kind_; }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  const std::string& token_string(TokenId id) const;
  std::optional<TokenId> find(std::string_view piece) const;
  const std::vector<std::string>& vocabulary() const noexcept { return vocab_; }
  const std::vector<MergePair>& merges() const noexcept { return merges_; }

  // Rank of a merge pair, lower merges first.
  std::optional<std::size_t> merge_rank(std::string_view left, std::string_view right) const;

  static constexpr std::string_view kUnknownWord = "<unk>";

 private:
  TokenizerSpec(TokenizerKind kind, std::vector<std::string> vocab, std::vector<MergePair> merges);

  TokenizerKind kind_;
  std::vector<std::string> vocab_;
  std::vector<MergePair> merges_;
  std::unordered_map<std::string, TokenId> index_;
  std::map<std::pair<std::string, std::string>, std::size_t, std::less<>> ranks_;
};

TokenizedDoc encode(std::string_view text, const TokenizerSpec& spec, std::string doc_id = {});
std::string decode(std::span<const Token> tokens);

// BPE spec whose base vocabulary is all 256 single bytes followed by the
// concatenation of each merge, in merge order.
TokenizerSpec make_bpe(std::span<const MergePair> merges);

// Vocabulary file: one token per line, line number == id. Merges file: one
// space-separated pair per line, priority == line order. Token strings use
// backslash escapes: \s space, \n, \t, \r, \\ and \xHH.
TokenizerSpec load_bpe(const std::filesystem::path& vocab_file,
                       const std::filesystem::path& merges_file);
void save_bpe(const TokenizerSpec& spec, const std::filesystem::path& vocab_file,
              const std::filesystem::path& merges_file);

std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

}  // namespace longppl
