#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scm {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Dense token <-> id map. Ids 0..4 are reserved:
///   0 [PAD]  1 [UNK]  2 [CLS]  3 [SEP]  4 [EOT] (end of turn)
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kEot = 4;

  Vocabulary();

  /// Reserved ids plus every whitespace token of `texts` and every character
  /// of those tokens, in sorted order.
  static Vocabulary build(const std::vector<std::string>& texts);

  TokenId add(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  /// "id<TAB>token" lines in id order.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<std::string> split_whitespace(std::string_view text);
/// UTF-8 code points of `word`, each as its own string.
std::vector<std::string> utf8_chars(std::string_view word);

/// Turns joined with [EOT], left-truncated to max_len - 2 content tokens,
/// wrapped in [CLS] ... [SEP]. Unknown words fall back to their characters;
/// unknown characters map to [UNK].
TokenSeq tokenize(const std::vector<std::string>& turns, const Vocabulary& vocab, std::size_t max_len);
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len);

}  // namespace scm
