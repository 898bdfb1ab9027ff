#include "scm/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "scm/errors.hpp"

namespace scm {

namespace {
const char* const kReserved[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[EOT]"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
}  // namespace

Vocabulary::Vocabulary() {
  for (const char* t : kReserved) add(t);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const std::string& text : texts) {
    for (std::string& w : split_whitespace(text)) {
      for (std::string& c : utf8_chars(w)) seen.insert(std::move(c));
      seen.insert(std::move(w));
    }
  }
  Vocabulary v;
  for (const std::string& t : seen) v.add(t);
  return v;
}

TokenId Vocabulary::add(std::string_view token) {
  if (auto id = find(token)) return *id;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  if (auto it = ids_.find(std::string(token)); it != ids_.end()) return it->second;
  return std::nullopt;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += tokens_[i];
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw DataError("vocabulary line " + std::to_string(line_no) + ": missing tab");
    std::size_t id = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + tab, id);
    if (ec != std::errc() || ptr != line.data() + tab || id != v.tokens_.size())
      throw DataError("vocabulary line " + std::to_string(line_no) + ": ids must be dense and ordered");
    v.add(line.substr(tab + 1));
    if (v.tokens_.size() != id + 1)
      throw DataError("vocabulary line " + std::to_string(line_no) + ": duplicate token");
  }
  for (std::size_t i = 0; i < std::size(kReserved); ++i)
    if (v.tokens_.size() <= i || v.tokens_[i] != kReserved[i])
      throw DataError("vocabulary does not start with the reserved tokens");
  return v;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

TokenSeq tokenize(const std::vector<std::string>& turns, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max sequence length must be at least 2");
  TokenSeq content;
  for (std::size_t t = 0; t < turns.size(); ++t) {
    if (t > 0) content.push_back(Vocabulary::kEot);
    for (const std::string& w : split_whitespace(turns[t])) {
      if (auto id = vocab.find(w)) {
        content.push_back(*id);
        continue;
      }
      for (const std::string& c : utf8_chars(w)) content.push_back(vocab.find(c).value_or(Vocabulary::kUnk));
    }
  }
  const std::size_t keep = std::min(content.size(), max_len - 2);
  TokenSeq out;
  out.reserve(keep + 2);
  out.push_back(Vocabulary::kCls);
  out.insert(out.end(), content.end() - static_cast<std::ptrdiff_t>(keep), content.end());
  out.push_back(Vocabulary::kSep);
  return out;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  return tokenize(std::vector<std::string>{std::string(text)}, vocab, max_len);
}

}  // namespace scm
