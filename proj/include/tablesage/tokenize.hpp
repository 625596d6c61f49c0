#ifndef TABLESAGE_TOKENIZE_HPP
#define TABLESAGE_TOKENIZE_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tablesage/corpus.hpp"

namespace tablesage {

using TokenStream = std::vector<std::string>;

namespace detail {

// Bytes >= 0x80 count as word characters so UTF-8 words survive intact.
inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || u >= 0x80;
}

}  // namespace detail

/// Lowercases and splits on every non-alphanumeric character. Pure digit
/// pieces are dropped unless they form a year.
inline void append_text_tokens(std::string_view text, TokenStream& out) {
  std::string piece;
  auto flush = [&] {
    if (piece.empty()) return;
    const bool digits_only = std::all_of(piece.begin(), piece.end(), is_ascii_digit);
    if (!digits_only || is_year_token(piece)) out.push_back(piece);
    piece.clear();
  };
  for (char c : text) {
    if (detail::is_word_byte(c)) {
      piece += html::ascii_lower(c);
    } else {
      flush();
    }
  }
  flush();
}

/// Text cells are tokenized, Year cells kept as their digits, Number and
/// Empty cells dropped. Span replicas are skipped.
inline TokenStream tokenize_row(const Row& row) {
  TokenStream out;
  for (const auto& c : row.cells) {
    if (c.replica) continue;
    if (c.kind == CellKind::Text) {
      append_text_tokens(c.raw_text, out);
    } else if (c.kind == CellKind::Year) {
      out.push_back(std::to_string(static_cast<int>(*c.value)));
    }
  }
  return out;
}

inline TokenStream tokenize_table(const ExtractedTable& table) {
  TokenStream out;
  for (const auto& r : table.rows) {
    auto toks = tokenize_row(r);
    out.insert(out.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
  }
  return out;
}

inline std::string join_tokens(const TokenStream& s) {
  std::string out;
  for (const auto& t : s) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

class Vocabulary {
public:
  Vocabulary() = default;

  /// Tokens must be distinct; index i is tokens[i].
  Vocabulary(std::vector<std::string> tokens, std::vector<std::uint64_t> counts)
      : tokens_(std::move(tokens)), counts_(std::move(counts)) {
    if (counts_.size() != tokens_.size()) throw Error("vocabulary token/count size mismatch");
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw Error("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }

  std::optional<int> index(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  std::uint64_t count(std::size_t i) const { return counts_.at(i); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && counts_ == o.counts_; }

private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> counts_;
  std::unordered_map<std::string, int> index_;
};

/// Keeps tokens with frequency >= min_count, ordered by descending
/// frequency and then lexicographically.
inline Vocabulary build_vocab(const std::vector<TokenStream>& streams, std::uint64_t min_count = 1) {
  if (streams.empty()) throw Error("build_vocab: no token streams");
  std::map<std::string, std::uint64_t> freq;
  for (const auto& s : streams)
    for (const auto& t : s) ++freq[t];
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [tok, n] : freq)
    if (n >= min_count) kept.emplace_back(tok, n);
  if (kept.empty()) throw Error("build_vocab: vocabulary is empty after min_count filtering");
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  std::vector<std::uint64_t> counts;
  for (auto& [t, n] : kept) {
    tokens.push_back(t);
    counts.push_back(n);
  }
  return Vocabulary(std::move(tokens), std::move(counts));
}

}  // namespace tablesage

#endif  // TABLESAGE_TOKENIZE_HPP
