#ifndef TABLESAGE_HTML_HPP
#define TABLESAGE_HTML_HPP

// Minimal tolerant HTML tokenizer. It does not build a DOM; callers walk the
// token stream and keep whatever nesting state they need.

#include <cctype>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tablesage {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

/// Fixed-point text with `places` decimals.
inline std::string format_fixed(double v, int places) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, places);
  return {buf, r.ptr};
}

namespace html {

class SyntaxError : public Error {
public:
  SyntaxError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

enum class TokenKind { StartTag, EndTag, Text, Comment, Doctype };

struct Token {
  TokenKind kind;
  std::string name;  // lowercased tag name; empty for text/comment
  std::vector<std::pair<std::string, std::string>> attributes;
  std::string_view text;  // raw text for Text tokens (entities not decoded)
  std::size_t begin = 0;  // byte offsets into the source
  std::size_t end = 0;
  bool self_closing = false;

  std::optional<std::string> attribute(std::string_view key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return v;
    return std::nullopt;
  }
};

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = ascii_lower(c);
  return out;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

/// Decodes the common named entities and all numeric character references.
/// Unknown entities are passed through untouched.
inline std::string decode_entities(std::string_view in) {
  static constexpr std::pair<std::string_view, std::uint32_t> named[] = {
      {"amp", '&'},    {"lt", '<'},      {"gt", '>'},      {"quot", '"'},
      {"apos", '\''},  {"nbsp", 0xA0},   {"ndash", 0x2013}, {"mdash", 0x2014},
      {"rsquo", 0x2019}, {"lsquo", 0x2018}, {"ldquo", 0x201C}, {"rdquo", 0x201D},
      {"pound", 0xA3}, {"euro", 0x20AC}, {"copy", 0xA9},
  };
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size();) {
    if (in[i] != '&') {
      out += in[i++];
      continue;
    }
    const auto semi = in.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out += in[i++];
      continue;
    }
    const auto body = in.substr(i + 1, semi - i - 1);
    bool done = false;
    if (!body.empty() && body[0] == '#') {
      std::uint32_t cp = 0;
      bool ok = body.size() > 1;
      const bool hex = ok && (body[1] == 'x' || body[1] == 'X');
      for (std::size_t k = hex ? 2 : 1; ok && k < body.size(); ++k) {
        const char c = ascii_lower(body[k]);
        int digit = -1;
        if (c >= '0' && c <= '9') digit = c - '0';
        else if (hex && c >= 'a' && c <= 'f') digit = c - 'a' + 10;
        if (digit < 0 || cp > 0x10FFFF) ok = false;
        else cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(digit);
      }
      if (ok && body.size() > (hex ? 2u : 1u)) {
        append_utf8(out, cp);
        done = true;
      }
    } else {
      for (const auto& [name, cp] : named) {
        if (body == name) {
          append_utf8(out, cp);
          done = true;
          break;
        }
      }
    }
    if (done) {
      i = semi + 1;
    } else {
      out += in[i++];
    }
  }
  return out;
}

/// Escapes text for embedding inside element content or a quoted attribute.
inline std::string escape(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace detail {

inline bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '-' || c == '_' || c == ':';
}

inline bool is_raw_text_element(std::string_view name) {
  return name == "script" || name == "style";
}

}  // namespace detail

/// Splits a document into tokens. Unclosed elements are fine; an unterminated
/// tag or comment cannot be recovered and raises SyntaxError.
inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = src.size();
  auto push_text = [&](std::size_t b, std::size_t e) {
    if (e > b) out.push_back(Token{TokenKind::Text, {}, {}, src.substr(b, e - b), b, e});
  };

  while (i < n) {
    const auto lt = src.find('<', i);
    if (lt == std::string_view::npos) {
      push_text(i, n);
      break;
    }
    // A '<' not followed by a tag-ish character is literal text.
    if (lt + 1 >= n || !(std::isalpha(static_cast<unsigned char>(src[lt + 1])) ||
                         src[lt + 1] == '/' || src[lt + 1] == '!' || src[lt + 1] == '?')) {
      push_text(i, lt + 1);
      i = lt + 1;
      continue;
    }
    push_text(i, lt);

    if (src.compare(lt, 4, "<!--") == 0) {
      const auto close = src.find("-->", lt + 4);
      if (close == std::string_view::npos) throw SyntaxError("unterminated comment", lt);
      out.push_back(Token{TokenKind::Comment, {}, {}, src.substr(lt + 4, close - lt - 4), lt, close + 3});
      i = close + 3;
      continue;
    }
    if (src[lt + 1] == '!' || src[lt + 1] == '?') {
      const auto close = src.find('>', lt);
      if (close == std::string_view::npos) throw SyntaxError("unterminated declaration", lt);
      out.push_back(Token{TokenKind::Doctype, {}, {}, src.substr(lt, close + 1 - lt), lt, close + 1});
      i = close + 1;
      continue;
    }

    Token tok;
    tok.begin = lt;
    std::size_t p = lt + 1;
    tok.kind = TokenKind::StartTag;
    if (src[p] == '/') {
      tok.kind = TokenKind::EndTag;
      ++p;
    }
    while (p < n && detail::is_name_char(src[p])) tok.name += ascii_lower(src[p++]);

    // Attributes; quoted values may contain '>'.
    bool closed = false;
    while (p < n) {
      while (p < n && is_space(src[p])) ++p;
      if (p >= n) break;
      if (src[p] == '>') {
        closed = true;
        ++p;
        break;
      }
      if (src[p] == '/' && p + 1 < n && src[p + 1] == '>') {
        tok.self_closing = true;
        closed = true;
        p += 2;
        break;
      }
      if (src[p] == '<') break;  // a new tag started before this one closed
      std::string key;
      while (p < n && !is_space(src[p]) && src[p] != '=' && src[p] != '>' && src[p] != '<' &&
             !(src[p] == '/' && p + 1 < n && src[p + 1] == '>'))
        key += ascii_lower(src[p++]);
      if (key.empty()) {
        ++p;  // stray character
        continue;
      }
      while (p < n && is_space(src[p])) ++p;
      std::string value;
      if (p < n && src[p] == '=') {
        ++p;
        while (p < n && is_space(src[p])) ++p;
        if (p < n && (src[p] == '"' || src[p] == '\'')) {
          const char q = src[p];
          const auto endq = src.find(q, p + 1);
          if (endq == std::string_view::npos) throw SyntaxError("unterminated attribute value", p);
          value = decode_entities(src.substr(p + 1, endq - p - 1));
          p = endq + 1;
        } else {
          const auto b = p;
          while (p < n && !is_space(src[p]) && src[p] != '>' && src[p] != '<') ++p;
          value = decode_entities(src.substr(b, p - b));
        }
      }
      tok.attributes.emplace_back(std::move(key), std::move(value));
    }
    if (!closed) throw SyntaxError("unterminated tag <" + tok.name, lt);
    tok.end = p;
    i = p;
    const bool raw = tok.kind == TokenKind::StartTag && !tok.self_closing &&
                     detail::is_raw_text_element(tok.name);
    const std::string name = tok.name;
    out.push_back(std::move(tok));

    if (raw) {
      // Content runs to the matching end tag, case-insensitively.
      std::size_t q = i;
      std::size_t found = std::string_view::npos;
      while ((q = src.find("</", q)) != std::string_view::npos) {
        bool match = q + 2 + name.size() <= n;
        for (std::size_t k = 0; match && k < name.size(); ++k)
          match = ascii_lower(src[q + 2 + k]) == name[k];
        if (match) {
          found = q;
          break;
        }
        q += 2;
      }
      const auto content_end = found == std::string_view::npos ? n : found;
      push_text(i, content_end);
      i = content_end;
    }
  }
  return out;
}

/// Collapses whitespace runs to single spaces and trims both ends.
/// U+00A0 counts as whitespace.
inline std::string collapse_whitespace(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const char c = in[i];
    bool space = is_space(c);
    if (!space && static_cast<unsigned char>(c) == 0xC2 && i + 1 < in.size() &&
        static_cast<unsigned char>(in[i + 1]) == 0xA0) {
      space = true;
      ++i;
    }
    if (space) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

}  // namespace html
}  // namespace tablesage

#endif  // TABLESAGE_HTML_HPP
