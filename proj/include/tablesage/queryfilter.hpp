#ifndef TABLESAGE_QUERYFILTER_HPP
#define TABLESAGE_QUERYFILTER_HPP

// The filter language
//   expr := term ("and" term)*
//   term := ("gt" | "lt") decimal | "year" dddd
// and its evaluation over a table, plus merging filter matches with row
// similarity hits into per-cell highlight classes.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "tablesage/corpus.hpp"

namespace tablesage {

struct FilterExpr {
  std::optional<double> greater_than;
  std::optional<double> less_than;
  std::optional<int> year;

  bool has_range() const { return greater_than || less_than; }
  bool operator==(const FilterExpr&) const = default;
};

class FilterParseError : public Error {
public:
  FilterParseError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), message_(what), position_(position) {}
  /// 1-based character position.
  std::size_t position() const noexcept { return position_; }
  const std::string& message() const noexcept { return message_; }

private:
  std::string message_;
  std::size_t position_;
};

namespace detail {

struct Word {
  std::string text;
  std::size_t pos;  // 1-based
};

inline bool valid_decimal(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  const auto int_start = i;
  while (i < s.size() && is_ascii_digit(s[i])) ++i;
  if (i == int_start) return false;
  if (i < s.size() && s[i] == '.') {
    const auto frac_start = ++i;
    while (i < s.size() && is_ascii_digit(s[i])) ++i;
    if (i == frac_start) return false;
  }
  return i == s.size();
}

}  // namespace detail

inline FilterExpr parse_filter(std::string_view text) {
  std::vector<detail::Word> words;
  for (std::size_t i = 0; i < text.size();) {
    if (html::is_space(text[i])) {
      ++i;
      continue;
    }
    const auto start = i;
    while (i < text.size() && !html::is_space(text[i])) ++i;
    words.push_back({std::string(text.substr(start, i - start)), start + 1});
  }
  const std::size_t end_pos = text.size() + 1;
  if (words.empty()) throw FilterParseError("empty filter", 1);

  FilterExpr e;
  std::size_t k = 0;
  auto expect_term = [&] {
    if (k >= words.size()) throw FilterParseError("expected gt, lt or year", end_pos);
    const auto& kw = words[k];
    const auto name = html::ascii_lower(kw.text);
    if (name != "gt" && name != "lt" && name != "year")
      throw FilterParseError("unknown keyword \"" + kw.text + "\" (expected gt, lt or year)", kw.pos);
    ++k;
    if (k >= words.size()) throw FilterParseError("missing value after " + name, end_pos);
    const auto& val = words[k++];
    if (name == "year") {
      if (val.text.size() != 4 || !std::all_of(val.text.begin(), val.text.end(), is_ascii_digit))
        throw FilterParseError("malformed year \"" + val.text + "\" (expected 4 digits)", val.pos);
      if (e.year) throw FilterParseError("duplicate year term", kw.pos);
      e.year = std::stoi(val.text);
      return;
    }
    if (!detail::valid_decimal(val.text)) throw FilterParseError("malformed number \"" + val.text + "\"", val.pos);
    double v = 0;
    const auto* first = val.text.data() + (val.text[0] == '+' ? 1 : 0);
    std::from_chars(first, val.text.data() + val.text.size(), v);
    auto& slot = name == "gt" ? e.greater_than : e.less_than;
    if (slot) throw FilterParseError("duplicate " + name + " term", kw.pos);
    slot = v;
    if (e.greater_than && e.less_than && !(*e.greater_than < *e.less_than))
      throw FilterParseError("empty range: lower bound must be below upper bound", kw.pos);
  };

  expect_term();
  while (k < words.size()) {
    if (html::ascii_lower(words[k].text) != "and")
      throw FilterParseError("expected \"and\" but found \"" + words[k].text + "\"", words[k].pos);
    ++k;
    expect_term();
  }
  return e;
}

namespace detail {

inline std::string decimal_text(double v) {
  char buf[400];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  return {buf, r.ptr};
}

}  // namespace detail

inline std::string unparse(const FilterExpr& e) {
  std::vector<std::string> terms;
  if (e.greater_than) terms.push_back("gt " + detail::decimal_text(*e.greater_than));
  if (e.less_than) terms.push_back("lt " + detail::decimal_text(*e.less_than));
  if (e.year) terms.push_back("year " + std::to_string(*e.year));
  std::string out;
  for (const auto& t : terms) out += (out.empty() ? "" : " and ") + t;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class HighlightClass { SimilarPrimary, SimilarSecondary, FilterOnly, Intersection, YearColumn };

inline std::string_view to_string(HighlightClass c) {
  switch (c) {
    case HighlightClass::SimilarPrimary: return "similar_primary";
    case HighlightClass::SimilarSecondary: return "similar_secondary";
    case HighlightClass::FilterOnly: return "filter_only";
    case HighlightClass::Intersection: return "intersection";
    case HighlightClass::YearColumn: return "year_column";
  }
  return "?";
}

struct CellHighlight {
  std::optional<HighlightClass> row_class;  // never YearColumn
  bool year_column = false;

  bool operator==(const CellHighlight&) const = default;
};

/// Keyed by (row ordinal, column).
using HighlightMap = std::map<std::pair<int, int>, CellHighlight>;

struct HighlightTriple {
  int row;
  int column;
  HighlightClass cls;
};

inline std::vector<HighlightTriple> to_triples(const HighlightMap& m) {
  std::vector<HighlightTriple> out;
  for (const auto& [rc, h] : m) {
    if (h.row_class) out.push_back({rc.first, rc.second, *h.row_class});
    if (h.year_column) out.push_back({rc.first, rc.second, HighlightClass::YearColumn});
  }
  return out;
}

inline std::string format_triples(const HighlightMap& m) {
  std::string out;
  for (const auto& t : to_triples(m))
    out += std::to_string(t.row) + "," + std::to_string(t.column) + "," + std::string(to_string(t.cls)) + "\n";
  return out;
}

struct FilterResult {
  std::vector<int> matched_rows;
  std::vector<std::pair<int, int>> matched_cells;  // (row, column) satisfying every bound
  std::vector<int> year_columns;
  bool year_missing = false;  // a year term named a year with no column
  HighlightMap highlights;
};

inline bool satisfies(const FilterExpr& e, double v) {
  return (!e.greater_than || v > *e.greater_than) && (!e.less_than || v < *e.less_than);
}

inline FilterResult apply_filter(const FilterExpr& e, const ExtractedTable& table, const ColumnHeaderInfo& headers) {
  FilterResult res;
  if (e.has_range()) {
    for (const auto& r : table.rows) {
      bool any = false;
      for (const auto& c : r.cells)
        if (c.kind == CellKind::Number && satisfies(e, *c.value)) {
          res.matched_cells.emplace_back(r.ordinal, c.column);
          any = true;
        }
      if (any) res.matched_rows.push_back(r.ordinal);
    }
  }
  if (e.year) {
    for (const auto& [col, y] : headers.year_columns)
      if (y == *e.year) res.year_columns.push_back(col);
    res.year_missing = res.year_columns.empty();
  }

  const std::set<int> rows(res.matched_rows.begin(), res.matched_rows.end());
  const std::set<int> cols(res.year_columns.begin(), res.year_columns.end());
  for (const auto& r : table.rows) {
    const bool matched = rows.contains(r.ordinal);
    for (const auto& c : r.cells) {
      CellHighlight h;
      if (matched) h.row_class = HighlightClass::FilterOnly;
      h.year_column = cols.contains(c.column) && (!e.has_range() || matched);
      if (h.row_class || h.year_column) res.highlights[{r.ordinal, c.column}] = h;
    }
  }
  return res;
}

struct SimilarRow {
  int row;
  double distance;
};

/// Filter matches and similarity hits on one table merged into one class per
/// cell; year columns from the filter stay as an overlay.
inline HighlightMap combine_highlights(const FilterResult& filter, const std::vector<SimilarRow>& similar,
                                       const ExtractedTable& table) {
  const std::set<int> filtered(filter.matched_rows.begin(), filter.matched_rows.end());
  std::map<int, double> sim;
  for (const auto& s : similar) {
    auto [it, fresh] = sim.emplace(s.row, s.distance);
    if (!fresh) it->second = std::min(it->second, s.distance);
  }
  std::optional<int> nearest;
  for (const auto& [row, d] : sim)
    if (!nearest || d < sim.at(*nearest)) nearest = row;

  HighlightMap out;
  for (const auto& r : table.rows) {
    const bool f = filtered.contains(r.ordinal);
    const bool s = sim.contains(r.ordinal);
    std::optional<HighlightClass> cls;
    if (f && s)
      cls = HighlightClass::Intersection;
    else if (f)
      cls = HighlightClass::FilterOnly;
    else if (s)
      cls = r.ordinal == *nearest ? HighlightClass::SimilarPrimary : HighlightClass::SimilarSecondary;
    for (const auto& c : r.cells) {
      CellHighlight h;
      h.row_class = cls;
      if (auto it = filter.highlights.find({r.ordinal, c.column}); it != filter.highlights.end())
        h.year_column = it->second.year_column;
      if (h.row_class || h.year_column) out[{r.ordinal, c.column}] = h;
    }
  }
  return out;
}

}  // namespace tablesage

#endif  // TABLESAGE_QUERYFILTER_HPP
