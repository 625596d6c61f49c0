#ifndef TABLESAGE_CORPUS_HPP
#define TABLESAGE_CORPUS_HPP

// Typed table model, HTML table extraction and the manifest-driven corpus
// loader.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tablesage/html.hpp"

namespace tablesage {

enum class TableType { ProfitOrLoss, FinancialPosition, ChangesInEquity, CashFlows };

inline constexpr std::array<TableType, 4> kAllTableTypes = {
    TableType::ProfitOrLoss, TableType::FinancialPosition, TableType::ChangesInEquity,
    TableType::CashFlows};

inline std::string_view to_string(TableType t) {
  switch (t) {
    case TableType::ProfitOrLoss: return "ProfitOrLoss";
    case TableType::FinancialPosition: return "FinancialPosition";
    case TableType::ChangesInEquity: return "ChangesInEquity";
    case TableType::CashFlows: return "CashFlows";
  }
  return "?";
}

inline TableType parse_table_type(std::string_view s) {
  for (auto t : kAllTableTypes)
    if (to_string(t) == s) return t;
  throw Error("unknown table_type \"" + std::string(s) +
              "\"; expected one of ProfitOrLoss, FinancialPosition, ChangesInEquity, CashFlows");
}

enum class CellKind { Text, Number, Year, Empty };

inline std::string_view to_string(CellKind k) {
  switch (k) {
    case CellKind::Text: return "text";
    case CellKind::Number: return "number";
    case CellKind::Year: return "year";
    case CellKind::Empty: return "empty";
  }
  return "?";
}

struct Cell {
  int column = 0;
  std::string raw_text;
  CellKind kind = CellKind::Empty;
  std::optional<double> value;
  // True for positions filled by a colspan/rowspan copy of another cell.
  bool replica = false;
};

struct Row {
  int ordinal = 0;
  std::vector<Cell> cells;
  std::string header_text;
};

struct ExtractedTable {
  std::string table_id;
  std::string doc_id;
  std::string company;
  TableType table_type = TableType::ProfitOrLoss;
  std::vector<Row> rows;
  std::string raw_fragment;
  std::string style_ref;
};

struct ColumnHeaderInfo {
  std::map<int, int> year_columns;  // column -> year
  int header_row_count = 0;
};

struct SourceDocument {
  std::string doc_id;
  std::string company;
  std::string origin_path;
  std::string html_payload;
};

struct TableFragment {
  std::string raw_fragment;
  std::string style_ref;
};

struct ManifestEntry {
  std::string table_file;
  TableType table_type = TableType::ProfitOrLoss;
  std::string company;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
};

/// Identity a fragment is parsed under.
struct TableLabel {
  std::string table_id;
  std::string doc_id;
  std::string company;
  TableType table_type = TableType::ProfitOrLoss;
};

class IngestError : public Error {
public:
  IngestError(std::string doc_id, std::size_t offset, const std::string& what)
      : Error("ingest error in " + doc_id + ": " + what), doc_id_(std::move(doc_id)), offset_(offset) {}
  const std::string& doc_id() const noexcept { return doc_id_; }
  std::size_t offset() const noexcept { return offset_; }

private:
  std::string doc_id_;
  std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Cell grammar

inline constexpr int kMinYear = 1900;
inline constexpr int kMaxYear = 2100;

inline bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && html::is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && html::is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// True for exactly four ASCII digits forming a year in [1900, 2100].
inline bool is_year_token(std::string_view s) {
  if (s.size() != 4 || !std::all_of(s.begin(), s.end(), is_ascii_digit)) return false;
  const int y = (s[0] - '0') * 1000 + (s[1] - '0') * 100 + (s[2] - '0') * 10 + (s[3] - '0');
  return y >= kMinYear && y <= kMaxYear;
}

struct CellValue {
  CellKind kind;
  std::optional<double> value;
};

/// Classifies one cell. Total: anything not Empty/Year/Number is Text.
///
/// Numbers may carry a sign, a `$` or `AUD` prefix, thousands commas, a
/// trailing `%`, and accounting parentheses for negatives.
inline CellValue parse_cell(std::string_view raw) {
  std::string_view s = trim(raw);
  // Non-breaking spaces from converters count as whitespace too.
  if (html::collapse_whitespace(s).empty()) return {CellKind::Empty, std::nullopt};
  if (is_year_token(s)) return {CellKind::Year, static_cast<double>(std::stoi(std::string(s)))};

  const CellValue text{CellKind::Text, std::nullopt};
  bool negative = false;
  bool saw_paren = false;
  auto strip_parens = [&] {
    if (!saw_paren && s.size() >= 2 && s.front() == '(' && s.back() == ')') {
      saw_paren = true;
      negative = !negative;
      s = trim(s.substr(1, s.size() - 2));
    }
  };
  strip_parens();
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    if (s.front() == '-') negative = !negative;
    s = trim(s.substr(1));
  }
  if (s.starts_with("AUD")) s = trim(s.substr(3));
  if (s.starts_with("$")) s = trim(s.substr(1));
  strip_parens();
  if (!s.empty() && s.back() == '%') s = trim(s.substr(0, s.size() - 1));
  if (s.empty()) return text;

  std::string digits;
  bool seen_dot = false;
  bool seen_digit = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (is_ascii_digit(c)) {
      digits += c;
      seen_digit = true;
    } else if (c == ',') {
      // Only as a separator between digits of the integer part.
      if (seen_dot || i == 0 || i + 1 >= s.size() || !is_ascii_digit(s[i - 1]) ||
          !is_ascii_digit(s[i + 1]))
        return text;
    } else if (c == '.') {
      if (seen_dot) return text;
      seen_dot = true;
      digits += c;
    } else {
      return text;
    }
  }
  if (!seen_digit || digits.back() == '.') return text;
  double v = 0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size() || !std::isfinite(v))
    return text;
  return {CellKind::Number, negative ? -v : v};
}

// ---------------------------------------------------------------------------
// Extraction

/// Concatenated text of every <style> element, in document order.
inline std::string collect_styles(const std::vector<html::Token>& tokens) {
  std::string css;
  bool in_style = false;
  for (const auto& t : tokens) {
    if (t.kind == html::TokenKind::StartTag && t.name == "style" && !t.self_closing) {
      in_style = true;
    } else if (t.kind == html::TokenKind::EndTag && t.name == "style") {
      in_style = false;
    } else if (in_style && t.kind == html::TokenKind::Text) {
      if (!css.empty()) css += '\n';
      css += trim(t.text);
    }
  }
  return css;
}

inline std::vector<html::Token> tokenize_document(const SourceDocument& doc) {
  try {
    return html::tokenize(doc.html_payload);
  } catch (const html::SyntaxError& e) {
    throw IngestError(doc.doc_id, e.offset(), e.what());
  }
}

/// Returns the outermost table elements of a document in source order.
/// style_ref is the document id; the document's style text is stored under
/// that key by the caller (see collect_styles).
inline std::vector<TableFragment> extract_tables(const SourceDocument& doc) {
  const auto tokens = tokenize_document(doc);
  std::vector<TableFragment> out;
  int depth = 0;
  std::size_t start = 0;
  for (const auto& t : tokens) {
    if (t.name != "table") continue;
    if (t.kind == html::TokenKind::StartTag && !t.self_closing) {
      if (depth++ == 0) start = t.begin;
    } else if (t.kind == html::TokenKind::EndTag && depth > 0) {
      if (--depth == 0)
        out.push_back({doc.html_payload.substr(start, t.end - start), doc.doc_id});
    }
  }
  // An unclosed outermost table runs to the end of the document.
  if (depth > 0) out.push_back({doc.html_payload.substr(start), doc.doc_id});
  return out;
}

namespace detail {

inline int span_attribute(const html::Token& t, std::string_view key) {
  const auto v = t.attribute(key);
  if (!v) return 1;
  int n = 0;
  const auto sv = trim(*v);
  const auto res = std::from_chars(sv.data(), sv.data() + sv.size(), n);
  if (res.ec != std::errc() || n < 1) return 1;
  return std::min(n, 1000);
}

inline bool separates_words(std::string_view tag) {
  static constexpr std::string_view tags[] = {"br", "p", "div", "li", "td", "th", "tr", "table"};
  return std::find(std::begin(tags), std::end(tags), tag) != std::end(tags);
}

}  // namespace detail

inline std::string make_header_text(const Row& row) {
  std::string out;
  for (const auto& c : row.cells) {
    if (c.replica || c.kind != CellKind::Text) continue;
    if (!out.empty()) out += ' ';
    out += c.raw_text;
  }
  return out;
}

/// Parses the outermost table of a fragment into rows and typed cells.
/// Column spans replicate the cell across every covered position; row spans
/// replicate it downward.
inline ExtractedTable parse_table(const TableFragment& fragment, const TableLabel& label) {
  std::vector<html::Token> tokens;
  try {
    tokens = html::tokenize(fragment.raw_fragment);
  } catch (const html::SyntaxError& e) {
    throw IngestError(label.table_id, e.offset(), e.what());
  }

  ExtractedTable table;
  table.table_id = label.table_id;
  table.doc_id = label.doc_id;
  table.company = label.company;
  table.table_type = label.table_type;
  table.raw_fragment = fragment.raw_fragment;
  table.style_ref = fragment.style_ref;

  struct PendingSpan {
    int rows_left = 0;
    Cell cell;
  };
  std::map<int, PendingSpan> pending;  // column -> span from a previous row

  struct OpenCell {
    std::string text;
    int colspan = 1;
    int rowspan = 1;
  };
  std::optional<Row> row;
  std::optional<OpenCell> cell;
  int next_column = 0;
  int depth = 0;

  auto fill_pending_until = [&](int limit) {
    while (true) {
      auto it = pending.find(next_column);
      if (it == pending.end() || next_column >= limit) break;
      Cell c = it->second.cell;
      c.column = next_column;
      c.replica = true;
      row->cells.push_back(c);
      if (--it->second.rows_left == 0) pending.erase(it);
      ++next_column;
    }
  };
  auto close_cell = [&] {
    if (!cell || !row) return;
    fill_pending_until(std::numeric_limits<int>::max());
    const std::string text = html::collapse_whitespace(html::decode_entities(cell->text));
    const auto parsed = parse_cell(text);
    for (int k = 0; k < cell->colspan; ++k) {
      Cell c{next_column, text, parsed.kind, parsed.value, k > 0};
      if (cell->rowspan > 1) pending[next_column] = {cell->rowspan - 1, c};
      row->cells.push_back(std::move(c));
      ++next_column;
    }
    cell.reset();
  };
  auto close_row = [&] {
    close_cell();
    if (!row) return;
    // Spans from above that extend past this row's last cell.
    for (auto it = pending.lower_bound(next_column); it != pending.end();
         it = pending.lower_bound(next_column)) {
      next_column = it->first;
      fill_pending_until(std::numeric_limits<int>::max());
    }
    if (!row->cells.empty()) {
      row->ordinal = static_cast<int>(table.rows.size());
      row->header_text = make_header_text(*row);
      table.rows.push_back(std::move(*row));
    }
    row.reset();
  };
  auto open_row = [&] {
    close_row();
    row.emplace();
    next_column = 0;
  };

  for (const auto& t : tokens) {
    const bool start = t.kind == html::TokenKind::StartTag;
    const bool end = t.kind == html::TokenKind::EndTag;
    if (t.name == "table") {
      if (start && !t.self_closing) {
        ++depth;
      } else if (end && depth > 0) {
        if (--depth == 0) break;
      }
      if (depth > 1 || (end && depth >= 1)) {
        if (cell) cell->text += ' ';
      }
      continue;
    }
    if (depth == 0) continue;
    if (depth > 1) {
      // Nested table content stays inside the enclosing cell as text.
      if (cell) {
        if (t.kind == html::TokenKind::Text) cell->text += t.text;
        else if ((start || end) && detail::separates_words(t.name)) cell->text += ' ';
      }
      continue;
    }
    if (start && t.name == "tr") {
      open_row();
    } else if (end && t.name == "tr") {
      close_row();
    } else if (start && (t.name == "td" || t.name == "th")) {
      close_cell();
      if (!row) open_row();
      cell = OpenCell{{}, detail::span_attribute(t, "colspan"), detail::span_attribute(t, "rowspan")};
    } else if (end && (t.name == "td" || t.name == "th")) {
      close_cell();
    } else if ((start || end) &&
               (t.name == "thead" || t.name == "tbody" || t.name == "tfoot")) {
      close_row();
    } else if (t.kind == html::TokenKind::Text) {
      if (cell) cell->text += t.text;
    } else if ((start || end) && cell && detail::separates_words(t.name)) {
      cell->text += ' ';
    }
  }
  close_row();

  if (table.rows.empty()) throw Error("table " + label.table_id + " has no rows");
  return table;
}

/// Maps each column to the first year found in the first scan_rows rows.
inline ColumnHeaderInfo detect_headers(const ExtractedTable& table, int scan_rows = 3) {
  if (scan_rows < 1) throw Error("scan_rows must be >= 1");
  ColumnHeaderInfo info;
  const int limit = std::min<int>(scan_rows, static_cast<int>(table.rows.size()));
  for (int r = 0; r < limit; ++r) {
    for (const auto& c : table.rows[static_cast<std::size_t>(r)].cells) {
      if (c.kind != CellKind::Year || info.year_columns.count(c.column)) continue;
      info.year_columns[c.column] = static_cast<int>(*c.value);
      info.header_row_count = r + 1;
    }
  }
  return info;
}

/// Writes a table back out as plain HTML (text and spans only).
inline std::string table_to_html(const ExtractedTable& table) {
  std::string out = "<table>\n";
  for (const auto& row : table.rows) {
    out += "<tr>";
    for (std::size_t i = 0; i < row.cells.size();) {
      const auto& c = row.cells[i];
      std::size_t span = 1;
      while (i + span < row.cells.size() && row.cells[i + span].replica &&
             row.cells[i + span].raw_text == c.raw_text)
        ++span;
      out += span > 1 ? "<td colspan=\"" + std::to_string(span) + "\">" : "<td>";
      out += html::escape(c.raw_text);
      out += "</td>";
      i += span;
    }
    out += "</tr>\n";
  }
  out += "</table>\n";
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and corpus

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  for (auto& f : fields) f = std::string(trim(f));
  return fields;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("failed writing " + p.string());
}

}  // namespace detail

inline CorpusManifest parse_manifest(std::string_view text) {
  CorpusManifest m;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (!header_seen) {
      if (f.size() != 3 || f[0] != "table_file" || f[1] != "table_type" || f[2] != "company")
        throw Error("manifest header must be table_file,table_type,company");
      header_seen = true;
      continue;
    }
    if (f.size() != 3)
      throw Error("manifest line " + std::to_string(lineno) + ": expected 3 columns");
    if (!seen.insert(f[0]).second)
      throw Error("manifest line " + std::to_string(lineno) + ": duplicate table_file " + f[0]);
    try {
      m.entries.push_back({f[0], parse_table_type(f[1]), f[2]});
    } catch (const Error& e) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header_seen) throw Error("manifest is empty; header row required");
  return m;
}

inline std::string format_manifest(const CorpusManifest& m) {
  std::string out = "table_file,table_type,company\n";
  for (const auto& e : m.entries)
    out += detail::csv_field(e.table_file) + "," + std::string(to_string(e.table_type)) + "," +
           detail::csv_field(e.company) + "\n";
  return out;
}

using StyleStore = std::map<std::string, std::string>;

struct Corpus {
  std::vector<ExtractedTable> tables;
  StyleStore styles;

  const ExtractedTable* find(std::string_view id) const {
    for (const auto& t : tables)
      if (t.table_id == id) return &t;
    return nullptr;
  }
};

/// Loads every table named by a manifest. Table ids are the file stems.
inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  const auto manifest = parse_manifest(detail::read_file(manifest_path));
  const auto base = manifest_path.parent_path();
  Corpus corpus;
  std::set<std::string> ids;
  for (const auto& e : manifest.entries) {
    const auto path = base / e.table_file;
    if (!std::filesystem::exists(path)) throw Error("manifest references missing file " + e.table_file);
    SourceDocument doc;
    doc.doc_id = std::filesystem::path(e.table_file).stem().string();
    doc.company = e.company;
    doc.origin_path = path.string();
    doc.html_payload = detail::read_file(path);
    if (doc.html_payload.empty()) throw IngestError(doc.doc_id, 0, "empty document");
    if (!ids.insert(doc.doc_id).second) throw Error("duplicate table id " + doc.doc_id);

    const auto fragments = extract_tables(doc);
    if (fragments.size() != 1)
      throw IngestError(doc.doc_id, 0,
                        "expected exactly one top-level table, found " + std::to_string(fragments.size()));
    corpus.tables.push_back(parse_table(fragments[0], {doc.doc_id, doc.doc_id, e.company, e.table_type}));
    auto css = collect_styles(tokenize_document(doc));
    if (!css.empty()) corpus.styles[doc.doc_id] = std::move(css);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// JSON persistence of a parsed corpus

inline nlohmann::ordered_json to_json(const ExtractedTable& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : r.cells) {
      nlohmann::ordered_json jc;
      jc["column"] = c.column;
      jc["text"] = c.raw_text;
      jc["kind"] = to_string(c.kind);
      if (c.value) jc["value"] = *c.value;
      if (c.replica) jc["replica"] = true;
      cells.push_back(std::move(jc));
    }
    rows.push_back({{"ordinal", r.ordinal}, {"header_text", r.header_text}, {"cells", std::move(cells)}});
  }
  nlohmann::ordered_json j;
  j["table_id"] = t.table_id;
  j["doc_id"] = t.doc_id;
  j["company"] = t.company;
  j["table_type"] = to_string(t.table_type);
  j["style_ref"] = t.style_ref;
  j["rows"] = std::move(rows);
  j["raw_fragment"] = t.raw_fragment;
  return j;
}

inline CellKind parse_cell_kind(std::string_view s) {
  for (auto k : {CellKind::Text, CellKind::Number, CellKind::Year, CellKind::Empty})
    if (to_string(k) == s) return k;
  throw Error("unknown cell kind " + std::string(s));
}

inline ExtractedTable table_from_json(const nlohmann::ordered_json& j) {
  ExtractedTable t;
  t.table_id = j.at("table_id").get<std::string>();
  t.doc_id = j.at("doc_id").get<std::string>();
  t.company = j.at("company").get<std::string>();
  t.table_type = parse_table_type(j.at("table_type").get<std::string>());
  t.style_ref = j.at("style_ref").get<std::string>();
  t.raw_fragment = j.at("raw_fragment").get<std::string>();
  for (const auto& jr : j.at("rows")) {
    Row r;
    r.ordinal = jr.at("ordinal").get<int>();
    r.header_text = jr.at("header_text").get<std::string>();
    for (const auto& jc : jr.at("cells")) {
      Cell c;
      c.column = jc.at("column").get<int>();
      c.raw_text = jc.at("text").get<std::string>();
      c.kind = parse_cell_kind(jc.at("kind").get<std::string>());
      if (jc.contains("value")) c.value = jc.at("value").get<double>();
      c.replica = jc.value("replica", false);
      r.cells.push_back(std::move(c));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline std::string serialize_corpus(const Corpus& c) {
  nlohmann::ordered_json j;
  j["format"] = "tablesage-corpus-1";
  j["tables"] = nlohmann::ordered_json::array();
  for (const auto& t : c.tables) j["tables"].push_back(to_json(t));
  j["styles"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : c.styles) j["styles"][k] = v;
  return j.dump(1) + "\n";
}

inline Corpus deserialize_corpus(std::string_view text) {
  const auto j = nlohmann::ordered_json::parse(text);
  if (j.value("format", "") != "tablesage-corpus-1") throw Error("not a tablesage corpus file");
  Corpus c;
  for (const auto& jt : j.at("tables")) c.tables.push_back(table_from_json(jt));
  for (const auto& [k, v] : j.at("styles").items()) c.styles[k] = v.get<std::string>();
  return c;
}

}  // namespace tablesage

#endif  // TABLESAGE_CORPUS_HPP
