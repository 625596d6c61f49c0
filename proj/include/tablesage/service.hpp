#ifndef TABLESAGE_SERVICE_HPP
#define TABLESAGE_SERVICE_HPP

// Engine state, request routing and the HTTP binding.

#include <charconv>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "tablesage/pipeline.hpp"

namespace tablesage {

using ordered_json = nlohmann::ordered_json;

struct EngineState {
  Corpus corpus;
  std::map<std::string, std::size_t> position;
  std::map<std::string, ColumnHeaderInfo> headers;
  std::optional<WordEmbedding> embedding;
  std::optional<ClassifierModel> model;
  std::optional<TableIndex> index;
  std::optional<std::vector<ProjectionPoint>> projection;
  std::size_t table_k = 5;
  std::size_t row_n = 5;

  const ExtractedTable* find(std::string_view id) const {
    const auto it = position.find(std::string(id));
    return it == position.end() ? nullptr : &corpus.tables[it->second];
  }
  bool can_query_tables() const { return model && index; }
  bool can_query_rows() const { return model && index && embedding; }
};

inline EngineState make_engine_state(Corpus corpus) {
  EngineState s;
  s.corpus = std::move(corpus);
  for (std::size_t i = 0; i < s.corpus.tables.size(); ++i) {
    const auto& t = s.corpus.tables[i];
    s.position[t.table_id] = i;
    s.headers[t.table_id] = detect_headers(t);
  }
  return s;
}

/// Loads whatever artifacts exist under the output directory; only the
/// ingested corpus is required.
inline EngineState load_engine_state(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  auto s = make_engine_state(load_corpus_artifact(p));
  s.table_k = cfg.table_k;
  s.row_n = cfg.row_n;
  if (fs::exists(p.embedding())) s.embedding = load_embedding_artifact(p);
  if (fs::exists(p.model())) s.model = load_model_artifact(p);
  if (fs::exists(p.index())) s.index = load_index_artifact(p);
  if (fs::exists(p.projection())) s.projection = parse_projection(detail::read_file(p.projection()));
  return s;
}

/// Current state behind a mutex; readers keep their snapshot alive while a
/// reload swaps in a new one.
class Engine {
public:
  Engine() = default;
  explicit Engine(std::shared_ptr<const EngineState> s) : state_(std::move(s)) {}

  std::shared_ptr<const EngineState> snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
  }
  void swap(std::shared_ptr<const EngineState> s) {
    std::lock_guard lock(mu_);
    state_ = std::move(s);
  }

private:
  mutable std::mutex mu_;
  std::shared_ptr<const EngineState> state_;
};

// ---------------------------------------------------------------------------
// Queries shared by the CLI and the HTTP API

inline std::vector<NeighborHit> similar_tables(const EngineState& s, std::string_view id, std::size_t k) {
  if (!s.can_query_tables()) throw StageError("table index", "build-index");
  return query_similar_tables(*s.index, id, k);
}

struct RowQueryResult {
  std::vector<std::string> neighbor_tables;
  std::vector<NeighborHit> hits;
  bool absent = false;  // the query row has no in-vocabulary token
};

/// Rows of the query table's nearest tables closest to the given row.
inline RowQueryResult similar_rows(const EngineState& s, std::string_view id, int ordinal, std::size_t n) {
  if (!s.can_query_rows()) throw StageError("table index or embedding", "build-index");
  const auto* t = s.find(id);
  if (!t) throw UnknownIdError("unknown table " + std::string(id));
  if (ordinal < 0 || ordinal >= static_cast<int>(t->rows.size()))
    throw UnknownIdError("table " + std::string(id) + " has no row " + std::to_string(ordinal));
  RowQueryResult r;
  std::vector<const ExtractedTable*> tables;
  for (const auto& h : query_similar_tables(*s.index, id, s.table_k)) {
    r.neighbor_tables.push_back(h.table_id);
    tables.push_back(s.find(h.table_id));
  }
  const auto v = row_vector(tokenize_row(t->rows[static_cast<std::size_t>(ordinal)]), *s.embedding);
  if (!v) {
    r.absent = true;
    return r;
  }
  r.hits = query_similar_rows(RowIndex::build(tables, *s.embedding), v, n, r.neighbor_tables);
  return r;
}

// ---------------------------------------------------------------------------
// Response bodies. Distances are written with exactly 6 decimals, so hit
// lists are assembled as text.

namespace detail {

inline std::string jstr(std::string_view s) { return ordered_json(std::string(s)).dump(); }

inline std::string table_hits_json(const std::vector<NeighborHit>& hits) {
  std::string out = "[";
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i) out += ",";
    out += "{\"rank\":" + std::to_string(i + 1) + ",\"table_id\":" + jstr(hits[i].table_id) +
           ",\"distance\":" + format_fixed(hits[i].distance, 6) + "}";
  }
  return out + "]";
}

inline std::string row_hits_json(const EngineState& s, const std::vector<NeighborHit>& hits) {
  std::string out = "[";
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const auto* t = s.find(hits[i].table_id);
    const auto& text = t->rows[static_cast<std::size_t>(hits[i].row)].header_text;
    if (i) out += ",";
    out += "{\"rank\":" + std::to_string(i + 1) + ",\"table_id\":" + jstr(hits[i].table_id) +
           ",\"row\":" + std::to_string(hits[i].row) + ",\"distance\":" + format_fixed(hits[i].distance, 6) +
           ",\"header_text\":" + jstr(text) + "}";
  }
  return out + "]";
}

}  // namespace detail

inline std::string table_list_json(const EngineState& s) {
  ordered_json arr = ordered_json::array();
  for (const auto& t : s.corpus.tables) {
    ordered_json e{{"table_id", t.table_id}, {"company", t.company}, {"table_type", to_string(t.table_type)}};
    if (s.model) {
      const auto id = s.model->labels.find(t.company, t.table_type);
      e["label_id"] = id ? ordered_json(*id) : ordered_json(nullptr);
      e["label"] = id ? ordered_json(s.model->labels.name(static_cast<std::size_t>(*id))) : ordered_json(nullptr);
    }
    arr.push_back(std::move(e));
  }
  return ordered_json{{"tables", arr}}.dump();
}

inline std::string table_json(const EngineState& s, const ExtractedTable& t) {
  ordered_json years = ordered_json::array();
  const auto& h = s.headers.at(t.table_id);
  for (const auto& [col, y] : h.year_columns) years.push_back({{"column", col}, {"year", y}});
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) {
    ordered_json cells = ordered_json::array();
    for (const auto& c : r.cells)
      cells.push_back({{"column", c.column},
                       {"raw_text", c.raw_text},
                       {"kind", to_string(c.kind)},
                       {"value", c.value ? ordered_json(*c.value) : ordered_json(nullptr)},
                       {"replica", c.replica}});
    rows.push_back({{"ordinal", r.ordinal}, {"header_text", r.header_text}, {"cells", cells}});
  }
  return ordered_json{{"table_id", t.table_id},
                      {"doc_id", t.doc_id},
                      {"company", t.company},
                      {"table_type", to_string(t.table_type)},
                      {"style_ref", t.style_ref},
                      {"header", {{"header_row_count", h.header_row_count}, {"year_columns", years}}},
                      {"rows", rows}}
      .dump();
}

inline std::string filter_json(const ExtractedTable& t, const FilterExpr& e, const FilterResult& f,
                               const HighlightMap& highlights) {
  ordered_json cells = ordered_json::array();
  for (const auto& [r, c] : f.matched_cells) cells.push_back({{"row", r}, {"column", c}});
  ordered_json hl = ordered_json::array();
  for (const auto& tr : to_triples(highlights))
    hl.push_back({{"row", tr.row}, {"column", tr.column}, {"class", to_string(tr.cls)}});
  return ordered_json{{"table_id", t.table_id},
                      {"query", unparse(e)},
                      {"matched_rows", f.matched_rows},
                      {"matched_cells", cells},
                      {"year_columns", f.year_columns},
                      {"year_missing", f.year_missing},
                      {"highlights", hl}}
      .dump();
}

inline std::string projection_json(const std::vector<ProjectionPoint>& pts) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : pts) arr.push_back({{"table_id", p.table_id}, {"x", p.x}, {"y", p.y}, {"label_id", p.label}});
  return ordered_json{{"points", arr}}.dump();
}

// ---------------------------------------------------------------------------
// Router

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json; charset=utf-8";
};

namespace detail {

inline ApiResponse error_response(int status, const std::string& message) {
  return {status, ordered_json{{"error", message}}.dump()};
}

inline std::vector<std::string_view> path_segments(std::string_view path) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < path.size()) {
    if (path[pos] == '/') {
      ++pos;
      continue;
    }
    const auto end = std::min(path.find('/', pos), path.size());
    out.push_back(path.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

inline std::optional<std::size_t> positive_param(const std::map<std::string, std::string>& q, const std::string& key,
                                                 std::size_t fallback, bool& bad) {
  const auto it = q.find(key);
  if (it == q.end()) return fallback;
  std::size_t v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v == 0) {
    bad = true;
    return std::nullopt;
  }
  return v;
}

inline std::optional<int> ordinal_segment(std::string_view s) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || v < 0) return std::nullopt;
  return v;
}

inline ApiResponse handle_filter(const EngineState& s, const ExtractedTable& t, std::string_view body) {
  ordered_json req;
  try {
    req = ordered_json::parse(body);
  } catch (const ordered_json::parse_error&) {
    return error_response(400, "request body is not JSON");
  }
  if (!req.is_object() || !req.contains("query") || !req["query"].is_string())
    return error_response(400, "request body needs a string field \"query\"");
  FilterExpr e;
  try {
    e = parse_filter(req["query"].get<std::string>());
  } catch (const FilterParseError& err) {
    return {422, ordered_json{{"error", err.message()}, {"position", err.position()}}.dump()};
  }
  const auto f = apply_filter(e, t, s.headers.at(t.table_id));
  auto highlights = f.highlights;
  if (req.contains("similar_rows")) {
    std::vector<SimilarRow> sim;
    try {
      for (const auto& r : req["similar_rows"]) sim.push_back({r.at("row").get<int>(), r.at("distance").get<double>()});
    } catch (const ordered_json::exception&) {
      return error_response(400, "similar_rows entries need integer \"row\" and number \"distance\"");
    }
    highlights = combine_highlights(f, sim, t);
  }
  return {200, filter_json(t, e, f, highlights)};
}

}  // namespace detail

/// Dispatches one request against a state snapshot; null state means nothing
/// is loaded yet.
inline ApiResponse route(const EngineState* s, std::string_view method, std::string_view path,
                         const std::map<std::string, std::string>& query, std::string_view body) {
  const auto seg = detail::path_segments(path);
  const bool get = method == "GET", post = method == "POST";
  auto not_allowed = [] { return detail::error_response(405, "method not allowed"); };

  if (seg.size() == 1 && seg[0] == "health") {
    if (!get) return not_allowed();
    return {200, ordered_json{{"status", "ok"},
                              {"corpus", s != nullptr},
                              {"model", s && s->model.has_value()},
                              {"index", s && s->index.has_value()},
                              {"projection", s && s->projection.has_value()}}
                     .dump()};
  }
  const bool known = (seg.size() == 1 && (seg[0] == "tables" || seg[0] == "projection")) ||
                     (seg.size() >= 2 && seg.size() <= 5 && seg[0] == "tables");
  if (!known) return detail::error_response(404, "no such endpoint");
  if (!s) return detail::error_response(503, "engine state not loaded");

  if (seg[0] == "projection") {
    if (!get) return not_allowed();
    if (!s->projection) return detail::error_response(503, "projection not available: run `tablesage project`");
    return {200, projection_json(*s->projection)};
  }
  if (seg.size() == 1) {
    if (!get) return not_allowed();
    return {200, table_list_json(*s)};
  }

  const auto* t = s->find(seg[1]);
  if (seg.size() == 2) {
    if (!get) return not_allowed();
    if (!t) return detail::error_response(404, "unknown table " + std::string(seg[1]));
    return {200, table_json(*s, *t)};
  }
  if (seg.size() == 3 && seg[2] == "style") {
    if (!get) return not_allowed();
    if (!t) return detail::error_response(404, "unknown table " + std::string(seg[1]));
    const auto it = s->corpus.styles.find(t->doc_id);
    return {200, ordered_json{{"table_id", t->table_id},
                              {"style_ref", t->style_ref},
                              {"css", it == s->corpus.styles.end() ? std::string() : it->second}}
                     .dump()};
  }
  if (seg.size() == 3 && seg[2] == "similar") {
    if (!get) return not_allowed();
    if (!t) return detail::error_response(404, "unknown table " + std::string(seg[1]));
    if (!s->can_query_tables()) return detail::error_response(503, "model or table index not loaded");
    bool bad = false;
    const auto k = detail::positive_param(query, "k", s->table_k, bad);
    if (bad) return detail::error_response(400, "k must be a positive integer");
    const auto hits = similar_tables(*s, t->table_id, *k);
    return {200, "{\"table_id\":" + detail::jstr(t->table_id) + ",\"k\":" + std::to_string(*k) +
                     ",\"hits\":" + detail::table_hits_json(hits) + "}"};
  }
  if (seg.size() == 3 && seg[2] == "filter") {
    if (!post) return not_allowed();
    if (!t) return detail::error_response(404, "unknown table " + std::string(seg[1]));
    return detail::handle_filter(*s, *t, body);
  }
  if (seg.size() == 5 && seg[2] == "rows" && seg[4] == "similar") {
    if (!get) return not_allowed();
    if (!t) return detail::error_response(404, "unknown table " + std::string(seg[1]));
    const auto ordinal = detail::ordinal_segment(seg[3]);
    if (!ordinal || *ordinal >= static_cast<int>(t->rows.size()))
      return detail::error_response(404, "table " + t->table_id + " has no row " + std::string(seg[3]));
    if (!s->can_query_rows()) return detail::error_response(503, "model, table index or embedding not loaded");
    bool bad = false;
    const auto n = detail::positive_param(query, "n", s->row_n, bad);
    if (bad) return detail::error_response(400, "n must be a positive integer");
    const auto r = similar_rows(*s, t->table_id, *ordinal, *n);
    std::string nb = "[";
    for (std::size_t i = 0; i < r.neighbor_tables.size(); ++i) nb += (i ? "," : "") + detail::jstr(r.neighbor_tables[i]);
    nb += "]";
    return {200, "{\"table_id\":" + detail::jstr(t->table_id) + ",\"row\":" + std::to_string(*ordinal) +
                     ",\"n\":" + std::to_string(*n) + ",\"absent\":" + (r.absent ? "true" : "false") +
                     ",\"neighbor_tables\":" + nb + ",\"hits\":" + detail::row_hits_json(*s, r.hits) + "}"};
  }
  return detail::error_response(404, "no such endpoint");
}

// ---------------------------------------------------------------------------
// HTTP binding

struct ListenAddress {
  std::string host;
  int port = 0;
};

inline ListenAddress parse_listen_address(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw ConfigError("address must be host:port, got " + std::string(addr));
  ListenAddress a{std::string(addr.substr(0, colon)), 0};
  const auto port = addr.substr(colon + 1);
  const auto r = std::from_chars(port.data(), port.data() + port.size(), a.port);
  if (r.ec != std::errc() || r.ptr != port.data() + port.size() || a.port < 0 || a.port > 65535)
    throw ConfigError("bad port in address " + std::string(addr));
  if (a.host.size() > 2 && a.host.front() == '[' && a.host.back() == ']') a.host = a.host.substr(1, a.host.size() - 2);
  return a;
}

/// Flag, then TABLESAGE_ADDR, then the config value.
inline std::string resolve_address(const std::optional<std::string>& flag, const PipelineConfig& cfg) {
  if (flag) return *flag;
  if (const char* env = std::getenv("TABLESAGE_ADDR"); env && *env) return env;
  return cfg.addr;
}

inline void install_routes(httplib::Server& svr, const Engine& engine) {
  auto handler = [&engine](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q.emplace(k, v);
    const auto snap = engine.snapshot();
    ApiResponse r;
    try {
      r = route(snap.get(), req.method, req.path, q, req.body);
    } catch (const std::exception& e) {
      r = detail::error_response(500, e.what());
    }
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Put(".*", handler);
  svr.Delete(".*", handler);
}

}  // namespace tablesage

#endif  // TABLESAGE_SERVICE_HPP
