#ifndef TABLESAGE_EVAL_HPP
#define TABLESAGE_EVAL_HPP

// Classification metrics, hit rates and the row-similarity evaluation.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "tablesage/corpus.hpp"
#include "tablesage/embedding.hpp"
#include "tablesage/similarity.hpp"

namespace tablesage {

struct LabelMetrics {
  int label = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0;  // 0 when tp + fp == 0
  double recall = 0;     // 0 when tp + fn == 0
  std::size_t support() const { return tp + fn; }
};

struct EvalReport {
  double accuracy = 0;  // percent
  std::vector<LabelMetrics> labels;
  double weighted_precision = 0;  // weights are per-label TP counts
  double weighted_recall = 0;
  double support_weighted_precision = 0;
  double support_weighted_recall = 0;
};

inline EvalReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw Error("compute_metrics: prediction/label length mismatch");
  if (truth.empty()) throw Error("compute_metrics: no samples");
  std::map<int, LabelMetrics> m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& t = m[truth[i]];
    auto& p = m[predicted[i]];
    t.label = truth[i];
    p.label = predicted[i];
    if (predicted[i] == truth[i]) {
      ++t.tp;
      ++correct;
    } else {
      ++t.fn;
      ++p.fp;
    }
  }
  EvalReport r;
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
  double tp_total = 0, support_total = 0;
  for (auto& [label, lm] : m) {
    if (lm.tp + lm.fp > 0) lm.precision = static_cast<double>(lm.tp) / static_cast<double>(lm.tp + lm.fp);
    if (lm.tp + lm.fn > 0) lm.recall = static_cast<double>(lm.tp) / static_cast<double>(lm.tp + lm.fn);
    const auto w = static_cast<double>(lm.tp);
    const auto s = static_cast<double>(lm.support());
    r.weighted_precision += w * lm.precision;
    r.weighted_recall += w * lm.recall;
    r.support_weighted_precision += s * lm.precision;
    r.support_weighted_recall += s * lm.recall;
    tp_total += w;
    support_total += s;
    r.labels.push_back(lm);
  }
  if (tp_total > 0) {
    r.weighted_precision /= tp_total;
    r.weighted_recall /= tp_total;
  }
  r.support_weighted_precision /= support_total;
  r.support_weighted_recall /= support_total;
  return r;
}

inline double hit_rate(std::size_t hits, std::size_t total) {
  if (total == 0) throw Error("hit_rate: no rows iterated");
  if (hits > total) throw Error("hit_rate: more hits than rows");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Ground truth

struct RowRef {
  std::string table_id;
  int row = 0;
  auto operator<=>(const RowRef&) const = default;
};

inline std::string to_string(const RowRef& r) { return r.table_id + ":" + std::to_string(r.row); }

using RowSimGroundTruth = std::map<RowRef, std::set<RowRef>>;

namespace detail {

inline RowRef parse_row_ref(std::string_view s, std::size_t line) {
  s = trim(s);
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == s.size())
    throw Error("ground truth line " + std::to_string(line) + ": bad row reference \"" + std::string(s) + "\"");
  const auto num = s.substr(colon + 1);
  if (!std::all_of(num.begin(), num.end(), is_ascii_digit))
    throw Error("ground truth line " + std::to_string(line) + ": bad row number \"" + std::string(num) + "\"");
  return {std::string(s.substr(0, colon)), std::stoi(std::string(num))};
}

}  // namespace detail

inline RowSimGroundTruth parse_ground_truth(std::string_view text) {
  RowSimGroundTruth gt;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto arrow = line.find("->");
    if (arrow == std::string_view::npos) throw Error("ground truth line " + std::to_string(line_no) + ": missing ->");
    const auto q = detail::parse_row_ref(line.substr(0, arrow), line_no);
    auto& targets = gt[q];
    const auto rhs = trim(line.substr(arrow + 2));
    std::size_t p = 0;
    while (p < rhs.size()) {
      auto comma = rhs.find(',', p);
      if (comma == std::string_view::npos) comma = rhs.size();
      const auto ref = detail::parse_row_ref(rhs.substr(p, comma - p), line_no);
      if (ref == q) throw Error("ground truth line " + std::to_string(line_no) + ": row refers to itself");
      targets.insert(ref);
      p = comma + 1;
    }
  }
  return gt;
}

inline std::string format_ground_truth(const RowSimGroundTruth& gt) {
  std::string out;
  for (const auto& [q, targets] : gt) {
    out += to_string(q) + " -> ";
    bool first = true;
    for (const auto& t : targets) {
      if (!first) out += ',';
      out += to_string(t);
      first = false;
    }
    out += '\n';
  }
  return out;
}

/// Every reference must name an existing row of the corpus.
inline void validate_ground_truth(const RowSimGroundTruth& gt, const Corpus& corpus) {
  auto check = [&](const RowRef& r) {
    const auto* t = corpus.find(r.table_id);
    if (!t || r.row < 0 || r.row >= static_cast<int>(t->rows.size()))
      throw Error("ground truth references unknown row " + to_string(r));
  };
  for (const auto& [q, targets] : gt) {
    check(q);
    for (const auto& t : targets) {
      check(t);
      if (t == q) throw Error("ground truth row " + to_string(q) + " refers to itself");
    }
  }
}

// ---------------------------------------------------------------------------
// Row similarity evaluation

enum class RowSimMethod { CustomEmbedding, PretrainedEmbedding, Trigram };

inline std::string_view to_string(RowSimMethod m) {
  switch (m) {
    case RowSimMethod::CustomEmbedding: return "custom_embedding";
    case RowSimMethod::PretrainedEmbedding: return "pretrained_embedding";
    case RowSimMethod::Trigram: return "trigram";
  }
  return "?";
}

struct TableHitRate {
  std::string table_id;
  std::size_t hits = 0;
  std::size_t rows = 0;
  double rate() const { return rows ? hit_rate(hits, rows) : 0.0; }
};

struct HitRateReport {
  RowSimMethod method = RowSimMethod::CustomEmbedding;
  std::vector<TableHitRate> tables;
  double average = 0;  // mean of per-table H over tables with at least one query row
  double pooled = 0;   // 100 * total hits / total rows
};

/// Top-n rows by trigram similarity of header text, among candidate rows that
/// share at least one trigram with the query.
inline std::vector<NeighborHit> trigram_similar_rows(const Row& query, const std::vector<const ExtractedTable*>& tables,
                                                     std::size_t n) {
  std::vector<NeighborHit> hits;
  for (const auto* t : tables)
    for (const auto& r : t->rows) {
      const double s = trigram_similarity(query.header_text, r.header_text);
      if (s > 0) hits.push_back({t->table_id, r.ordinal, 1.0 - s});
    }
  std::sort(hits.begin(), hits.end(), hit_less);
  if (hits.size() > n) hits.resize(n);
  return hits;
}

/// Every row of every table is a query against the rows of that table's
/// k nearest tables; a query is a hit when one of its top-n results is in the
/// ground-truth set. The embedding is ignored for the trigram method.
inline HitRateReport evaluate_rowsim(RowSimMethod method, const Corpus& corpus, const TableIndex& tables,
                                     const WordEmbedding* embedding, const RowSimGroundTruth& gt,
                                     std::size_t n = 5, std::size_t k = 5) {
  if (method != RowSimMethod::Trigram && !embedding) throw Error("embedding method needs an embedding");
  HitRateReport rep;
  rep.method = method;
  std::size_t all_hits = 0, all_rows = 0, counted = 0;
  double sum = 0;
  for (const auto& t : corpus.tables) {
    std::vector<const ExtractedTable*> neighbors;
    std::vector<std::string> ids;
    for (const auto& h : query_similar_tables(tables, t.table_id, k)) {
      neighbors.push_back(corpus.find(h.table_id));
      ids.push_back(h.table_id);
    }
    std::optional<RowIndex> rows;
    if (method != RowSimMethod::Trigram) rows = RowIndex::build(neighbors, *embedding);

    TableHitRate th{t.table_id, 0, 0};
    for (const auto& r : t.rows) {
      std::vector<NeighborHit> hits;
      if (method == RowSimMethod::Trigram) {
        if (trigram_set(r.header_text).empty()) continue;
        hits = trigram_similar_rows(r, neighbors, n);
      } else {
        const auto v = row_vector(tokenize_row(r), *embedding);
        if (!v) continue;
        hits = query_similar_rows(*rows, v, n, ids);
      }
      ++th.rows;
      const auto it = gt.find({t.table_id, r.ordinal});
      if (it == gt.end()) continue;
      for (const auto& h : hits)
        if (it->second.contains({h.table_id, h.row})) {
          ++th.hits;
          break;
        }
    }
    all_hits += th.hits;
    all_rows += th.rows;
    if (th.rows) {
      sum += th.rate();
      ++counted;
    }
    rep.tables.push_back(th);
  }
  rep.average = counted ? sum / static_cast<double>(counted) : 0.0;
  rep.pooled = all_rows ? hit_rate(all_hits, all_rows) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_classification_report(const EvalReport& r, const std::vector<std::string>& label_names) {
  std::string out = "label,name,tp,fp,fn,support,precision,recall\n";
  for (const auto& l : r.labels) {
    const auto name = l.label >= 0 && static_cast<std::size_t>(l.label) < label_names.size()
                          ? label_names[static_cast<std::size_t>(l.label)]
                          : std::string();
    out += std::to_string(l.label) + "," + detail::csv_field(name) + "," + std::to_string(l.tp) + "," +
           std::to_string(l.fp) + "," + std::to_string(l.fn) + "," + std::to_string(l.support()) + "," +
           format_fixed(l.precision, 6) + "," + format_fixed(l.recall, 6) + "\n";
  }
  out += "# summary accuracy=" + format_fixed(r.accuracy, 4) +
         " weighted_precision=" + format_fixed(r.weighted_precision, 6) +
         " weighted_recall=" + format_fixed(r.weighted_recall, 6) +
         " support_weighted_precision=" + format_fixed(r.support_weighted_precision, 6) +
         " support_weighted_recall=" + format_fixed(r.support_weighted_recall, 6) + "\n";
  return out;
}

inline std::string format_rowsim_report(const std::vector<HitRateReport>& reports) {
  std::string out = "method,table_id,hits,rows,hit_rate\n";
  for (const auto& rep : reports)
    for (const auto& t : rep.tables)
      out += std::string(to_string(rep.method)) + "," + detail::csv_field(t.table_id) + "," + std::to_string(t.hits) +
             "," + std::to_string(t.rows) + "," + (t.rows ? format_fixed(t.rate(), 2) : std::string("NA")) + "\n";
  for (const auto& rep : reports)
    out += "# summary method=" + std::string(to_string(rep.method)) + " average=" + format_fixed(rep.average, 2) +
           " pooled=" + format_fixed(rep.pooled, 2) + "\n";
  return out;
}

}  // namespace tablesage

#endif  // TABLESAGE_EVAL_HPP
