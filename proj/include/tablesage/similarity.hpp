#ifndef TABLESAGE_SIMILARITY_HPP
#define TABLESAGE_SIMILARITY_HPP

// Brute-force nearest neighbours over table probability vectors and row
// vectors, the trigram string similarity, and exact t-SNE.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "tablesage/corpus.hpp"
#include "tablesage/embedding.hpp"
#include "tablesage/lstm.hpp"
#include "tablesage/random.hpp"
#include "tablesage/tokenize.hpp"

namespace tablesage {

struct NeighborHit {
  std::string table_id;
  int row = -1;  // row ordinal for row hits
  double distance = 0;

  bool operator==(const NeighborHit&) const = default;
};

inline bool hit_less(const NeighborHit& a, const NeighborHit& b) {
  return std::tie(a.distance, a.table_id, a.row) < std::tie(b.distance, b.table_id, b.row);
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("vector length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

class UnknownIdError : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Tables

class TableIndex {
public:
  void add(std::string table_id, ProbabilityVector v) {
    if (!vectors_.empty() && v.size() != vectors_.front().size())
      throw Error("all probability vectors in an index must have one length");
    if (!pos_.emplace(table_id, ids_.size()).second) throw Error("table " + table_id + " already indexed");
    ids_.push_back(std::move(table_id));
    vectors_.push_back(std::move(v));
  }

  std::size_t size() const noexcept { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const ProbabilityVector& vector(std::size_t i) const { return vectors_.at(i); }
  bool contains(std::string_view id) const { return pos_.contains(std::string(id)); }

  std::size_t position(std::string_view id) const {
    const auto it = pos_.find(std::string(id));
    if (it == pos_.end()) throw UnknownIdError("unknown table " + std::string(id));
    return it->second;
  }
  const ProbabilityVector& vector(std::string_view id) const { return vectors_[position(id)]; }

private:
  std::vector<std::string> ids_;
  std::vector<ProbabilityVector> vectors_;
  std::map<std::string, std::size_t> pos_;
};

inline std::vector<NeighborHit> query_similar_tables(const TableIndex& index, std::string_view table_id,
                                                     std::size_t k = 5) {
  const auto q = index.position(table_id);
  std::vector<NeighborHit> hits;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i == q) continue;
    hits.push_back({index.id(i), -1, euclidean(index.vector(q), index.vector(i))});
  }
  std::sort(hits.begin(), hits.end(), hit_less);
  if (hits.size() > k) hits.resize(k);
  return hits;
}

/// Leave-one-out majority vote among the k nearest tables, in percent. A tie
/// goes to whichever tied class appears first in distance order.
inline double knn_class_accuracy(const TableIndex& index, const std::map<std::string, int>& labels,
                                 std::size_t k = 5) {
  if (index.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto hits = query_similar_tables(index, index.id(i), k);
    std::map<int, int> votes;
    for (const auto& h : hits) ++votes[labels.at(h.table_id)];
    int best = 0;
    for (const auto& [c, n] : votes) best = std::max(best, n);
    std::optional<int> winner;
    for (const auto& h : hits) {
      const int c = labels.at(h.table_id);
      if (votes[c] == best) {
        winner = c;
        break;
      }
    }
    if (winner && *winner == labels.at(index.id(i))) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(index.size());
}

// ---------------------------------------------------------------------------
// Rows

struct RowEntry {
  std::string table_id;
  int row = 0;
  std::vector<double> vector;  // unit norm
};

class RowIndex {
public:
  void add(std::string table_id, int row, std::vector<double> v) {
    tables_.insert(table_id);
    entries_.push_back({std::move(table_id), row, std::move(v)});
  }

  /// Every row of the given tables that has a vector.
  static RowIndex build(const std::vector<const ExtractedTable*>& tables, const WordEmbedding& emb) {
    RowIndex idx;
    for (const auto* t : tables) {
      idx.tables_.insert(t->table_id);
      for (const auto& r : t->rows)
        if (auto v = row_vector(tokenize_row(r), emb)) idx.add(t->table_id, r.ordinal, std::move(*v));
    }
    return idx;
  }

  const std::vector<RowEntry>& entries() const noexcept { return entries_; }
  bool has_table(std::string_view id) const { return tables_.contains(std::string(id)); }

private:
  std::vector<RowEntry> entries_;
  std::set<std::string> tables_;
};

class AbsentVectorError : public Error {
public:
  using Error::Error;
};

inline std::vector<NeighborHit> query_similar_rows(const RowIndex& index,
                                                   const std::optional<std::vector<double>>& query, std::size_t n,
                                                   const std::vector<std::string>& candidate_tables) {
  if (!query) throw AbsentVectorError("query row has no in-vocabulary tokens");
  std::set<std::string> cand;
  for (const auto& id : candidate_tables) {
    if (!index.has_table(id)) throw UnknownIdError("table " + id + " is not in the row index");
    cand.insert(id);
  }
  std::vector<NeighborHit> hits;
  for (const auto& e : index.entries())
    if (cand.contains(e.table_id)) hits.push_back({e.table_id, e.row, euclidean(*query, e.vector)});
  std::sort(hits.begin(), hits.end(), hit_less);
  if (hits.size() > n) hits.resize(n);
  return hits;
}

// ---------------------------------------------------------------------------
// Trigrams

inline std::set<std::string> trigram_set(std::string_view text) {
  std::set<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const std::string padded = "  " + word + " ";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) out.insert(padded.substr(i, 3));
    word.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80)
      word += static_cast<char>(std::tolower(u));
    else
      flush();
  }
  flush();
  return out;
}

inline double trigram_similarity(std::string_view a, std::string_view b) {
  const auto sa = trigram_set(a);
  const auto sb = trigram_set(b);
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

// ---------------------------------------------------------------------------
// Exact t-SNE

struct TsneConfig {
  double perplexity = 20;
  int iterations = 1000;
  double learning_rate = 200;
  int exaggeration_iterations = 100;
  double exaggeration = 12;
  int momentum_switch = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::uint64_t seed = 42;
};

struct TsneResult {
  std::vector<std::array<double, 2>> points;
  std::vector<double> kl;  // objective of the layout at the start of each iteration
};

namespace detail {

/// Row-conditional affinities with each point's bandwidth tuned so the
/// entropy matches log(perplexity).
inline std::vector<double> conditional_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
  std::vector<double> P(n * n, 0.0);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = -INFINITY, hi = INFINITY;
    for (int it = 0; it < 200; ++it) {
      double sum = 0, dsum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double p = std::exp(-beta * d2[i * n + j]);
        P[i * n + j] = p;
        sum += p;
        dsum += p * d2[i * n + j];
      }
      if (sum <= 0) sum = 1e-300;
      const double H = std::log(sum) + beta * dsum / sum;
      for (std::size_t j = 0; j < n; ++j) P[i * n + j] /= sum;
      const double diff = H - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
      }
    }
  }
  return P;
}

}  // namespace detail

inline TsneResult tsne(const std::vector<std::vector<double>>& X, const TsneConfig& cfg) {
  const std::size_t n = X.size();
  if (cfg.perplexity < 3 || !(cfg.perplexity < (static_cast<double>(n) - 1) / 3))
    throw Error("t-SNE with perplexity " + format_double(cfg.perplexity) + " needs more than " +
                std::to_string(static_cast<long>(std::floor(3 * cfg.perplexity + 1))) + " points (have " +
                std::to_string(n) + ")");
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = euclidean(X[i], X[j]);
      d2[i * n + j] = d2[j * n + i] = d * d;
    }
  auto P = detail::conditional_affinities(d2, n, cfg.perplexity);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((P[i * n + j] + P[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      P[i * n + j] = P[j * n + i] = s;
    }

  using Layout = std::vector<std::array<double, 2>>;
  std::vector<double> num(n * n);
  double zsum = 0;
  // Student-t kernel of a layout into num/zsum; returns KL(P || Q).
  auto objective = [&](const Layout& Y, std::vector<double>& nm, double& z) {
    z = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = Y[i][0] - Y[j][0], dy = Y[i][1] - Y[j][1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        nm[i * n + j] = nm[j * n + i] = q;
        z += 2 * q;
      }
    double kl = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) kl += P[i * n + j] * std::log(P[i * n + j] / std::max(nm[i * n + j] / z, 1e-12));
    return kl;
  };

  Rng rng(cfg.seed);
  Layout Y(n);
  for (auto& y : Y) y = {1e-4 * rng.normal(), 1e-4 * rng.normal()};
  Layout update(n, {0, 0}), gains(n, {1, 1}), grad(n), trial(n);
  std::vector<double> trial_num(n * n);
  double trial_z = 0;
  double kl = objective(Y, num, zsum);
  TsneResult res;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    res.kl.push_back(kl);
    const double exag = iter < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double mom = iter < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 2> g{0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num[i * n + j] / zsum, 1e-12);
        const double m = (exag * P[i * n + j] - q) * num[i * n + j];
        g[0] += m * (Y[i][0] - Y[j][0]);
        g[1] += m * (Y[i][1] - Y[j][1]);
      }
      grad[i] = {4 * g[0], 4 * g[1]};
      for (std::size_t d = 0; d < 2; ++d) {
        auto& gain = gains[i][d];
        auto& up = update[i][d];
        gain = (grad[i][d] > 0) != (up > 0) ? gain + 0.2 : gain * 0.8;
        gain = std::max(gain, 0.01);
        up = mom * up - cfg.learning_rate * gain * grad[i][d];
      }
    }
    for (std::size_t i = 0; i < n; ++i) trial[i] = {Y[i][0] + update[i][0], Y[i][1] + update[i][1]};
    double trial_kl = objective(trial, trial_num, trial_z);
    if (iter >= cfg.exaggeration_iterations && trial_kl > kl) {
      // Momentum overshot: drop it and backtrack along the plain gradient.
      for (auto& u : update) u = {0, 0};
      for (auto& g : gains) g = {1, 1};
      bool accepted = false;
      double step = cfg.learning_rate;
      for (int halving = 0; halving < 40 && !accepted; ++halving, step /= 2) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = {Y[i][0] - step * grad[i][0], Y[i][1] - step * grad[i][1]};
        trial_kl = objective(trial, trial_num, trial_z);
        accepted = trial_kl <= kl;
      }
      if (!accepted) {
        trial = Y;
        trial_kl = objective(trial, trial_num, trial_z);
      }
    }
    std::array<double, 2> mean{0, 0};
    for (const auto& y : trial)
      for (std::size_t d = 0; d < 2; ++d) mean[d] += y[d] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < 2; ++d) Y[i][d] = trial[i][d] - mean[d];
    num.swap(trial_num);
    zsum = trial_z;
    kl = trial_kl;
  }
  res.points = std::move(Y);
  return res;
}

struct ProjectionPoint {
  std::string table_id;
  double x = 0;
  double y = 0;
  int label = 0;
};

inline std::string format_projection(const std::vector<ProjectionPoint>& pts) {
  std::string out = "table_id,x,y,label_id\n";
  for (const auto& p : pts)
    out += detail::csv_field(p.table_id) + "," + format_double(p.x) + "," + format_double(p.y) + "," +
           std::to_string(p.label) + "\n";
  return out;
}

inline std::vector<ProjectionPoint> parse_projection(std::string_view text) {
  std::vector<ProjectionPoint> out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw Error("projection line needs 4 fields");
    out.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stoi(f[3])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cluster quality of a 2-d layout

/// Mean silhouette with Euclidean distance; points alone in their class score 0.
inline double silhouette(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& labels) {
  const std::size_t n = pts.size();
  if (n == 0 || labels.size() != n) throw Error("silhouette: need one label per point");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by_class;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& [sum, cnt] = by_class[labels[j]];
      sum += std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
      ++cnt;
    }
    const auto own = by_class.find(labels[i]);
    if (own == by_class.end()) continue;
    const double a = own->second.first / own->second.second;
    double b = INFINITY;
    for (const auto& [c, sc] : by_class)
      if (c != labels[i]) b = std::min(b, sc.first / sc.second);
    if (std::isinf(b)) continue;
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

/// Fraction of points whose nearest other point shares their label.
inline double nearest_neighbor_purity(const std::vector<std::array<double, 2>>& pts, const std::vector<int>& labels) {
  const std::size_t n = pts.size();
  if (n < 2 || labels.size() != n) throw Error("purity: need at least 2 labelled points");
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    double bd = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    if (labels[best] == labels[i]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(n);
}

}  // namespace tablesage

#endif  // TABLESAGE_SIMILARITY_HPP
