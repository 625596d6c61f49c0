#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tablesage/similarity.hpp"

using namespace tablesage;

namespace {

// Reference distance and ordering written without the library helpers.
double ref_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<std::pair<double, std::string>> brute_tables(const std::vector<std::string>& ids,
                                                          const std::vector<std::vector<double>>& vs,
                                                          std::size_t q, std::size_t k) {
  std::vector<std::pair<double, std::string>> all;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (i != q) all.emplace_back(ref_dist(vs[q], vs[i]), ids[i]);
  std::sort(all.begin(), all.end());
  all.resize(std::min(all.size(), k));
  return all;
}

std::vector<double> random_simplex(Rng& rng, std::size_t c) {
  std::vector<double> v(c);
  double s = 0;
  for (auto& x : v) s += (x = rng.uniform() + 1e-3);
  for (auto& x : v) x /= s;
  return v;
}

// Trigram oracle: words found by scanning for runs, padded per the rule,
// collected into a sorted unique vector.
std::vector<std::string> ref_trigrams(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    auto word_char = [](unsigned char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; };
    if (!word_char(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && word_char(static_cast<unsigned char>(s[j]))) ++j;
    std::string w = "  ";
    for (std::size_t k = i; k < j; ++k) {
      char c = s[k];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      w += c;
    }
    w += ' ';
    for (std::size_t k = 0; k + 2 < w.size(); ++k) out.push_back(w.substr(k, 3));
    i = j;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double ref_similarity(const std::string& a, const std::string& b) {
  const auto x = ref_trigrams(a), y = ref_trigrams(b);
  std::vector<std::string> inter, uni;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(inter));
  std::set_union(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(uni));
  return uni.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

}  // namespace

TEST(TableQuery, SelfExcludedAndDuplicatesFirst) {
  TableIndex idx;
  idx.add("A", {0.9, 0.1});
  idx.add("B", {0.2, 0.8});
  idx.add("C", {0.9, 0.1});
  const auto hits = query_similar_tables(idx, "A");
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].table_id, "C");
  EXPECT_EQ(hits[0].distance, 0.0);
  for (const auto& h : hits) EXPECT_NE(h.table_id, "A");
  EXPECT_THROW(query_similar_tables(idx, "nope"), UnknownIdError);
  EXPECT_THROW(idx.add("D", {1.0}), Error);
  EXPECT_THROW(idx.add("A", {0.5, 0.5}), Error);
}

TEST(TableQuery, HandSetFixture) {
  TableIndex idx;
  idx.add("t1", {1.0, 0.0, 0.0});
  idx.add("t2", {0.8, 0.2, 0.0});
  idx.add("t3", {0.0, 1.0, 0.0});
  idx.add("t4", {0.6, 0.2, 0.2});
  idx.add("t5", {0.0, 0.0, 1.0});
  idx.add("t6", {0.8, 0.0, 0.2});  // ties with t2 from t1
  const auto hits = query_similar_tables(idx, "t1");
  std::vector<std::string> order;
  for (const auto& h : hits) order.push_back(h.table_id);
  EXPECT_EQ(order, (std::vector<std::string>{"t2", "t6", "t4", "t3", "t5"}));
  EXPECT_NEAR(hits[0].distance, std::sqrt(0.08), 1e-15);
  EXPECT_EQ(hits[0].distance, hits[1].distance);
  EXPECT_EQ(query_similar_tables(idx, "t1", 2).size(), 2u);
}

TEST(TableQuery, MatchesBruteForce) {
  Rng rng(3);
  for (std::size_t n : {2u, 7u, 50u, 200u}) {
    TableIndex idx;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> vs;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back("tab" + std::to_string(i));
      // Some exact duplicates so that ties are exercised.
      vs.push_back(i % 9 == 4 ? vs[i - 1] : random_simplex(rng, 4));
      idx.add(ids.back(), vs.back());
    }
    for (std::size_t q = 0; q < n; ++q) {
      const auto hits = query_similar_tables(idx, ids[q], 5);
      const auto ref = brute_tables(ids, vs, q, 5);
      ASSERT_EQ(hits.size(), ref.size());
      for (std::size_t k = 0; k < ref.size(); ++k) {
        EXPECT_EQ(hits[k].table_id, ref[k].second);
        EXPECT_EQ(hits[k].distance, ref[k].first);
      }
      const auto& any = hits.front();
      EXPECT_EQ(any.distance, euclidean(idx.vector(any.table_id), idx.vector(ids[q])));
    }
  }
}

TEST(Knn, SeparatedClassesPerfect) {
  TableIndex idx;
  std::map<std::string, int> labels;
  for (int i = 0; i < 12; ++i) {
    const int c = i % 3;
    std::vector<double> v(3, 0.0);
    v[static_cast<std::size_t>(c)] = 1.0;
    idx.add("t" + std::to_string(i), v);
    labels["t" + std::to_string(i)] = c;
  }
  EXPECT_EQ(knn_class_accuracy(idx, labels, 3), 100.0);
}

// Five points on a line; with k=2 each query sees its two nearest. Expected
// votes worked out by hand:
//   a(0) -> b,c : 0,1 tie -> nearest b -> 0  correct
//   b(1) -> a,c : 0,1 tie -> nearest a -> 0  correct
//   c(3) -> b,d : 0,1 tie -> nearest d (dist 0.5) -> 1  correct
//   d(3.5) -> c,e : 1,1 -> 1  correct
//   e(6) -> d,c : 1,1 -> 1  wrong (e is class 0)
TEST(Knn, HandFixture) {
  TableIndex idx;
  idx.add("a", {0.0});
  idx.add("b", {1.0});
  idx.add("c", {3.0});
  idx.add("d", {3.5});
  idx.add("e", {6.0});
  const std::map<std::string, int> labels = {{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}, {"e", 0}};
  EXPECT_DOUBLE_EQ(knn_class_accuracy(idx, labels, 2), 80.0);
}

TEST(RowQuery, Basics) {
  RowIndex idx;
  idx.add("A", 0, {1, 0});
  idx.add("A", 1, {0, 1});
  idx.add("B", 0, {std::sqrt(0.5), std::sqrt(0.5)});
  idx.add("C", 3, {1, 0});
  const auto hits = query_similar_rows(idx, std::vector<double>{1, 0}, 10, {"A", "B"});
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0], (NeighborHit{"A", 0, 0.0}));
  EXPECT_EQ(hits[1].table_id, "B");
  EXPECT_EQ(hits[2].row, 1);
  EXPECT_EQ(query_similar_rows(idx, std::vector<double>{1, 0}, 1, {"C"}).front().distance, 0.0);
  EXPECT_THROW(query_similar_rows(idx, std::nullopt, 5, {"A"}), AbsentVectorError);
  EXPECT_THROW(query_similar_rows(idx, std::vector<double>{1, 0}, 5, {"Z"}), UnknownIdError);
}

TEST(RowQuery, TwelveRowFixtureMatchesBruteForce) {
  Rng rng(8);
  RowIndex idx;
  std::vector<std::tuple<std::string, int, std::vector<double>>> rows;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> v(3);
    double n = 0;
    for (auto& x : v) {
      x = rng.normal();
      n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    rows.emplace_back("T" + std::to_string(i % 4), i, v);
    idx.add("T" + std::to_string(i % 4), i, v);
  }
  const std::vector<double> q = std::get<2>(rows[5]);
  const std::vector<std::string> cand = {"T0", "T2", "T3"};
  std::vector<std::tuple<double, std::string, int>> ref;
  for (const auto& [t, r, v] : rows)
    if (t != "T1") ref.emplace_back(ref_dist(q, v), t, r);
  std::sort(ref.begin(), ref.end());
  const auto hits = query_similar_rows(idx, q, 5, cand);
  ASSERT_EQ(hits.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(hits[k].distance, std::get<0>(ref[k]));
    EXPECT_EQ(hits[k].table_id, std::get<1>(ref[k]));
    EXPECT_EQ(hits[k].row, std::get<2>(ref[k]));
  }
}

TEST(RowQuery, BuiltFromTables) {
  WordEmbedding e;
  e.vocab = Vocabulary({"cash", "flow", "tax"}, {1, 1, 1});
  e.matrix.dim = 2;
  e.matrix.data = {1, 0, 0, 1, -1, 0};
  ExtractedTable t;
  t.table_id = "X";
  for (std::string text : {"Cash flow", "1,234", "tax"}) {
    Row r;
    r.ordinal = static_cast<int>(t.rows.size());
    const auto v = parse_cell(text);
    r.cells.push_back({0, text, v.kind, v.value, false});
    t.rows.push_back(r);
  }
  const auto idx = RowIndex::build({&t}, e);
  ASSERT_EQ(idx.entries().size(), 2u);
  EXPECT_EQ(idx.entries()[1].row, 2);
  const auto hits = query_similar_rows(idx, row_vector({"cash", "flow"}, e), 5, {"X"});
  EXPECT_EQ(hits[0].row, 0);
  EXPECT_EQ(hits[0].distance, 0.0);
}

TEST(Trigram, Examples) {
  EXPECT_EQ(trigram_set("cat"), (std::set<std::string>{"  c", " ca", "cat", "at "}));
  EXPECT_TRUE(trigram_set("").empty());
  EXPECT_EQ(trigram_set("Cat cat"), trigram_set("cat"));
  EXPECT_EQ(trigram_similarity("word", "word"), 1.0);
  EXPECT_EQ(trigram_similarity("", "x"), 0.0);
  EXPECT_EQ(trigram_similarity("", ""), 0.0);
  EXPECT_EQ(trigram_similarity("abc", "xyz"), 0.0);
  // {"  c"," ca","cat","at "} vs {"  c"," ca","car","ar "}: 2 shared of 6.
  EXPECT_DOUBLE_EQ(trigram_similarity("cat", "car"), 2.0 / 6.0);
}

TEST(Trigram, MatchesReferenceOnRandomPairs) {
  Rng rng(101);
  const std::string alphabet = "abcdeABC 019-,.()";
  for (int trial = 0; trial < 100; ++trial) {
    auto gen = [&] {
      std::string s;
      const auto len = rng.below(20);
      for (std::uint64_t k = 0; k < len; ++k) s += alphabet[rng.below(alphabet.size())];
      return s;
    };
    const auto a = gen(), b = gen();
    const double s = trigram_similarity(a, b);
    EXPECT_EQ(s, ref_similarity(a, b)) << '"' << a << "\" \"" << b << '"';
    EXPECT_EQ(s, trigram_similarity(b, a));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    EXPECT_EQ(s == 1.0, !trigram_set(a).empty() && trigram_set(a) == trigram_set(b));
  }
}

namespace {

std::vector<std::vector<double>> two_clusters(Rng& rng) {
  std::vector<std::vector<double>> X;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 20; ++i) {
      std::vector<double> v(8);
      for (auto& x : v) x = rng.normal();
      v[0] += c * 10.0;
      X.push_back(v);
    }
  return X;
}

}  // namespace

TEST(Tsne, SeparatesTwoClusters) {
  Rng rng(12);
  const auto X = two_clusters(rng);
  TsneConfig cfg;
  cfg.perplexity = 10;
  const auto res = tsne(X, cfg);
  ASSERT_EQ(res.points.size(), 40u);
  for (std::size_t i = 0; i < 40; ++i) {
    ASSERT_TRUE(std::isfinite(res.points[i][0]) && std::isfinite(res.points[i][1]));
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < 40; ++j)
      if (j != i) d.emplace_back(std::hypot(res.points[i][0] - res.points[j][0], res.points[i][1] - res.points[j][1]), j);
    std::sort(d.begin(), d.end());
    for (int k = 0; k < 5; ++k) EXPECT_EQ(d[static_cast<std::size_t>(k)].second / 20, i / 20) << i;
  }
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = static_cast<int>(i / 20);
  EXPECT_GT(silhouette(res.points, labels), 0.5);
  EXPECT_EQ(nearest_neighbor_purity(res.points, labels), 1.0);
}

TEST(Tsne, KlNonIncreasingAfterExaggeration) {
  Rng rng(12);
  TsneConfig cfg;
  cfg.perplexity = 10;
  const auto res = tsne(two_clusters(rng), cfg);
  ASSERT_EQ(res.kl.size(), 1000u);
  for (std::size_t t = 101; t < res.kl.size(); ++t) EXPECT_LE(res.kl[t], res.kl[t - 1] + 1e-6) << "iteration " << t;
}

TEST(Tsne, DuplicatesCoincide) {
  Rng rng(4);
  auto X = two_clusters(rng);
  X[3] = X[7];
  TsneConfig cfg;
  cfg.perplexity = 10;
  const auto res = tsne(X, cfg);
  const double dup = std::hypot(res.points[3][0] - res.points[7][0], res.points[3][1] - res.points[7][1]);
  double spread = 0;
  for (std::size_t j = 0; j < 20; ++j)
    spread += std::hypot(res.points[3][0] - res.points[j][0], res.points[3][1] - res.points[j][1]) / 19;
  EXPECT_LT(dup, 0.1 * spread);
}

TEST(Tsne, DeterministicAndPreconditions) {
  Rng rng(9);
  const auto X = two_clusters(rng);
  TsneConfig cfg;
  cfg.perplexity = 5;
  cfg.iterations = 200;
  const auto a = tsne(X, cfg);
  const auto b = tsne(X, cfg);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.kl, b.kl);
  cfg.perplexity = 13;  // needs n > 40
  EXPECT_THROW(tsne(X, cfg), Error);
  cfg.perplexity = 2;
  EXPECT_THROW(tsne(X, cfg), Error);
}

TEST(Silhouette, HandFixture) {
  // Two pairs on a line: {0,1} and {10,11}. For point 0: a=1, b=mean(10,11)=10.5.
  const std::vector<std::array<double, 2>> p = {{0, 0}, {1, 0}, {10, 0}, {11, 0}};
  const std::vector<int> l = {0, 0, 1, 1};
  const double s0 = (10.5 - 1) / 10.5, s1 = (9.5 - 1) / 9.5;
  EXPECT_NEAR(silhouette(p, l), (s0 + s1 + s1 + s0) / 4, 1e-15);
  EXPECT_EQ(nearest_neighbor_purity(p, {0, 1, 1, 0}), 0.0);
}

TEST(Projection, CsvRoundTrip) {
  const std::vector<ProjectionPoint> pts = {{"T01", 0.1, -2.5, 3}, {"a,b", 1e-7, 12345.678, 0}};
  const auto text = format_projection(pts);
  EXPECT_EQ(text.substr(0, 22), "table_id,x,y,label_id\n");
  const auto back = parse_projection(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].table_id, "a,b");
  EXPECT_EQ(back[1].x, 1e-7);
  EXPECT_EQ(back[0].label, 3);
}
