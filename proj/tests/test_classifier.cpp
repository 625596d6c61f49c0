#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "tablesage/classifier.hpp"

using namespace tablesage;

namespace {

ExtractedTable make_table(const std::string& id, const std::string& company, TableType type,
                          const std::vector<std::vector<std::string>>& rows) {
  ExtractedTable t;
  t.table_id = t.doc_id = t.style_ref = id;
  t.company = company;
  t.table_type = type;
  int ordinal = 0;
  for (const auto& texts : rows) {
    Row r;
    r.ordinal = ordinal++;
    int col = 0;
    for (const auto& s : texts) {
      const auto v = parse_cell(s);
      r.cells.push_back({col++, s, v.kind, v.value, false});
    }
    r.header_text = make_header_text(r);
    t.rows.push_back(std::move(r));
  }
  return t;
}

// Classes draw their words from disjoint pools.
std::vector<ExtractedTable> toy_tables(int per_class, int classes = 2) {
  const std::vector<std::vector<std::string>> pools = {
      {"revenue", "expenses", "profit", "income", "tax", "earnings"},
      {"cash", "receipts", "payments", "operating", "investing", "financing"},
      {"equity", "reserves", "dividends", "shares", "capital", "retained"}};
  const TableType types[] = {TableType::ProfitOrLoss, TableType::CashFlows, TableType::ChangesInEquity};
  Rng rng(5);
  std::vector<ExtractedTable> out;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < classes; ++c) {
      std::vector<std::vector<std::string>> rows = {{"", "2016", "2015"}};
      for (int r = 0; r < 6; ++r) {
        const auto& pool = pools[static_cast<std::size_t>(c)];
        rows.push_back({pool[rng.below(pool.size())] + " " + pool[rng.below(pool.size())],
                        std::to_string(rng.below(5000)), std::to_string(rng.below(5000))});
      }
      char id[16];
      std::snprintf(id, sizeof id, "T%02d", static_cast<int>(out.size()) + 1);
      out.push_back(make_table(id, "Acme", types[c], rows));
    }
  }
  return out;
}

WordEmbedding toy_embedding(const std::vector<ExtractedTable>& tables) {
  std::vector<TokenStream> streams;
  for (const auto& t : tables) streams.push_back(tokenize_table(t));
  SkipGramConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 5;
  return train_skipgram(streams, cfg).embedding;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.patience = 0;
  return cfg;
}

std::size_t argmax(const ProbabilityVector& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace

TEST(LabelMap, RunningIds) {
  const std::vector<ExtractedTable> tables = {
      make_table("a", "X", TableType::CashFlows, {{"x"}}), make_table("b", "Y", TableType::CashFlows, {{"x"}}),
      make_table("c", "X", TableType::CashFlows, {{"x"}}), make_table("d", "X", TableType::ProfitOrLoss, {{"x"}})};
  const auto m = LabelMap::from_tables(tables, true);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.id("X", TableType::CashFlows), 0);
  EXPECT_EQ(m.id("Y", TableType::CashFlows), 1);
  EXPECT_EQ(m.id("X", TableType::ProfitOrLoss), 2);
  EXPECT_THROW(m.id("Z", TableType::CashFlows), Error);

  const auto d = LabelMap::from_tables(tables, false);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.id("anything", TableType::CashFlows), 0);
  EXPECT_EQ(d.id("Y", TableType::ProfitOrLoss), 1);
  EXPECT_EQ(d.name(1), "ProfitOrLoss");
  EXPECT_EQ(m.name(1), "Y/CashFlows");
}

TEST(EncodeSequence, Examples) {
  const Vocabulary v({"a", "b", "c"}, {3, 2, 1});
  EXPECT_EQ(encode_sequence({"a", "b", "c"}, v, 5), (Sequence{kPadIndex, kPadIndex, 0, 1, 2}));
  EXPECT_EQ(encode_sequence({}, v, 3), (Sequence{kPadIndex, kPadIndex, kPadIndex}));
  EXPECT_EQ(encode_sequence({"a", "zzz", "c"}, v, 3), (Sequence{kPadIndex, 0, 2}));
  EXPECT_THROW(encode_sequence({"a"}, v, 0), Error);

  // 45 tokens cycling a,b,c: the first 40 survive.
  TokenStream long_stream;
  for (int i = 0; i < 45; ++i) long_stream.push_back(v.token(static_cast<std::size_t>(i % 3)));
  const auto s = encode_sequence(long_stream, v, 40);
  ASSERT_EQ(s.size(), 40u);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(s[static_cast<std::size_t>(i)], i % 3);
}

TEST(Split, Examples) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("T" + std::to_string(i));
  const auto a = split_train_test(ids, 7);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.test.size(), 2u);
  EXPECT_EQ(a, split_train_test(ids, 7));
  EXPECT_NE(a.train, split_train_test(ids, 8).train);

  auto all = a.train;
  all.insert(all.end(), a.test.begin(), a.test.end());
  std::sort(all.begin(), all.end());
  auto sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(all, sorted);

  EXPECT_THROW(split_train_test({"x"}, 1), Error);
  EXPECT_THROW(split_train_test({"x", "y"}, 1, 0.9), Error);
  EXPECT_THROW(split_train_test(ids, 1, 1.0), Error);
}

TEST(Split, PersistedRoundTrip) {
  std::vector<std::string> ids;
  for (int i = 0; i < 25; ++i) ids.push_back("tbl" + std::to_string(i));
  const auto s = split_train_test(ids, 42, 0.8);
  const auto path = std::filesystem::temp_directory_path() / "tablesage_split_test" / "split.txt";
  detail::write_file(path, format_split(s));
  EXPECT_EQ(parse_split(detail::read_file(path)), s);
  std::filesystem::remove_all(path.parent_path());
  EXPECT_THROW(parse_split("seed 1\n"), Error);
}

TEST(Classifier, ToyCorpusReachesFullAccuracy) {
  const auto tables = toy_tables(10);
  const auto emb = toy_embedding(tables);
  const auto labels = LabelMap::from_tables(tables, true);
  const auto res = train_classifier(tables, emb, labels, toy_config());
  ASSERT_EQ(res.log.size(), 30u);
  const bool perfect = std::any_of(res.log.begin(), res.log.end(), [](const EpochLog& e) { return e.test_accuracy == 100.0; });
  EXPECT_TRUE(perfect);
  for (const auto& id : res.model.split.train) {
    const auto& t = *std::find_if(tables.begin(), tables.end(), [&](const auto& x) { return x.table_id == id; });
    const auto p = predict(res.model, emb, t);
    EXPECT_EQ(argmax(p), static_cast<std::size_t>(labels.id(t)));
  }
}

TEST(Classifier, ToyCorpusLossTrend) {
  const auto tables = toy_tables(10);
  const auto emb = toy_embedding(tables);
  const auto res = train_classifier(tables, emb, LabelMap::from_tables(tables, true), toy_config());
  ASSERT_EQ(res.log.size(), 30u);
  for (std::size_t e = 0; e + 5 < res.log.size(); ++e)
    EXPECT_LE(res.log[e + 5].train_loss, res.log[e].train_loss * 1.05) << "epoch " << e + 1;
}

TEST(Classifier, DeterministicModelBytes) {
  const auto tables = toy_tables(5);
  const auto emb = toy_embedding(tables);
  const auto labels = LabelMap::from_tables(tables, true);
  auto cfg = toy_config();
  cfg.epochs = 4;
  const auto a = serialize_model(train_classifier(tables, emb, labels, cfg).model);
  const auto b = serialize_model(train_classifier(tables, emb, labels, cfg).model);
  EXPECT_EQ(a, b);
  cfg.seed = 43;
  EXPECT_NE(a, serialize_model(train_classifier(tables, emb, labels, cfg).model));
}

TEST(Classifier, ProbabilitiesNormalized) {
  const auto tables = toy_tables(5, 3);
  const auto emb = toy_embedding(tables);
  auto cfg = toy_config();
  cfg.epochs = 3;
  const auto res = train_classifier(tables, emb, LabelMap::from_tables(tables, true), cfg);
  for (const auto& t : tables) {
    const auto p = predict(res.model, emb, t);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double x : p) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

// Relabelling the classes and retraining with the same seed permutes the
// output the same way.
TEST(Classifier, ClassPermutationConsistency) {
  const auto tables = toy_tables(5, 3);
  const auto emb = toy_embedding(tables);
  const auto labels = LabelMap::from_tables(tables, true);
  LabelMap permuted(true);
  const std::vector<std::size_t> order = {2, 0, 1};
  for (auto k : order) permuted.add(labels.entry(k).first, labels.entry(k).second);
  auto cfg = toy_config();
  cfg.epochs = 8;
  const auto a = train_classifier(tables, emb, labels, cfg);
  const auto b = train_classifier(tables, emb, permuted, cfg);
  for (const auto& t : tables) {
    const auto pa = predict(a.model, emb, t);
    const auto pb = predict(b.model, emb, t);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto c = static_cast<std::size_t>(permuted.id(labels.entry(k).first, labels.entry(k).second));
      EXPECT_NEAR(pb[c], pa[k], 1e-12);
    }
  }
}

TEST(Classifier, NumericCellsDoNotAffectPrediction) {
  const auto tables = toy_tables(5);
  const auto emb = toy_embedding(tables);
  auto cfg = toy_config();
  cfg.epochs = 3;
  const auto res = train_classifier(tables, emb, LabelMap::from_tables(tables, true), cfg);
  Rng rng(11);
  for (const auto& t : tables) {
    auto changed = t;
    for (auto& r : changed.rows)
      for (auto& c : r.cells)
        if (c.kind == CellKind::Number) {
          c.value = rng.uniform(-1e6, 1e6);
          c.raw_text = format_fixed(*c.value, 2);
        }
    const auto p1 = predict(res.model, emb, t);
    const auto p2 = predict(res.model, emb, changed);
    EXPECT_EQ(p1, p2);
  }
}

TEST(Classifier, DropsTablesWithoutKnownTokens) {
  auto tables = toy_tables(5);
  const auto emb = toy_embedding(tables);
  tables.push_back(make_table("numbers_only", "Acme", TableType::ProfitOrLoss, {{"1", "2"}, {"3"}}));
  auto cfg = toy_config();
  cfg.epochs = 1;
  const auto res = train_classifier(tables, emb, LabelMap::from_tables(tables, true), cfg);
  EXPECT_EQ(res.dropped, (std::vector<std::string>{"numbers_only"}));
  ASSERT_EQ(res.warnings.size(), 1u);

  const std::vector<ExtractedTable> none = {make_table("a", "X", TableType::CashFlows, {{"zzz"}}),
                                            make_table("b", "X", TableType::CashFlows, {{"qqq"}})};
  EXPECT_THROW(train_classifier(none, emb, LabelMap::from_tables(none, true), cfg), Error);
}

TEST(Classifier, ReusesPersistedSplit) {
  const auto tables = toy_tables(5);
  const auto emb = toy_embedding(tables);
  const auto labels = LabelMap::from_tables(tables, true);
  auto cfg = toy_config();
  cfg.epochs = 2;
  const auto first = train_classifier(tables, emb, labels, cfg);
  const auto reloaded = parse_split(format_split(first.model.split));
  auto other_seed = cfg;
  other_seed.seed = 1234;
  const auto second = train_classifier(tables, emb, labels, other_seed, &reloaded);
  EXPECT_EQ(second.model.split, first.model.split);
}

TEST(ModelFile, RoundTrip) {
  const auto tables = toy_tables(5);
  const auto emb = toy_embedding(tables);
  auto cfg = toy_config();
  cfg.epochs = 2;
  cfg.hidden = 7;
  cfg.include_company = false;
  const auto model = train_classifier(tables, emb, LabelMap::from_tables(tables, false), cfg).model;
  const auto dir = std::filesystem::temp_directory_path() / "tablesage_model_test";
  save_model(model, dir / "m.tsg");
  const auto back = load_model(dir / "m.tsg");
  std::filesystem::remove_all(dir);

  ASSERT_EQ(back.net.size(), model.net.size());
  EXPECT_EQ(std::memcmp(back.net.values().data(), model.net.values().data(), model.net.size() * sizeof(double)), 0);
  EXPECT_EQ(back.net.shape(), model.net.shape());
  EXPECT_EQ(back.labels, model.labels);
  EXPECT_EQ(back.split, model.split);
  EXPECT_EQ(back.embedding, model.embedding);
  EXPECT_EQ(back.seq_len, 40);
  EXPECT_EQ(back.config.hidden, 7);
  EXPECT_FALSE(back.config.include_company);
  EXPECT_EQ(serialize_model(back), serialize_model(model));
}

TEST(ModelFile, Corruption) {
  const auto tables = toy_tables(3);
  const auto emb = toy_embedding(tables);
  auto cfg = toy_config();
  cfg.epochs = 1;
  cfg.hidden = 3;
  const auto bytes = serialize_model(train_classifier(tables, emb, LabelMap::from_tables(tables, true), cfg).model);

  auto expect_error = [](const std::string& b, const std::string& needle) {
    try {
      deserialize_model(b);
      ADD_FAILURE() << "no error for " << needle;
    } catch (const ModelFormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error(bytes.substr(0, bytes.size() - 5), "checksum");
  expect_error(bytes.substr(0, 12), "checksum");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  expect_error(flipped, "checksum");
  auto future = bytes;
  future[4] = 2;
  expect_error(future, "version 2");
  expect_error("GIF89a....", "not a tablesage model");
}

TEST(ModelFile, EmbeddingMismatchRejected) {
  const auto tables = toy_tables(3);
  const auto emb = toy_embedding(tables);
  auto cfg = toy_config();
  cfg.epochs = 1;
  const auto model = train_classifier(tables, emb, LabelMap::from_tables(tables, true), cfg).model;
  auto other = emb;
  other.matrix.data[0] += 1.0f;
  EXPECT_THROW(predict(model, other, tables[0]), Error);
}
