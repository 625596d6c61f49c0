#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <regex>

#include "small_pipeline.hpp"
#include "tablesage/pipeline.hpp"

using namespace tablesage;
using namespace tablesage::testing;

namespace {

std::string stage_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const StageError& e) {
    return e.stage();
  }
  return "";
}

struct Command {
  int status;
  std::string out;
};

// stdout and stderr together
Command run_cli(const std::string& args) {
  const std::string cmd = std::string(TABLESAGE_BIN) + " " + args + " 2>&1";
  Command c{0, ""};
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (auto n = fread(buf.data(), 1, buf.size(), p)) c.out.append(buf.data(), n);
  const int raw = pclose(p);
  c.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return c;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto d = parse_config("{}");
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.classifier.seq_len, 40);
  EXPECT_EQ(d.classifier.hidden, 64);
  EXPECT_EQ(d.classifier.batch_size, 16);
  EXPECT_EQ(d.classifier.epochs, 100);
  EXPECT_DOUBLE_EQ(d.classifier.adam.learning_rate, 0.001);
  EXPECT_EQ(d.embedding.window, 5);
  EXPECT_EQ(d.table_k, 5u);
  EXPECT_EQ(d.row_n, 5u);
  EXPECT_DOUBLE_EQ(d.tsne.perplexity, 20);
  EXPECT_EQ(d.synth.replicates, 4);

  const auto c = parse_config(R"({"seed": 9, "out": "x", "classifier": {"hidden": 8, "include_company": false},
                                  "index": {"k": 3}, "service": {"addr": "0.0.0.0:9000"}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.synth.seed, 9u);
  EXPECT_EQ(c.embedding.seed, 9u);
  EXPECT_EQ(c.classifier.seed, 9u);
  EXPECT_EQ(c.tsne.seed, 9u);
  EXPECT_EQ(c.out, "x");
  EXPECT_EQ(c.classifier.hidden, 8);
  EXPECT_FALSE(c.classifier.include_company);
  EXPECT_EQ(c.table_k, 3u);
  EXPECT_EQ(c.addr, "0.0.0.0:9000");
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("{"), ConfigError);
  EXPECT_THROW(parse_config(R"({"sed": 1})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"classifier": {"hiden": 3}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seed": "abc"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"index": {"k": 0}})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/tablesage.json"), ConfigError);
}

TEST(IndexFile, RoundTripIsExact) {
  TableIndex idx;
  idx.add("T1", {0.1, 0.2, 0.7});
  idx.add("T,2", {1.0 / 3.0, 2.0 / 3.0, 1e-17});
  const auto back = parse_index(format_index(idx));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.id(1), "T,2");
  EXPECT_EQ(back.vector(0), idx.vector(0));
  EXPECT_EQ(back.vector(1), idx.vector(1));
}

TEST(Stages, MissingPrerequisitesNameTheStage) {
  const auto cfg = small_config(fresh_dir("stages"));
  EXPECT_EQ(stage_of([&] { run_ingest(cfg); }), "synth");
  EXPECT_EQ(stage_of([&] { run_train_embedding(cfg); }), "ingest");
  run_synth(cfg);
  run_ingest(cfg);
  EXPECT_EQ(stage_of([&] { run_train_classifier(cfg); }), "train-embedding");
  run_train_embedding(cfg);
  EXPECT_EQ(stage_of([&] { run_build_index(cfg); }), "train-classifier");
  run_train_classifier(cfg);
  EXPECT_EQ(stage_of([&] { run_eval(cfg); }), "build-index");
  EXPECT_EQ(stage_of([&] { run_project(cfg); }), "build-index");
  run_build_index(cfg);
  EXPECT_NO_THROW(run_eval(cfg));
  EXPECT_NO_THROW(run_project(cfg));
  try {
    run_ingest(small_config(fresh_dir("stages_msg")));
    FAIL();
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("tablesage synth"), std::string::npos);
  }
}

TEST(Stages, ExternalManifestMustExist) {
  auto cfg = small_config(fresh_dir("manifest"));
  cfg.manifest = "/nonexistent/manifest.csv";
  EXPECT_THROW(run_ingest(cfg), Error);
}

TEST(Pipeline, SmallRunIsDeterministic) {
  const auto a = small_config(fresh_dir("det_a"));
  const auto b = small_config(fresh_dir("det_b"));
  run_all_stages(a);
  run_all_stages(b);
  const ArtifactPaths pa(a.out), pb(b.out);
  for (auto f : {&ArtifactPaths::corpus, &ArtifactPaths::embedding, &ArtifactPaths::model, &ArtifactPaths::split,
                 &ArtifactPaths::training_log, &ArtifactPaths::index, &ArtifactPaths::classification_report,
                 &ArtifactPaths::rowsim_report, &ArtifactPaths::projection})
    EXPECT_EQ(detail::read_file((pa.*f)()), detail::read_file((pb.*f)())) << (pa.*f)();
}

TEST(Pipeline, ReportsHaveEveryTable) {
  const auto cfg = small_config(fresh_dir("reports"));
  run_synth(cfg);
  run_ingest(cfg);
  run_train_embedding(cfg);
  run_train_classifier(cfg);
  run_build_index(cfg);
  const auto o = run_eval(cfg);
  run_project(cfg);
  ASSERT_EQ(o.rowsim.size(), 2u);  // no pretrained embedding configured
  EXPECT_EQ(o.rowsim[0].method, RowSimMethod::CustomEmbedding);
  EXPECT_EQ(o.rowsim[1].method, RowSimMethod::Trigram);
  EXPECT_EQ(o.rowsim[0].tables.size(), 40u);
  EXPECT_EQ(o.notes.size(), 1u);
  const ArtifactPaths p(cfg.out);
  const auto rs = detail::read_file(p.rowsim_report());
  EXPECT_NE(rs.find("# summary method=custom_embedding"), std::string::npos);
  EXPECT_NE(rs.find("# summary method=trigram"), std::string::npos);
  EXPECT_NE(rs.find("# note pretrained_embedding"), std::string::npos);
  const auto cr = detail::read_file(p.classification_report());
  EXPECT_NE(cr.find("# knn k=5"), std::string::npos);
  const auto model = load_model_artifact(p);
  EXPECT_EQ(o.classification.labels.empty(), false);
  std::size_t test_count = 0;
  for (const auto& l : o.classification.labels) test_count += l.support();
  EXPECT_EQ(test_count, model.split.test.size());
  const auto pts = parse_projection(detail::read_file(p.projection()));
  EXPECT_EQ(pts.size(), 40u);
}

TEST(Pipeline, PretrainedEmbeddingIsEvaluatedWhenConfigured) {
  auto cfg = small_config(fresh_dir("pretrained"));
  run_synth(cfg);
  run_ingest(cfg);
  run_train_embedding(cfg);
  run_train_classifier(cfg);
  run_build_index(cfg);
  // any word2vec file works; reuse the custom vectors in text form
  const ArtifactPaths p(cfg.out);
  const auto emb = load_embedding_artifact(p);
  std::ostringstream os;
  write_word2vec_text(os, emb);
  detail::write_file(cfg.out / "vectors.txt", os.str());
  cfg.pretrained_embedding = cfg.out / "vectors.txt";
  const auto o = run_eval(cfg);
  ASSERT_EQ(o.rowsim.size(), 3u);
  EXPECT_EQ(o.rowsim[1].method, RowSimMethod::PretrainedEmbedding);
  EXPECT_DOUBLE_EQ(o.rowsim[1].average, o.rowsim[0].average);
  EXPECT_TRUE(o.notes.empty());
}

TEST(Pipeline, PersistedSplitIsReused) {
  auto a = small_config(fresh_dir("split_a"));
  run_synth(a);
  run_ingest(a);
  run_train_embedding(a);
  const auto first = run_train_classifier(a).model.split;
  auto b = a;
  b.set_seed(8);  // a different seed would draw a different split
  b.split = ArtifactPaths(a.out).split();
  const auto second = run_train_classifier(b).model.split;
  EXPECT_EQ(first, second);
}

// ---------------------------------------------------------------------------
// Command line

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = fresh_dir("cli");
    std::filesystem::create_directories(dir_);
    detail::write_file(dir_ / "config.json", kSmallConfigJson);
  }
  static std::string flags() { return "--config " + (dir_ / "config.json").string() + " --out " + (dir_ / "out").string(); }
  static std::filesystem::path dir_;
};
std::filesystem::path Cli::dir_;

TEST_F(Cli, FullPipelineAndQueries) {
  for (const char* verb : {"synth", "ingest", "train-embedding", "train-classifier", "build-index", "eval", "project"}) {
    const auto r = run_cli(std::string(verb) + " " + flags());
    EXPECT_EQ(r.status, 0) << verb << ": " << r.out;
  }
  const auto q = run_cli("query table T01 " + flags());
  ASSERT_EQ(q.status, 0) << q.out;
  const std::regex hit(R"re("table_id":"(T\d+)","distance":(\d+\.\d{6})\})re");
  std::vector<double> d;
  for (std::sregex_iterator it(q.out.begin(), q.out.end(), hit), end; it != end; ++it)
    d.push_back(std::stod((*it)[2]));
  ASSERT_EQ(d.size(), 5u) << q.out;
  EXPECT_TRUE(std::is_sorted(d.begin(), d.end()));

  const auto row = run_cli("query row T01 4 -n 3 " + flags());
  EXPECT_EQ(row.status, 0) << row.out;
  EXPECT_NE(row.out.find("\"n\":3"), std::string::npos);

  const auto f = run_cli("filter T01 \"gt 1000000 and lt 1000001\" " + flags());
  EXPECT_EQ(f.status, 0) << f.out;
  EXPECT_NE(f.out.find("\"matched_rows\":[]"), std::string::npos) << f.out;

  const auto bad = run_cli("filter T01 \"lt abc\" " + flags());
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.out.find("\"position\":4"), std::string::npos) << bad.out;

  const auto unknown = run_cli("query table NOPE " + flags());
  EXPECT_NE(unknown.status, 0);
}

TEST_F(Cli, Errors) {
  EXPECT_NE(run_cli("frobnicate").status, 0);
  EXPECT_NE(run_cli("").status, 0);
  const auto empty = (dir_ / "empty").string();
  const auto r = run_cli("train-classifier --out " + empty);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("tablesage ingest"), std::string::npos) << r.out;
  const auto q = run_cli("query table T01 --out " + empty);
  EXPECT_NE(q.status, 0);
  EXPECT_NE(q.out.find("tablesage ingest"), std::string::npos) << q.out;
  EXPECT_NE(run_cli("synth --config /nonexistent.json").status, 0);
}

TEST_F(Cli, EveryVerbAcceptsCommonFlags) {
  for (const char* verb : {"synth", "ingest", "train-embedding", "train-classifier", "build-index", "eval", "project",
                           "query table", "query row", "filter", "serve"}) {
    const auto r = run_cli(std::string(verb) + " --help");
    EXPECT_EQ(r.status, 0) << verb;
    for (const char* flag : {"--seed", "--config", "--out"}) EXPECT_NE(r.out.find(flag), std::string::npos) << verb << flag;
  }
}
