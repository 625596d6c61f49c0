#ifndef TABLESAGE_PIPELINE_HPP
#define TABLESAGE_PIPELINE_HPP

// Config file, artifact layout and the pipeline stages driven by the CLI.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tablesage/classifier.hpp"
#include "tablesage/corpus.hpp"
#include "tablesage/embedding.hpp"
#include "tablesage/eval.hpp"
#include "tablesage/queryfilter.hpp"
#include "tablesage/similarity.hpp"
#include "tablesage/synth.hpp"

namespace tablesage {

namespace fs = std::filesystem;

class ConfigError : public Error {
public:
  using Error::Error;
};

/// A stage was run before one it depends on.
class StageError : public Error {
public:
  StageError(const std::string& missing, const std::string& stage)
      : Error("missing " + missing + ": run `tablesage " + stage + "` first"), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

struct PipelineConfig {
  fs::path out = "tablesage_out";
  std::uint64_t seed = 42;
  fs::path manifest;      // default <out>/synth/manifest.csv
  fs::path ground_truth;  // default <out>/synth/ground_truth.txt
  fs::path pretrained_embedding;
  fs::path split;  // reuse a persisted split file instead of drawing one
  SyntheticCorpusConfig synth = default_synthetic_config();
  SkipGramConfig embedding;
  TrainConfig classifier;
  std::size_t table_k = 5;
  std::size_t row_n = 5;
  TsneConfig tsne;
  std::string addr = "127.0.0.1:8080";

  /// The one seed drives every stage.
  void set_seed(std::uint64_t s) {
    seed = s;
    synth.seed = embedding.seed = classifier.seed = tsne.seed = s;
  }
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void only_keys(const nlohmann::json& j, std::initializer_list<std::string_view> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown config key " + where + k);
}

}  // namespace detail

inline PipelineConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  try {
    detail::only_keys(j,
                      {"out", "seed", "manifest", "ground_truth", "pretrained_embedding", "split", "synth",
                       "embedding", "classifier", "index", "rowsim", "tsne", "service"},
                      "");
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
    if (j.contains("ground_truth")) c.ground_truth = j["ground_truth"].get<std::string>();
    if (j.contains("pretrained_embedding")) c.pretrained_embedding = j["pretrained_embedding"].get<std::string>();
    if (j.contains("split")) c.split = j["split"].get<std::string>();
    c.set_seed(j.value("seed", c.seed));
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      detail::only_keys(s, {"replicates", "preferred_variant_probability", "row_keep_probability"}, "synth.");
      detail::take(s, "replicates", c.synth.replicates);
      detail::take(s, "preferred_variant_probability", c.synth.preferred_variant_probability);
      detail::take(s, "row_keep_probability", c.synth.row_keep_probability);
    }
    if (j.contains("embedding")) {
      const auto& e = j["embedding"];
      detail::only_keys(e, {"dim", "window", "negative_samples", "epochs", "learning_rate", "min_count"}, "embedding.");
      detail::take(e, "dim", c.embedding.dim);
      detail::take(e, "window", c.embedding.window);
      detail::take(e, "negative_samples", c.embedding.negative_samples);
      detail::take(e, "epochs", c.embedding.epochs);
      detail::take(e, "learning_rate", c.embedding.learning_rate);
      detail::take(e, "min_count", c.embedding.min_count);
    }
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      detail::only_keys(k,
                        {"seq_len", "hidden", "layers", "batch_size", "learning_rate", "beta1", "beta2", "epsilon",
                         "epochs", "patience", "train_fraction", "include_company"},
                        "classifier.");
      detail::take(k, "seq_len", c.classifier.seq_len);
      detail::take(k, "hidden", c.classifier.hidden);
      detail::take(k, "layers", c.classifier.layers);
      detail::take(k, "batch_size", c.classifier.batch_size);
      detail::take(k, "learning_rate", c.classifier.adam.learning_rate);
      detail::take(k, "beta1", c.classifier.adam.beta1);
      detail::take(k, "beta2", c.classifier.adam.beta2);
      detail::take(k, "epsilon", c.classifier.adam.epsilon);
      detail::take(k, "epochs", c.classifier.epochs);
      detail::take(k, "patience", c.classifier.patience);
      detail::take(k, "train_fraction", c.classifier.train_fraction);
      detail::take(k, "include_company", c.classifier.include_company);
    }
    if (j.contains("index")) {
      detail::only_keys(j["index"], {"k"}, "index.");
      detail::take(j["index"], "k", c.table_k);
    }
    if (j.contains("rowsim")) {
      detail::only_keys(j["rowsim"], {"n"}, "rowsim.");
      detail::take(j["rowsim"], "n", c.row_n);
    }
    if (j.contains("tsne")) {
      const auto& t = j["tsne"];
      detail::only_keys(t, {"perplexity", "iterations", "learning_rate"}, "tsne.");
      detail::take(t, "perplexity", c.tsne.perplexity);
      detail::take(t, "iterations", c.tsne.iterations);
      detail::take(t, "learning_rate", c.tsne.learning_rate);
    }
    if (j.contains("service")) {
      detail::only_keys(j["service"], {"addr"}, "service.");
      detail::take(j["service"], "addr", c.addr);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (c.table_k == 0 || c.row_n == 0) throw ConfigError("index.k and rowsim.n must be positive");
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " not found");
  return parse_config(detail::read_file(path));
}

/// Every file a run reads or writes, relative to the output directory.
struct ArtifactPaths {
  fs::path out;
  explicit ArtifactPaths(fs::path dir) : out(std::move(dir)) {}

  fs::path synth_dir() const { return out / "synth"; }
  fs::path synth_manifest() const { return synth_dir() / "manifest.csv"; }
  fs::path synth_ground_truth() const { return synth_dir() / "ground_truth.txt"; }
  fs::path corpus() const { return out / "corpus.json"; }
  fs::path embedding() const { return out / "embedding.bin"; }
  fs::path embedding_log() const { return out / "embedding_log.csv"; }
  fs::path model() const { return out / "model.tsg"; }
  fs::path split() const { return out / "split.txt"; }
  fs::path training_log() const { return out / "training_log.csv"; }
  fs::path index() const { return out / "index.csv"; }
  fs::path classification_report() const { return out / "classification_report.csv"; }
  fs::path rowsim_report() const { return out / "rowsim_report.csv"; }
  fs::path projection() const { return out / "projection.csv"; }
};

// ---------------------------------------------------------------------------
// Index file: "table_id,p0,p1,..." with shortest round-trip decimals.

inline std::string format_index(const TableIndex& idx) {
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out += detail::csv_field(idx.id(i));
    for (double p : idx.vector(i)) out += "," + format_double(p);
    out += "\n";
  }
  return out;
}

inline TableIndex parse_index(std::string_view text) {
  TableIndex idx;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < 2) throw Error("index line without probabilities");
    ProbabilityVector v;
    for (std::size_t i = 1; i < f.size(); ++i) v.push_back(std::stod(f[i]));
    idx.add(f[0], std::move(v));
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Artifact loaders; each names the stage that produces what is missing.

inline Corpus load_corpus_artifact(const ArtifactPaths& p) {
  if (!fs::exists(p.corpus())) throw StageError(p.corpus().filename().string(), "ingest");
  return deserialize_corpus(detail::read_file(p.corpus()));
}

inline WordEmbedding load_embedding_artifact(const ArtifactPaths& p) {
  if (!fs::exists(p.embedding())) throw StageError(p.embedding().filename().string(), "train-embedding");
  return load_pretrained(p.embedding(), EmbeddingSource::CustomSkipGram);
}

inline ClassifierModel load_model_artifact(const ArtifactPaths& p) {
  if (!fs::exists(p.model())) throw StageError(p.model().filename().string(), "train-classifier");
  return load_model(p.model());
}

inline TableIndex load_index_artifact(const ArtifactPaths& p) {
  if (!fs::exists(p.index())) throw StageError(p.index().filename().string(), "build-index");
  return parse_index(detail::read_file(p.index()));
}

// ---------------------------------------------------------------------------
// Stages

inline SyntheticCorpus run_synth(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  auto sc = generate_synthetic_corpus(cfg.synth);
  fs::remove_all(p.synth_dir());
  write_synthetic_corpus(sc, p.synth_dir());
  return sc;
}

inline Corpus run_ingest(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto manifest = cfg.manifest.empty() ? p.synth_manifest() : cfg.manifest;
  if (!fs::exists(manifest)) {
    if (cfg.manifest.empty()) throw StageError(manifest.string(), "synth");
    throw Error("manifest " + manifest.string() + " not found");
  }
  auto corpus = load_corpus(manifest);
  fs::create_directories(p.out);
  detail::write_file(p.corpus(), serialize_corpus(corpus));
  return corpus;
}

inline SkipGramResult run_train_embedding(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto corpus = load_corpus_artifact(p);
  std::vector<TokenStream> streams;
  for (const auto& t : corpus.tables) streams.push_back(tokenize_table(t));
  auto res = train_skipgram(streams, cfg.embedding);
  save_word2vec_binary(p.embedding(), res.embedding);
  std::string log = "epoch,loss\n";
  for (std::size_t i = 0; i < res.epoch_loss.size(); ++i)
    log += std::to_string(i + 1) + "," + format_double(res.epoch_loss[i]) + "\n";
  detail::write_file(p.embedding_log(), log);
  return res;
}

inline TrainResult run_train_classifier(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto corpus = load_corpus_artifact(p);
  const auto emb = load_embedding_artifact(p);
  const auto labels = LabelMap::from_tables(corpus.tables, cfg.classifier.include_company);
  std::optional<SplitRecord> split;
  if (!cfg.split.empty()) {
    if (!fs::exists(cfg.split)) throw Error("split file " + cfg.split.string() + " not found");
    split = parse_split(detail::read_file(cfg.split));
  }
  auto res = train_classifier(corpus.tables, emb, labels, cfg.classifier, split ? &*split : nullptr);
  save_model(res.model, p.model());
  detail::write_file(p.split(), format_split(res.model.split));
  detail::write_file(p.training_log(), format_training_log(res.log));
  return res;
}

inline TableIndex build_table_index(const Corpus& corpus, const WordEmbedding& emb, const ClassifierModel& model) {
  check_embedding(model, emb);
  const auto table = embedding_table(emb);
  TableIndex idx;
  for (const auto& t : corpus.tables) idx.add(t.table_id, predict(model, emb, table, t));
  return idx;
}

inline TableIndex run_build_index(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto corpus = load_corpus_artifact(p);
  const auto emb = load_embedding_artifact(p);
  const auto model = load_model_artifact(p);
  auto idx = build_table_index(corpus, emb, model);
  detail::write_file(p.index(), format_index(idx));
  return idx;
}

struct EvalOutcome {
  EvalReport classification;
  double knn_accuracy = 0;  // leave-one-out over the whole corpus, percent
  std::vector<HitRateReport> rowsim;
  std::vector<std::string> notes;
};

inline std::string format_knn_line(double acc, std::size_t k) {
  return "# knn k=" + std::to_string(k) + " leave_one_out_accuracy=" + format_fixed(acc, 4) + "\n";
}

inline EvalOutcome run_eval(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto corpus = load_corpus_artifact(p);
  const auto emb = load_embedding_artifact(p);
  const auto model = load_model_artifact(p);
  const auto idx = load_index_artifact(p);
  const auto gt_path = cfg.ground_truth.empty() ? p.synth_ground_truth() : cfg.ground_truth;
  if (!fs::exists(gt_path)) {
    if (cfg.ground_truth.empty()) throw StageError(gt_path.string(), "synth");
    throw Error("ground truth " + gt_path.string() + " not found");
  }
  const auto gt = parse_ground_truth(detail::read_file(gt_path));
  validate_ground_truth(gt, corpus);

  EvalOutcome o;
  std::map<std::string, int> truth;
  for (const auto& t : corpus.tables) truth[t.table_id] = model.labels.id(t);
  std::vector<int> pred, actual;
  for (const auto& id : model.split.test) {
    if (!idx.contains(id)) throw Error("test table " + id + " is not in the index");
    const auto& v = idx.vector(id);
    pred.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
    actual.push_back(truth.at(id));
  }
  o.classification = compute_metrics(pred, actual);
  o.knn_accuracy = knn_class_accuracy(idx, truth, cfg.table_k);

  o.rowsim.push_back(evaluate_rowsim(RowSimMethod::CustomEmbedding, corpus, idx, &emb, gt, cfg.row_n, cfg.table_k));
  if (!cfg.pretrained_embedding.empty()) {
    const auto pre = load_pretrained(cfg.pretrained_embedding);
    o.rowsim.push_back(
        evaluate_rowsim(RowSimMethod::PretrainedEmbedding, corpus, idx, &pre, gt, cfg.row_n, cfg.table_k));
  } else {
    o.notes.push_back("pretrained_embedding not configured; method skipped");
  }
  o.rowsim.push_back(evaluate_rowsim(RowSimMethod::Trigram, corpus, idx, nullptr, gt, cfg.row_n, cfg.table_k));

  std::vector<std::string> names;
  for (std::size_t i = 0; i < model.labels.size(); ++i) names.push_back(model.labels.name(i));
  detail::write_file(p.classification_report(), format_classification_report(o.classification, names) +
                                                    format_knn_line(o.knn_accuracy, cfg.table_k));
  std::string rs = format_rowsim_report(o.rowsim);
  for (const auto& n : o.notes) rs += "# note " + n + "\n";
  detail::write_file(p.rowsim_report(), rs);
  return o;
}

/// t-SNE of the index vectors in corpus order, labelled by model label id.
inline std::vector<ProjectionPoint> project_index(const Corpus& corpus, const TableIndex& idx,
                                                  const ClassifierModel& model, const TsneConfig& cfg) {
  std::vector<std::vector<double>> X;
  for (const auto& t : corpus.tables) X.push_back(idx.vector(t.table_id));
  const auto res = tsne(X, cfg);
  std::vector<ProjectionPoint> pts;
  for (std::size_t i = 0; i < corpus.tables.size(); ++i) {
    const auto& t = corpus.tables[i];
    pts.push_back({t.table_id, res.points[i][0], res.points[i][1], model.labels.id(t)});
  }
  return pts;
}

inline std::vector<ProjectionPoint> run_project(const PipelineConfig& cfg) {
  const ArtifactPaths p(cfg.out);
  const auto corpus = load_corpus_artifact(p);
  const auto model = load_model_artifact(p);
  const auto idx = load_index_artifact(p);
  auto pts = project_index(corpus, idx, model, cfg.tsne);
  detail::write_file(p.projection(), format_projection(pts));
  return pts;
}

}  // namespace tablesage

#endif  // TABLESAGE_PIPELINE_HPP
