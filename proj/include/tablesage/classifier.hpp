#ifndef TABLESAGE_CLASSIFIER_HPP
#define TABLESAGE_CLASSIFIER_HPP

// Table classifier: token sequences of fixed length, embedded with a frozen
// word embedding and fed through the stacked LSTM. Also the train/test split
// and the model file.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tablesage/corpus.hpp"
#include "tablesage/embedding.hpp"
#include "tablesage/lstm.hpp"
#include "tablesage/tokenize.hpp"

namespace tablesage {

// ---------------------------------------------------------------------------
// Labels

class LabelMap {
public:
  static constexpr std::string_view kDummyCompany = "*";

  explicit LabelMap(bool include_company = true) : include_company_(include_company) {}

  /// Running ids in order of first appearance.
  static LabelMap from_tables(const std::vector<ExtractedTable>& tables, bool include_company) {
    LabelMap m(include_company);
    for (const auto& t : tables) m.add(t.company, t.table_type);
    return m;
  }

  int add(std::string_view company, TableType type) {
    if (auto id = find(company, type)) return *id;
    entries_.emplace_back(key_company(company), type);
    return static_cast<int>(entries_.size()) - 1;
  }

  std::optional<int> find(std::string_view company, TableType type) const {
    const auto c = key_company(company);
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first == c && entries_[i].second == type) return static_cast<int>(i);
    return std::nullopt;
  }

  int id(std::string_view company, TableType type) const {
    if (auto i = find(company, type)) return *i;
    throw Error("no label for (" + std::string(company) + ", " + std::string(to_string(type)) + ")");
  }
  int id(const ExtractedTable& t) const { return id(t.company, t.table_type); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool include_company() const noexcept { return include_company_; }
  const std::pair<std::string, TableType>& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<std::pair<std::string, TableType>>& entries() const noexcept { return entries_; }

  std::string name(std::size_t i) const {
    const auto& [c, t] = entry(i);
    return include_company_ ? c + "/" + std::string(to_string(t)) : std::string(to_string(t));
  }

  bool operator==(const LabelMap&) const = default;

private:
  std::string key_company(std::string_view company) const {
    return include_company_ ? std::string(company) : std::string(kDummyCompany);
  }

  bool include_company_ = true;
  std::vector<std::pair<std::string, TableType>> entries_;
};

// ---------------------------------------------------------------------------
// Sequences

/// In-vocabulary tokens as indices, keeping the first seq_len of them and
/// left-padding shorter sequences with kPadIndex.
inline Sequence encode_sequence(const TokenStream& stream, const Vocabulary& vocab, int seq_len) {
  if (seq_len < 1) throw Error("seq_len must be at least 1");
  const auto n = static_cast<std::size_t>(seq_len);
  Sequence ids;
  for (const auto& t : stream) {
    if (ids.size() == n) break;
    if (auto i = vocab.index(t)) ids.push_back(*i);
  }
  Sequence out(n - ids.size(), kPadIndex);
  out.insert(out.end(), ids.begin(), ids.end());
  return out;
}

/// Embedding as a dim x vocab matrix of doubles.
inline Eigen::MatrixXd embedding_table(const WordEmbedding& e) {
  Eigen::MatrixXd t(e.matrix.dim, static_cast<Eigen::Index>(e.matrix.rows()));
  for (Eigen::Index j = 0; j < t.cols(); ++j) {
    const auto v = e.matrix.vector(static_cast<std::size_t>(j));
    for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = v[static_cast<std::size_t>(i)];
  }
  return t;
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

struct EmbeddingDescriptor {
  EmbeddingSource source = EmbeddingSource::CustomSkipGram;
  int dim = 0;
  std::size_t vocab_size = 0;
  std::uint64_t fingerprint = 0;  // over tokens and vector bytes

  bool operator==(const EmbeddingDescriptor&) const = default;
};

inline EmbeddingDescriptor describe(const WordEmbedding& e) {
  std::uint64_t h = detail::fnv1a("");
  for (const auto& t : e.vocab.tokens()) {
    h = detail::fnv1a(t, h);
    h = detail::fnv1a(std::string_view("\0", 1), h);
  }
  h = detail::fnv1a({reinterpret_cast<const char*>(e.matrix.data.data()), e.matrix.data.size() * sizeof(float)}, h);
  return {e.matrix.source, e.matrix.dim, e.vocab.size(), h};
}

// ---------------------------------------------------------------------------
// Split

struct SplitRecord {
  std::uint64_t seed = 0;
  double fraction = 0.8;
  std::vector<std::string> train;
  std::vector<std::string> test;

  bool operator==(const SplitRecord&) const = default;
};

inline SplitRecord split_train_test(std::vector<std::string> ids, std::uint64_t seed, double fraction = 0.8) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("train fraction must lie strictly between 0 and 1");
  if (ids.size() < 2) throw Error("need at least 2 tables to split");
  Rng rng(seed);
  rng.shuffle(ids);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  if (n_train == 0 || n_train >= ids.size())
    throw Error("degenerate split: " + std::to_string(n_train) + " of " + std::to_string(ids.size()) +
                " tables in the training side");
  SplitRecord s{seed, fraction, {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train)},
                {ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end()}};
  return s;
}

inline std::string format_split(const SplitRecord& s) {
  std::ostringstream os;
  os << "seed " << s.seed << "\nfraction " << format_double(s.fraction) << "\ntrain";
  for (const auto& id : s.train) os << ' ' << id;
  os << "\ntest";
  for (const auto& id : s.test) os << ' ' << id;
  os << '\n';
  return os.str();
}

inline SplitRecord parse_split(std::string_view text) {
  SplitRecord s;
  std::istringstream is{std::string(text)};
  std::string line;
  bool seen_seed = false, seen_fraction = false, seen_train = false, seen_test = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "seed") {
      seen_seed = static_cast<bool>(ls >> s.seed);
    } else if (key == "fraction") {
      seen_fraction = static_cast<bool>(ls >> s.fraction);
    } else if (key == "train" || key == "test") {
      auto& dst = key == "train" ? s.train : s.test;
      for (std::string id; ls >> id;) dst.push_back(id);
      (key == "train" ? seen_train : seen_test) = true;
    } else {
      throw Error("split file: unknown key " + key);
    }
  }
  if (!seen_seed || !seen_fraction || !seen_train || !seen_test) throw Error("split file is incomplete");
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int seq_len = 40;
  int hidden = 64;
  int layers = 4;
  int batch_size = 16;
  AdamConfig adam;
  int epochs = 100;
  int patience = 0;  // epochs without a test-accuracy gain before stopping; 0 disables
  std::uint64_t seed = 42;
  double train_fraction = 0.8;
  bool include_company = true;
};

struct ClassifierModel {
  EmbeddingDescriptor embedding;
  int seq_len = 40;
  NetworkParams net;
  LabelMap labels;
  SplitRecord split;
  TrainConfig config;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double test_accuracy = 0;  // percent
};

struct TrainResult {
  ClassifierModel model;
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
  std::vector<std::string> dropped;
};

inline std::string format_training_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,test_accuracy\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.test_accuracy) + "\n";
  return out;
}

inline double accuracy_percent(const NetworkParams& net, const Eigen::MatrixXd& table,
                               const std::vector<Example>& examples) {
  if (examples.empty()) return 0.0;
  std::vector<Sequence> seqs;
  for (const auto& e : examples) seqs.push_back(e.tokens);
  const auto probs = predict_proba(net, table, seqs);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const auto best = std::max_element(probs[k].begin(), probs[k].end()) - probs[k].begin();
    if (best == examples[k].label) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(examples.size());
}

/// Trains on the tables named by the split (a fresh seeded split when none
/// is given). Tables whose tokens are all out of vocabulary are dropped.
inline TrainResult train_classifier(const std::vector<ExtractedTable>& tables, const WordEmbedding& embedding,
                                    const LabelMap& labels, const TrainConfig& cfg,
                                    const SplitRecord* split = nullptr) {
  if (cfg.seq_len < 1) throw Error("seq_len must be at least 1");
  if (cfg.batch_size < 1 || cfg.epochs < 1) throw Error("batch_size and epochs must be positive");
  if (labels.size() == 0) throw Error("empty label map");
  TrainResult res;

  std::map<std::string, Example> usable;
  std::vector<std::string> ids;
  for (const auto& t : tables) {
    auto seq = encode_sequence(tokenize_table(t), embedding.vocab, cfg.seq_len);
    if (std::all_of(seq.begin(), seq.end(), [](int i) { return i == kPadIndex; })) {
      res.warnings.push_back("dropping table " + t.table_id + ": no in-vocabulary tokens");
      res.dropped.push_back(t.table_id);
      continue;
    }
    usable.emplace(t.table_id, Example{std::move(seq), labels.id(t)});
    ids.push_back(t.table_id);
  }
  if (usable.empty()) throw Error("every table was dropped: none has an in-vocabulary token");

  SplitRecord sp;
  if (split) {
    sp = *split;
    auto keep = [&](std::vector<std::string>& v) {
      std::erase_if(v, [&](const std::string& id) { return !usable.contains(id); });
    };
    for (const auto& id : sp.train)
      if (!usable.contains(id) && std::find(res.dropped.begin(), res.dropped.end(), id) == res.dropped.end())
        throw Error("split names unknown table " + id);
    keep(sp.train);
    keep(sp.test);
    if (sp.train.empty() || sp.test.empty()) throw Error("degenerate split after dropping tables");
  } else {
    sp = split_train_test(ids, cfg.seed, cfg.train_fraction);
  }

  std::vector<Example> train_set, test_set;
  for (const auto& id : sp.train) train_set.push_back(usable.at(id));
  for (const auto& id : sp.test) test_set.push_back(usable.at(id));

  const auto table = embedding_table(embedding);
  NetworkParams net({embedding.matrix.dim, cfg.hidden, cfg.layers, static_cast<int>(labels.size())});
  Rng init_rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
  net.initialize(init_rng);
  // Head rows are drawn per class name, so relabelling classes only permutes them.
  {
    const double r = std::sqrt(6.0 / static_cast<double>(cfg.hidden + static_cast<int>(labels.size())));
    for (std::size_t c = 0; c < labels.size(); ++c) {
      Rng row_rng(cfg.seed ^ detail::fnv1a(labels.name(c)));
      for (int j = 0; j < cfg.hidden; ++j) net.dense_w()(static_cast<Eigen::Index>(c), j) = row_rng.uniform(-r, r);
    }
  }

  Rng batch_rng(cfg.seed ^ 0x14057B7EF767814FULL);
  AdamState state;
  NetworkParams grad;
  std::vector<std::size_t> order(train_set.size());
  double best_acc = -1;
  int best_epoch = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    batch_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Example> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(train_set[order[k]]);
      loss_sum += loss_and_gradient(net, table, batch, grad) * static_cast<double>(batch.size());
      adam_step(net.values(), grad.values(), state, cfg.adam);
    }
    const double acc = accuracy_percent(net, table, test_set);
    res.log.push_back({epoch, loss_sum / static_cast<double>(train_set.size()), acc});
    if (acc > best_acc) {
      best_acc = acc;
      best_epoch = epoch;
    } else if (cfg.patience > 0 && epoch - best_epoch >= cfg.patience) {
      break;
    }
  }

  res.model.embedding = describe(embedding);
  res.model.seq_len = cfg.seq_len;
  res.model.net = std::move(net);
  res.model.labels = labels;
  res.model.split = std::move(sp);
  res.model.config = cfg;
  return res;
}

inline void check_embedding(const ClassifierModel& model, const WordEmbedding& embedding) {
  if (!(describe(embedding) == model.embedding))
    throw Error("embedding does not match the one the classifier was trained with");
}

inline ProbabilityVector predict(const ClassifierModel& model, const WordEmbedding& embedding,
                                 const Eigen::MatrixXd& table, const ExtractedTable& t) {
  const auto seq = encode_sequence(tokenize_table(t), embedding.vocab, model.seq_len);
  return predict_proba(model.net, table, {seq}).front();
}

inline ProbabilityVector predict(const ClassifierModel& model, const WordEmbedding& embedding,
                                 const ExtractedTable& t) {
  check_embedding(model, embedding);
  return predict(model, embedding, embedding_table(embedding), t);
}

// ---------------------------------------------------------------------------
// Model file: "TSG1", u32 version, u64 checksum (FNV-1a of everything after
// it), u64 metadata length, metadata JSON, u64 parameter count, f64 values.
// All integers and floats little-endian.

inline constexpr std::uint32_t kModelVersion = 1;

class ModelFormatError : public Error {
public:
  using Error::Error;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
  if (in.size() - pos < 8) throw ModelFormatError("model file checksum mismatch (file truncated)");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

inline nlohmann::ordered_json model_metadata(const ClassifierModel& m) {
  nlohmann::ordered_json j;
  j["seq_len"] = m.seq_len;
  j["embedding"] = {{"source", to_string(m.embedding.source)},
                    {"dim", m.embedding.dim},
                    {"vocab_size", m.embedding.vocab_size},
                    {"fingerprint", hex64(m.embedding.fingerprint)}};
  const auto& s = m.net.shape();
  j["network"] = {{"input_dim", s.input_dim}, {"hidden", s.hidden}, {"layers", s.layers}, {"classes", s.classes}};
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& [c, t] : m.labels.entries()) entries.push_back({c, to_string(t)});
  j["labels"] = {{"include_company", m.labels.include_company()}, {"entries", entries}};
  j["split"] = {{"seed", m.split.seed}, {"fraction", m.split.fraction}, {"train", m.split.train}, {"test", m.split.test}};
  const auto& c = m.config;
  j["train_config"] = {{"seq_len", c.seq_len},
                       {"hidden", c.hidden},
                       {"layers", c.layers},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.adam.learning_rate},
                       {"beta1", c.adam.beta1},
                       {"beta2", c.adam.beta2},
                       {"epsilon", c.adam.epsilon},
                       {"epochs", c.epochs},
                       {"patience", c.patience},
                       {"seed", c.seed},
                       {"train_fraction", c.train_fraction},
                       {"include_company", c.include_company}};
  return j;
}

}  // namespace detail

inline std::string serialize_model(const ClassifierModel& m) {
  std::string body;
  const auto meta = detail::model_metadata(m).dump();
  detail::put_u64(body, meta.size());
  body += meta;
  detail::put_u64(body, m.net.size());
  for (double v : m.net.values()) detail::put_u64(body, std::bit_cast<std::uint64_t>(v));

  std::string out = "TSG1";
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((kModelVersion >> (8 * i)) & 0xFF));
  detail::put_u64(out, detail::fnv1a(body));
  return out + body;
}

inline ClassifierModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "TSG1") throw ModelFormatError("not a tablesage model file");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  if (version != kModelVersion)
    throw ModelFormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelVersion) + ")");
  std::size_t pos = 8;
  const auto checksum = detail::get_u64(bytes, pos);
  const auto body = bytes.substr(pos);
  if (detail::fnv1a(body) != checksum) throw ModelFormatError("model file checksum mismatch");

  const auto meta_len = detail::get_u64(bytes, pos);
  if (bytes.size() - pos < meta_len) throw ModelFormatError("model file checksum mismatch (file truncated)");
  const auto j = nlohmann::ordered_json::parse(bytes.substr(pos, meta_len));
  pos += meta_len;

  ClassifierModel m;
  m.seq_len = j.at("seq_len").get<int>();
  const auto& je = j.at("embedding");
  m.embedding.source = je.at("source").get<std::string>() == "custom" ? EmbeddingSource::CustomSkipGram
                                                                      : EmbeddingSource::PretrainedFile;
  m.embedding.dim = je.at("dim").get<int>();
  m.embedding.vocab_size = je.at("vocab_size").get<std::size_t>();
  m.embedding.fingerprint = std::stoull(je.at("fingerprint").get<std::string>(), nullptr, 16);
  const auto& jn = j.at("network");
  m.net = NetworkParams({jn.at("input_dim").get<int>(), jn.at("hidden").get<int>(), jn.at("layers").get<int>(),
                         jn.at("classes").get<int>()});
  const auto& jl = j.at("labels");
  m.labels = LabelMap(jl.at("include_company").get<bool>());
  for (const auto& e : jl.at("entries")) {
    const auto before = m.labels.size();
    const auto company = e.at(0).get<std::string>();
    const auto type = parse_table_type(e.at(1).get<std::string>());
    if (m.labels.add(company, type) != static_cast<int>(before)) throw ModelFormatError("duplicate label entry");
  }
  const auto& js = j.at("split");
  m.split.seed = js.at("seed").get<std::uint64_t>();
  m.split.fraction = js.at("fraction").get<double>();
  m.split.train = js.at("train").get<std::vector<std::string>>();
  m.split.test = js.at("test").get<std::vector<std::string>>();
  const auto& jc = j.at("train_config");
  auto& c = m.config;
  c.seq_len = jc.at("seq_len").get<int>();
  c.hidden = jc.at("hidden").get<int>();
  c.layers = jc.at("layers").get<int>();
  c.batch_size = jc.at("batch_size").get<int>();
  c.adam = {jc.at("learning_rate").get<double>(), jc.at("beta1").get<double>(), jc.at("beta2").get<double>(),
            jc.at("epsilon").get<double>()};
  c.epochs = jc.at("epochs").get<int>();
  c.patience = jc.at("patience").get<int>();
  c.seed = jc.at("seed").get<std::uint64_t>();
  c.train_fraction = jc.at("train_fraction").get<double>();
  c.include_company = jc.at("include_company").get<bool>();

  const auto count = detail::get_u64(bytes, pos);
  if (count != m.net.size()) throw ModelFormatError("parameter count does not match the network shape");
  if (static_cast<std::uint64_t>(m.labels.size()) != static_cast<std::uint64_t>(jn.at("classes").get<int>()))
    throw ModelFormatError("label map size does not match the class count");
  auto values = m.net.values();
  for (std::size_t k = 0; k < count; ++k) values[k] = std::bit_cast<double>(detail::get_u64(bytes, pos));
  if (pos != bytes.size()) throw ModelFormatError("trailing bytes after model parameters");
  return m;
}

inline void save_model(const ClassifierModel& m, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(m));
}

inline ClassifierModel load_model(const std::filesystem::path& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace tablesage

#endif  // TABLESAGE_CLASSIFIER_HPP
