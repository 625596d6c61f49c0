#ifndef TABLESAGE_EMBEDDING_HPP
#define TABLESAGE_EMBEDDING_HPP

// Word embeddings: skip-gram with negative sampling trained from scratch, and
// reading/writing the word2vec text and binary formats.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tablesage/random.hpp"
#include "tablesage/tokenize.hpp"

namespace tablesage {

enum class EmbeddingSource { CustomSkipGram, PretrainedFile };

inline std::string_view to_string(EmbeddingSource s) {
  return s == EmbeddingSource::CustomSkipGram ? "custom" : "pretrained";
}

struct EmbeddingMatrix {
  int dim = 0;
  EmbeddingSource source = EmbeddingSource::CustomSkipGram;
  std::vector<float> data;  // row-major, one row per vocabulary index

  std::size_t rows() const { return dim > 0 ? data.size() / static_cast<std::size_t>(dim) : 0; }
  std::span<const float> vector(std::size_t i) const {
    return {data.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

struct WordEmbedding {
  Vocabulary vocab;
  EmbeddingMatrix matrix;

  std::optional<std::span<const float>> lookup(std::string_view token) const {
    const auto i = vocab.index(token);
    if (!i) return std::nullopt;
    return matrix.vector(static_cast<std::size_t>(*i));
  }
};

struct SkipGramConfig {
  int dim = 100;
  int window = 5;
  int negative_samples = 5;
  int epochs = 15;
  double learning_rate = 0.025;
  std::uint64_t min_count = 1;
  std::uint64_t seed = 42;
};

struct SkipGramResult {
  WordEmbedding embedding;
  std::vector<double> epoch_loss;  // mean pair loss seen during each epoch
};

// ---------------------------------------------------------------------------
// Negative-sampling objective for one (center, context) pair:
//   L = -log s(u_o . v_c) - sum_k log s(-u_k . v_c)

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sgns_loss(std::span<const double> center, std::span<const double> context,
                        const std::vector<std::span<const double>>& negatives) {
  double loss = -log_sigmoid(dot(context, center));
  for (const auto& u : negatives) loss -= log_sigmoid(-dot(u, center));
  return loss;
}

/// Gradients of sgns_loss with respect to every input vector. Output spans
/// are overwritten.
inline void sgns_gradient(std::span<const double> center, std::span<const double> context,
                          const std::vector<std::span<const double>>& negatives,
                          std::span<double> grad_center, std::span<double> grad_context,
                          const std::vector<std::span<double>>& grad_negatives) {
  const double gpos = sigmoid(dot(context, center)) - 1.0;
  for (std::size_t d = 0; d < center.size(); ++d) {
    grad_center[d] = gpos * context[d];
    grad_context[d] = gpos * center[d];
  }
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    const double gneg = sigmoid(dot(negatives[k], center));
    for (std::size_t d = 0; d < center.size(); ++d) {
      grad_center[d] += gneg * negatives[k][d];
      grad_negatives[k][d] = gneg * center[d];
    }
  }
}

namespace detail {

class UnigramSampler {
public:
  explicit UnigramSampler(const std::vector<std::uint64_t>& counts) {
    double acc = 0;
    cumulative_.reserve(counts.size());
    for (auto c : counts) {
      acc += std::pow(static_cast<double>(std::max<std::uint64_t>(c, 1)), 0.75);
      cumulative_.push_back(acc);
    }
  }
  int sample(Rng& rng) const {
    const double x = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                     static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
  }

private:
  std::vector<double> cumulative_;
};

}  // namespace detail

/// Trains skip-gram with negative sampling. Each stream is one sentence.
/// Deterministic for a given seed; the returned matrix holds the input-side
/// vectors.
inline SkipGramResult train_skipgram(const std::vector<TokenStream>& streams, const SkipGramConfig& cfg) {
  if (cfg.dim < 1 || cfg.window < 1 || cfg.negative_samples < 1 || cfg.epochs < 0)
    throw Error("invalid skip-gram configuration");
  Vocabulary vocab = build_vocab(streams, cfg.min_count);
  const auto V = vocab.size();
  const auto D = static_cast<std::size_t>(cfg.dim);

  std::vector<std::vector<int>> sentences;
  std::size_t total_words = 0;
  for (const auto& s : streams) {
    std::vector<int> ids;
    for (const auto& t : s)
      if (auto i = vocab.index(t)) ids.push_back(*i);
    total_words += ids.size();
    sentences.push_back(std::move(ids));
  }

  Rng rng(cfg.seed);
  std::vector<double> in(V * D), out(V * D, 0.0);
  for (auto& x : in) x = rng.uniform(-0.5, 0.5) / static_cast<double>(D);

  const detail::UnigramSampler sampler(vocab.counts());
  const double planned = static_cast<double>(total_words) * cfg.epochs + 1.0;
  double processed = 0;

  std::vector<double> g_center(D), g_context(D);
  std::vector<std::vector<double>> g_neg(static_cast<std::size_t>(cfg.negative_samples), std::vector<double>(D));
  std::vector<int> neg_ids;

  SkipGramResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    std::size_t pairs = 0;
    for (const auto& sent : sentences) {
      const auto n = static_cast<int>(sent.size());
      for (int i = 0; i < n; ++i) {
        const double lr = cfg.learning_rate * std::max(1e-4, 1.0 - processed / planned);
        processed += 1;
        const auto c = static_cast<std::size_t>(sent[static_cast<std::size_t>(i)]);
        for (int j = std::max(0, i - cfg.window); j <= std::min(n - 1, i + cfg.window); ++j) {
          if (j == i) continue;
          const auto o = static_cast<std::size_t>(sent[static_cast<std::size_t>(j)]);
          neg_ids.clear();
          for (int k = 0; k < cfg.negative_samples; ++k) {
            const int s = sampler.sample(rng);
            if (static_cast<std::size_t>(s) != o) neg_ids.push_back(s);
          }
          std::span<double> vc(in.data() + c * D, D), uo(out.data() + o * D, D);
          std::vector<std::span<const double>> negs;
          std::vector<std::span<double>> gnegs;
          for (std::size_t k = 0; k < neg_ids.size(); ++k) {
            negs.emplace_back(out.data() + static_cast<std::size_t>(neg_ids[k]) * D, D);
            gnegs.emplace_back(g_neg[k]);
          }
          loss_sum += sgns_loss(vc, uo, negs);
          ++pairs;
          sgns_gradient(vc, uo, negs, g_center, g_context, gnegs);
          for (std::size_t d = 0; d < D; ++d) uo[d] -= lr * g_context[d];
          for (std::size_t k = 0; k < neg_ids.size(); ++k) {
            double* u = out.data() + static_cast<std::size_t>(neg_ids[k]) * D;
            for (std::size_t d = 0; d < D; ++d) u[d] -= lr * g_neg[k][d];
          }
          for (std::size_t d = 0; d < D; ++d) vc[d] -= lr * g_center[d];
        }
      }
    }
    result.epoch_loss.push_back(pairs ? loss_sum / static_cast<double>(pairs) : 0.0);
  }

  result.embedding.vocab = std::move(vocab);
  result.embedding.matrix.dim = cfg.dim;
  result.embedding.matrix.source = EmbeddingSource::CustomSkipGram;
  result.embedding.matrix.data.assign(in.begin(), in.end());
  return result;
}

// ---------------------------------------------------------------------------
// word2vec file formats

inline void write_word2vec_binary(std::ostream& os, const WordEmbedding& e) {
  os << e.vocab.size() << ' ' << e.matrix.dim << '\n';
  for (std::size_t i = 0; i < e.vocab.size(); ++i) {
    os << e.vocab.token(i) << ' ';
    for (float f : e.matrix.vector(i)) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                   static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
      os.write(b, 4);
    }
  }
}

inline void write_word2vec_text(std::ostream& os, const WordEmbedding& e) {
  os << e.vocab.size() << ' ' << e.matrix.dim << '\n';
  char buf[32];
  for (std::size_t i = 0; i < e.vocab.size(); ++i) {
    os << e.vocab.token(i);
    for (float f : e.matrix.vector(i)) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(f));
      os << buf;
    }
    os << '\n';
  }
}

namespace detail {

inline std::pair<std::size_t, int> read_word2vec_header(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("word2vec: missing header line");
  std::istringstream hs(line);
  long long count = -1, dim = -1;
  if (!(hs >> count >> dim) || count < 0 || dim < 1)
    throw Error("word2vec: malformed header \"" + line + "\"");
  return {static_cast<std::size_t>(count), static_cast<int>(dim)};
}

inline WordEmbedding finish_embedding(std::vector<std::string> tokens, std::vector<float> data, int dim,
                                      EmbeddingSource source) {
  for (float f : data)
    if (!std::isfinite(f)) throw Error("word2vec: non-finite vector component");
  WordEmbedding e;
  std::vector<std::uint64_t> counts(tokens.size(), 0);
  e.vocab = Vocabulary(std::move(tokens), std::move(counts));
  e.matrix.dim = dim;
  e.matrix.source = source;
  e.matrix.data = std::move(data);
  return e;
}

}  // namespace detail

inline WordEmbedding read_word2vec_text(std::istream& is,
                                        EmbeddingSource source = EmbeddingSource::PretrainedFile) {
  const auto [count, dim] = detail::read_word2vec_header(is);
  std::vector<std::string> tokens;
  std::vector<float> data;
  data.reserve(count * static_cast<std::size_t>(dim));
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    if (tokens.size() == count)
      throw Error("word2vec: body has more than the " + std::to_string(count) + " declared words");
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    std::vector<float> row;
    std::string num;
    while (ls >> num) {
      double v = 0;
      const auto res = std::from_chars(num.data(), num.data() + num.size(), v);
      if (res.ec != std::errc() || res.ptr != num.data() + num.size())
        throw Error("word2vec: malformed number \"" + num + "\" for word " + tok);
      row.push_back(static_cast<float>(v));
    }
    if (row.size() != static_cast<std::size_t>(dim))
      throw Error("word2vec: word " + tok + " has " + std::to_string(row.size()) + " values, expected " +
                  std::to_string(dim));
    tokens.push_back(std::move(tok));
    data.insert(data.end(), row.begin(), row.end());
  }
  if (tokens.size() != count)
    throw Error("word2vec: header declares " + std::to_string(count) + " words, body has " +
                std::to_string(tokens.size()));
  return detail::finish_embedding(std::move(tokens), std::move(data), dim, source);
}

inline WordEmbedding read_word2vec_binary(std::istream& is,
                                          EmbeddingSource source = EmbeddingSource::PretrainedFile) {
  const auto [count, dim] = detail::read_word2vec_header(is);
  std::vector<std::string> tokens;
  std::vector<float> data;
  data.reserve(count * static_cast<std::size_t>(dim));
  for (std::size_t w = 0; w < count; ++w) {
    std::string tok;
    int ch;
    // Some writers put a newline after each vector; skip it.
    while ((ch = is.get()) == '\n') {
    }
    while (ch != EOF && ch != ' ') {
      tok += static_cast<char>(ch);
      ch = is.get();
    }
    if (ch == EOF)
      throw Error("word2vec: header declares " + std::to_string(count) + " words, body has " + std::to_string(w));
    for (int d = 0; d < dim; ++d) {
      unsigned char b[4];
      if (!is.read(reinterpret_cast<char*>(b), 4)) throw Error("word2vec: truncated vector for word " + tok);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      data.push_back(std::bit_cast<float>(bits));
    }
    tokens.push_back(std::move(tok));
  }
  int ch;
  while ((ch = is.get()) != EOF) {
    if (!html::is_space(static_cast<char>(ch)))
      throw Error("word2vec: body has more than the " + std::to_string(count) + " declared words");
  }
  return detail::finish_embedding(std::move(tokens), std::move(data), dim, source);
}

/// Loads a word2vec file, picking text or binary by extension (.bin is
/// binary; .txt/.vec are text) and otherwise by sniffing for control bytes.
inline WordEmbedding load_pretrained(const std::filesystem::path& path,
                                     EmbeddingSource source = EmbeddingSource::PretrainedFile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embedding file " + path.string());
  const auto ext = path.extension().string();
  bool binary = ext == ".bin";
  if (!binary && ext != ".txt" && ext != ".vec") {
    std::string header;
    std::getline(in, header);
    char buf[4096];
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      const auto u = static_cast<unsigned char>(buf[i]);
      if (u < 0x09 || (u > 0x0D && u < 0x20)) binary = true;
    }
    in.clear();
    in.seekg(0);
  }
  return binary ? read_word2vec_binary(in, source) : read_word2vec_text(in, source);
}

inline void save_word2vec_binary(const std::filesystem::path& path, const WordEmbedding& e) {
  std::ostringstream os;
  write_word2vec_binary(os, e);
  detail::write_file(path, os.str());
}

// ---------------------------------------------------------------------------

/// L2-normalized mean of the in-vocabulary token vectors; nullopt when no
/// token is known or the mean vanishes.
inline std::optional<std::vector<double>> row_vector(const TokenStream& stream, const WordEmbedding& emb) {
  std::vector<double> sum(static_cast<std::size_t>(emb.matrix.dim), 0.0);
  std::size_t n = 0;
  for (const auto& t : stream) {
    const auto v = emb.lookup(t);
    if (!v) continue;
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += (*v)[d];
    ++n;
  }
  if (n == 0) return std::nullopt;
  double norm = 0;
  for (auto& x : sum) {
    x /= static_cast<double>(n);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0 || !std::isfinite(norm)) return std::nullopt;
  for (auto& x : sum) x /= norm;
  return sum;
}

}  // namespace tablesage

#endif  // TABLESAGE_EMBEDDING_HPP
