#ifndef TABLESAGE_LSTM_HPP
#define TABLESAGE_LSTM_HPP

// Stacked LSTM with a dense softmax head: forward pass, exact backward pass
// (backpropagation through time) and the Adam update.
//
// Gate rows in every layer are stacked as [input; forget; output; candidate],
// each block `hidden` rows tall. All parameters live in one flat buffer so the
// optimizer, serializer and gradient checks can treat them uniformly.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tablesage/html.hpp"
#include "tablesage/random.hpp"

namespace tablesage {

using Sequence = std::vector<int>;
inline constexpr int kPadIndex = -1;  // embeds to the zero vector

struct Example {
  Sequence tokens;
  int label = 0;
};

using ProbabilityVector = std::vector<double>;

struct NetworkShape {
  int input_dim = 0;
  int hidden = 0;
  int layers = 0;
  int classes = 0;

  bool operator==(const NetworkShape&) const = default;
};

class NetworkParams {
public:
  using Map = Eigen::Map<Eigen::MatrixXd>;
  using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  NetworkParams() = default;

  explicit NetworkParams(const NetworkShape& shape) : shape_(shape) {
    if (shape.input_dim < 1 || shape.hidden < 1 || shape.layers < 1 || shape.classes < 1)
      throw Error("invalid network shape");
    std::size_t off = 0;
    const std::size_t h4 = 4 * static_cast<std::size_t>(shape.hidden);
    for (int l = 0; l < shape.layers; ++l) {
      const std::size_t in = static_cast<std::size_t>(layer_input(l));
      offsets_.push_back(off);
      off += h4 * in + h4 * static_cast<std::size_t>(shape.hidden) + h4;
    }
    dense_offset_ = off;
    off += static_cast<std::size_t>(shape.classes) * static_cast<std::size_t>(shape.hidden) +
           static_cast<std::size_t>(shape.classes);
    values_.assign(off, 0.0);
  }

  const NetworkShape& shape() const noexcept { return shape_; }
  int layer_input(int l) const { return l == 0 ? shape_.input_dim : shape_.hidden; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  // Input-to-hidden weights, 4h x input.
  Map W(int l) { return {ptr_W(l), 4 * shape_.hidden, layer_input(l)}; }
  ConstMap W(int l) const { return {ptr_W(l), 4 * shape_.hidden, layer_input(l)}; }
  // Hidden-to-hidden weights, 4h x h.
  Map U(int l) { return {ptr_U(l), 4 * shape_.hidden, shape_.hidden}; }
  ConstMap U(int l) const { return {ptr_U(l), 4 * shape_.hidden, shape_.hidden}; }
  VecMap b(int l) { return {ptr_b(l), 4 * shape_.hidden}; }
  ConstVecMap b(int l) const { return {ptr_b(l), 4 * shape_.hidden}; }
  // Dense head, classes x h, and its bias.
  Map dense_w() { return {values_.data() + dense_offset_, shape_.classes, shape_.hidden}; }
  ConstMap dense_w() const { return {values_.data() + dense_offset_, shape_.classes, shape_.hidden}; }
  VecMap dense_b() { return {values_.data() + dense_offset_ + dense_w_size(), shape_.classes}; }
  ConstVecMap dense_b() const { return {values_.data() + dense_offset_ + dense_w_size(), shape_.classes}; }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  /// Glorot-uniform input weights, an orthogonal recurrent block per gate, zero biases
  /// with the forget gate at 1, glorot-uniform head and zero head bias.
  void initialize(Rng& rng) {
    const int h = shape_.hidden;
    for (int l = 0; l < shape_.layers; ++l) {
      const double r = std::sqrt(6.0 / static_cast<double>(layer_input(l) + 4 * h));
      for (double* p = ptr_W(l); p != ptr_U(l); ++p) *p = rng.uniform(-r, r);
      for (int g = 0; g < 4; ++g) U(l).middleRows(g * h, h) = orthogonal(h, h, rng);
      b(l).setZero();
      b(l).segment(h, h).setConstant(1.0);
    }
    const double r = std::sqrt(6.0 / static_cast<double>(h + shape_.classes));
    for (double* p = values_.data() + dense_offset_, *e = p + dense_w_size(); p != e; ++p) *p = rng.uniform(-r, r);
    dense_b().setZero();
  }

  /// rows x cols with orthonormal columns (rows >= cols), from a seeded
  /// Gaussian matrix; column signs follow diag(R) so the result is unique.
  static Eigen::MatrixXd orthogonal(int rows, int cols, Rng& rng) {
    Eigen::MatrixXd a(rows, cols);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
    const Eigen::MatrixXd r = qr.matrixQR();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
  }

private:
  std::size_t dense_w_size() const {
    return static_cast<std::size_t>(shape_.classes) * static_cast<std::size_t>(shape_.hidden);
  }
  double* ptr_W(int l) { return values_.data() + offsets_.at(static_cast<std::size_t>(l)); }
  const double* ptr_W(int l) const { return values_.data() + offsets_.at(static_cast<std::size_t>(l)); }
  double* ptr_U(int l) { return ptr_W(l) + 4 * shape_.hidden * layer_input(l); }
  const double* ptr_U(int l) const { return ptr_W(l) + 4 * shape_.hidden * layer_input(l); }
  double* ptr_b(int l) { return ptr_U(l) + 4 * shape_.hidden * shape_.hidden; }
  const double* ptr_b(int l) const { return ptr_U(l) + 4 * shape_.hidden * shape_.hidden; }

  NetworkShape shape_;
  std::vector<std::size_t> offsets_;
  std::size_t dense_offset_ = 0;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------

inline ProbabilityVector softmax(std::span<const double> logits) {
  ProbabilityVector p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0;
  for (auto& x : p) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : p) x /= sum;
  return p;
}

inline constexpr double kProbabilityFloor = 1e-12;

inline double cross_entropy(std::span<const double> p, int label) {
  return -std::log(std::max(p[static_cast<std::size_t>(label)], kProbabilityFloor));
}

namespace detail {

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& a) {
  return a.unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

struct LayerCache {
  std::vector<Eigen::MatrixXd> x, i, f, o, g, c, tc, h;
};

struct ForwardPass {
  std::vector<LayerCache> layers;
  Eigen::MatrixXd probs;  // classes x batch
};

/// Embeds time step t of every sequence as the columns of an input matrix.
inline Eigen::MatrixXd embed_step(const Eigen::MatrixXd& table, const std::vector<const Sequence*>& batch,
                                  std::size_t t) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(table.rows(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const int id = (*batch[k])[t];
    if (id != kPadIndex) x.col(static_cast<Eigen::Index>(k)) = table.col(id);
  }
  return x;
}

inline ForwardPass forward(const NetworkParams& net, const Eigen::MatrixXd& table,
                           const std::vector<const Sequence*>& batch) {
  const auto& shape = net.shape();
  if (table.rows() != shape.input_dim) throw Error("embedding width does not match network input");
  if (batch.empty()) throw Error("empty batch");
  const std::size_t T = batch.front()->size();
  for (const auto* s : batch) {
    if (s->size() != T) throw Error("sequences in a batch must share one length");
    for (int id : *s)
      if (id != kPadIndex && (id < 0 || id >= table.cols())) throw Error("token index out of range");
  }
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int H = shape.hidden;

  ForwardPass fp;
  fp.layers.resize(static_cast<std::size_t>(shape.layers));
  for (int l = 0; l < shape.layers; ++l) {
    auto& lc = fp.layers[static_cast<std::size_t>(l)];
    if (l == 0) {
      for (std::size_t t = 0; t < T; ++t) lc.x.push_back(embed_step(table, batch, t));
    } else {
      lc.x = fp.layers[static_cast<std::size_t>(l - 1)].h;
    }
    Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd c_prev = Eigen::MatrixXd::Zero(H, B);
    const auto W = net.W(l);
    const auto U = net.U(l);
    const auto bias = net.b(l);
    for (std::size_t t = 0; t < T; ++t) {
      Eigen::MatrixXd a = W * lc.x[t] + U * h_prev;
      a.colwise() += bias;
      lc.i.push_back(sigmoid(a.topRows(H)));
      lc.f.push_back(sigmoid(a.middleRows(H, H)));
      lc.o.push_back(sigmoid(a.middleRows(2 * H, H)));
      lc.g.push_back(a.bottomRows(H).array().tanh().matrix());
      lc.c.push_back(lc.f.back().cwiseProduct(c_prev) + lc.i.back().cwiseProduct(lc.g.back()));
      lc.tc.push_back(lc.c.back().array().tanh().matrix());
      lc.h.push_back(lc.o.back().cwiseProduct(lc.tc.back()));
      h_prev = lc.h.back();
      c_prev = lc.c.back();
    }
  }
  const auto& top = fp.layers.back().h.back();
  Eigen::MatrixXd logits = net.dense_w() * top;
  logits.colwise() += net.dense_b();
  fp.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index k = 0; k < B; ++k) {
    const Eigen::VectorXd col = logits.col(k);
    const auto p = softmax(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) fp.probs(r, k) = p[static_cast<std::size_t>(r)];
  }
  return fp;
}

}  // namespace detail

/// Runs a single embedded sequence (input_dim x T) through the LSTM layers
/// from zero state and returns the top layer's last hidden state.
inline Eigen::VectorXd lstm_forward(const NetworkParams& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.shape().input_dim) throw Error("input width does not match layer 1");
  Sequence seq(static_cast<std::size_t>(inputs.cols()));
  for (std::size_t t = 0; t < seq.size(); ++t) seq[t] = static_cast<int>(t);
  if (seq.empty()) return Eigen::VectorXd::Zero(net.shape().hidden);
  const auto fp = detail::forward(net, inputs, {&seq});
  return fp.layers.back().h.back().col(0);
}

/// Class probabilities for each sequence, one vector per input.
inline std::vector<ProbabilityVector> predict_proba(const NetworkParams& net, const Eigen::MatrixXd& table,
                                                    const std::vector<Sequence>& seqs) {
  std::vector<const Sequence*> batch;
  for (const auto& s : seqs) batch.push_back(&s);
  const auto fp = detail::forward(net, table, batch);
  std::vector<ProbabilityVector> out;
  for (Eigen::Index k = 0; k < fp.probs.cols(); ++k)
    out.emplace_back(fp.probs.col(k).data(), fp.probs.col(k).data() + fp.probs.rows());
  return out;
}

/// Mean cross-entropy of a batch.
inline double batch_loss(const NetworkParams& net, const Eigen::MatrixXd& table, const std::vector<Example>& batch) {
  std::vector<const Sequence*> seqs;
  for (const auto& e : batch) seqs.push_back(&e.tokens);
  const auto fp = detail::forward(net, table, seqs);
  double loss = 0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto col = fp.probs.col(static_cast<Eigen::Index>(k));
    loss += cross_entropy(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), batch[k].label);
  }
  return loss / static_cast<double>(batch.size());
}

/// Mean batch loss and its exact gradient with respect to every parameter.
/// `grad` is resized to the network's shape and overwritten. The embedding
/// table is treated as constant.
inline double loss_and_gradient(const NetworkParams& net, const Eigen::MatrixXd& table,
                                const std::vector<Example>& batch, NetworkParams& grad) {
  const auto& shape = net.shape();
  if (!(grad.shape() == shape)) grad = NetworkParams(shape);
  grad.set_zero();

  std::vector<const Sequence*> seqs;
  for (const auto& e : batch) seqs.push_back(&e.tokens);
  const auto fp = detail::forward(net, table, seqs);
  const auto B = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(B);
  const int H = shape.hidden;

  double loss = 0;
  Eigen::MatrixXd dlogits = fp.probs;
  for (Eigen::Index k = 0; k < B; ++k) {
    const int y = batch[static_cast<std::size_t>(k)].label;
    if (y < 0 || y >= shape.classes) throw Error("label out of range");
    loss += -std::log(std::max(fp.probs(y, k), kProbabilityFloor));
    dlogits(y, k) -= 1.0;
  }
  dlogits *= inv_b;

  const auto& top_h = fp.layers.back().h.back();
  grad.dense_w() = dlogits * top_h.transpose();
  grad.dense_b() = dlogits.rowwise().sum();

  const std::size_t T = fp.layers.front().x.size();
  std::vector<Eigen::MatrixXd> dh_in(T, Eigen::MatrixXd::Zero(H, B));
  dh_in.back() = net.dense_w().transpose() * dlogits;

  for (int l = shape.layers - 1; l >= 0; --l) {
    const auto& lc = fp.layers[static_cast<std::size_t>(l)];
    const auto W = net.W(l);
    const auto U = net.U(l);
    auto gW = grad.W(l);
    auto gU = grad.U(l);
    auto gb = grad.b(l);
    std::vector<Eigen::MatrixXd> dx(T);
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd da(4 * H, B);
    for (std::size_t step = T; step-- > 0;) {
      const Eigen::MatrixXd dh = dh_in[step] + dh_next;
      const auto& i = lc.i[step];
      const auto& f = lc.f[step];
      const auto& o = lc.o[step];
      const auto& g = lc.g[step];
      const auto& tc = lc.tc[step];
      const Eigen::MatrixXd dc =
          dc_next + dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
      const Eigen::MatrixXd c_prev = step > 0 ? lc.c[step - 1] : Eigen::MatrixXd::Zero(H, B);
      da.topRows(H) = dc.cwiseProduct(g).array() * i.array() * (1.0 - i.array());
      da.middleRows(H, H) = dc.cwiseProduct(c_prev).array() * f.array() * (1.0 - f.array());
      da.middleRows(2 * H, H) = dh.cwiseProduct(tc).array() * o.array() * (1.0 - o.array());
      da.bottomRows(H) = dc.cwiseProduct(i).array() * (1.0 - g.array().square());

      gW.noalias() += da * lc.x[step].transpose();
      if (step > 0) gU.noalias() += da * lc.h[step - 1].transpose();
      gb += da.rowwise().sum();
      dx[step] = W.transpose() * da;
      dh_next = U.transpose() * da;
      dc_next = dc.cwiseProduct(f);
    }
    dh_in = std::move(dx);
  }
  return loss * inv_b;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw Error("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw Error("adam_step: optimizer state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grads[k];
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grads[k] * grads[k];
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

}  // namespace tablesage

#endif  // TABLESAGE_LSTM_HPP
