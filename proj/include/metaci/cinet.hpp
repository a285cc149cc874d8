#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "metaci/dgp.hpp"
#include "metaci/matrix.hpp"
#include "metaci/rng.hpp"

namespace metaci {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct DenseLayer {
  Matrix W;               // fan_in x fan_out
  std::vector<double> b;  // fan_out
  bool relu = true;

  DenseLayer() = default;
  DenseLayer(std::size_t fan_in, std::size_t fan_out, bool relu_)
      : W(fan_in, fan_out), b(fan_out, 0.0), relu(relu_) {}
};

// Two blocks: phi maps x to a representation, head maps (representation, t)
// to the outcome. With an empty phi block the head consumes (x, t) directly.
struct NetParams {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> phi;
  std::vector<DenseLayer> head;

  std::size_t rep_dim() const {
    return phi.empty() ? input_dim : phi.back().W.cols();
  }
};

struct CIConfig {
  std::vector<std::size_t> phi_sizes = {48, 48};
  std::vector<std::size_t> head_sizes = {32};
  double alpha = 1.0;          // representation-balance weight
  double gamma = 1e-3;         // head complexity weight
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  std::size_t epochs = 64;
  double dropout = 0.0;

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("CIConfig: batch_size must be > 0");
    if (learning_rate < 0.0) throw std::invalid_argument("CIConfig: learning_rate < 0");
    if (alpha < 0.0 || gamma < 0.0) throw std::invalid_argument("CIConfig: negative penalty weight");
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("CIConfig: dropout must lie in [0, 1)");
    }
    if (phi_sizes.empty() && alpha != 0.0) {
      throw std::invalid_argument("CIConfig: balance weight needs a representation block");
    }
    for (std::size_t s : phi_sizes) {
      if (s == 0) throw std::invalid_argument("CIConfig: zero-width phi layer");
    }
    for (std::size_t s : head_sizes) {
      if (s == 0) throw std::invalid_argument("CIConfig: zero-width head layer");
    }
  }

  json to_json() const {
    return json{{"phi_sizes", phi_sizes},   {"head_sizes", head_sizes},
                {"alpha", alpha},           {"gamma", gamma},
                {"learning_rate", learning_rate}, {"batch_size", batch_size},
                {"epochs", epochs},         {"dropout", dropout}};
  }

  static CIConfig from_json(const json& j) {
    CIConfig c;
    if (j.contains("phi_sizes")) c.phi_sizes = j["phi_sizes"].get<std::vector<std::size_t>>();
    if (j.contains("head_sizes")) c.head_sizes = j["head_sizes"].get<std::vector<std::size_t>>();
    c.alpha = j.value("alpha", c.alpha);
    c.gamma = j.value("gamma", c.gamma);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.dropout = j.value("dropout", c.dropout);
    c.validate();
    return c;
  }
};

// Plain-net variant: no representation block, the head reads (x, t) directly
// and the balance term is off. The former phi widths fold into the head so
// depth and capacity stay comparable.
inline CIConfig build_nn4(CIConfig cfg) {
  std::vector<std::size_t> sizes = std::move(cfg.phi_sizes);
  sizes.insert(sizes.end(), cfg.head_sizes.begin(), cfg.head_sizes.end());
  cfg.head_sizes = std::move(sizes);
  cfg.phi_sizes.clear();
  cfg.alpha = 0.0;
  return cfg;
}

// He-scaled normal weights, zero biases. Draw order is fixed: phi layers then
// head layers, each weight matrix row-major.
inline NetParams init_net(const CIConfig& cfg, std::size_t input_dim, RngStream rng) {
  cfg.validate();
  if (input_dim == 0) throw std::invalid_argument("init_net: input_dim must be > 0");
  NetParams net;
  net.input_dim = input_dim;

  auto add_layer = [&](std::vector<DenseLayer>& block, std::size_t fan_in,
                       std::size_t fan_out, bool relu) {
    DenseLayer layer(fan_in, fan_out, relu);
    const double scale = relu ? std::sqrt(2.0 / static_cast<double>(fan_in))
                              : std::sqrt(1.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < fan_in; ++i)
      for (std::size_t j = 0; j < fan_out; ++j) layer.W(i, j) = scale * rng.normal();
    block.push_back(std::move(layer));
  };

  std::size_t in = input_dim;
  for (std::size_t s : cfg.phi_sizes) {
    add_layer(net.phi, in, s, true);
    in = s;
  }
  in = net.rep_dim() + 1;  // + treatment column
  for (std::size_t s : cfg.head_sizes) {
    add_layer(net.head, in, s, true);
    in = s;
  }
  add_layer(net.head, in, 1, false);
  return net;
}

// ---------------------------------------------------------------------------
// Parameter arithmetic (shared by SGD and the meta update)
// ---------------------------------------------------------------------------

inline void check_same_shape(const NetParams& a, const NetParams& b, const char* op) {
  auto block_ok = [](const std::vector<DenseLayer>& x, const std::vector<DenseLayer>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t l = 0; l < x.size(); ++l) {
      if (x[l].W.rows() != y[l].W.rows() || x[l].W.cols() != y[l].W.cols()) return false;
    }
    return true;
  };
  if (a.input_dim != b.input_dim || !block_ok(a.phi, b.phi) || !block_ok(a.head, b.head)) {
    throw std::invalid_argument(std::string(op) + ": parameter shapes disagree");
  }
}

inline NetParams zeros_like(const NetParams& net) {
  NetParams z = net;
  for (auto* block : {&z.phi, &z.head}) {
    for (auto& layer : *block) {
      layer.W.scale_in_place(0.0);
      std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
  }
  return z;
}

// dst += s * src
inline void axpy_params(NetParams& dst, double s, const NetParams& src) {
  check_same_shape(dst, src, "axpy_params");
  for (std::size_t l = 0; l < dst.phi.size(); ++l) {
    dst.phi[l].W.axpy_in_place(s, src.phi[l].W);
    for (std::size_t i = 0; i < dst.phi[l].b.size(); ++i) dst.phi[l].b[i] += s * src.phi[l].b[i];
  }
  for (std::size_t l = 0; l < dst.head.size(); ++l) {
    dst.head[l].W.axpy_in_place(s, src.head[l].W);
    for (std::size_t i = 0; i < dst.head[l].b.size(); ++i)
      dst.head[l].b[i] += s * src.head[l].b[i];
  }
}

inline std::size_t param_count(const NetParams& net) {
  std::size_t n = 0;
  for (const auto* block : {&net.phi, &net.head}) {
    for (const auto& layer : *block) n += layer.W.size() + layer.b.size();
  }
  return n;
}

// Flat order: phi then head; per layer the row-major weights then the biases.
inline std::vector<double> flatten_params(const NetParams& net) {
  std::vector<double> v;
  v.reserve(param_count(net));
  for (const auto* block : {&net.phi, &net.head}) {
    for (const auto& layer : *block) {
      v.insert(v.end(), layer.W.data().begin(), layer.W.data().end());
      v.insert(v.end(), layer.b.begin(), layer.b.end());
    }
  }
  return v;
}

inline void unflatten_params(NetParams& net, const std::vector<double>& v) {
  if (v.size() != param_count(net)) {
    throw std::invalid_argument("unflatten_params: length mismatch");
  }
  std::size_t pos = 0;
  for (auto* block : {&net.phi, &net.head}) {
    for (auto& layer : *block) {
      for (std::size_t i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = v[pos++];
      for (std::size_t i = 0; i < layer.b.size(); ++i) layer.b[i] = v[pos++];
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / loss / backward
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double factual = 0.0;
  double discrepancy = 0.0;
  double complexity = 0.0;
  double total = 0.0;
  bool fallback = false;  // single-group batch: unit weights, no balance term
};

namespace detail {

struct LayerCache {
  Matrix pre;   // before activation
  Matrix post;  // after activation and dropout
  Matrix mask;  // dropout mask, empty in eval mode
};

struct ForwardCache {
  Matrix input;
  std::vector<LayerCache> phi;
  Matrix rep;
  Matrix head_in;
  std::vector<LayerCache> head;
  std::vector<double> yhat;
};

inline Matrix affine(const Matrix& X, const DenseLayer& L) {
  Matrix out = X.multiply(L.W);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += L.b[j];
  return out;
}

// Inverted dropout; one uniform per entry, row-major, drawn in train mode only.
inline Matrix draw_dropout_mask(std::size_t rows, std::size_t cols, double p, RngStream& rng) {
  Matrix m(rows, cols, 1.0);
  if (p <= 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.uniform01() < p ? 0.0 : keep_scale;
  return m;
}

inline void run_block(const std::vector<DenseLayer>& block, Matrix& act,
                      std::vector<LayerCache>& caches, double dropout, RngStream* rng) {
  for (const auto& layer : block) {
    LayerCache c;
    c.pre = affine(act, layer);
    c.post = c.pre;
    if (layer.relu) {
      for (std::size_t i = 0; i < c.post.size(); ++i) {
        double& v = c.post.data()[i];
        v = v > 0.0 ? v : 0.0;
      }
      if (rng != nullptr && dropout > 0.0) {
        c.mask = draw_dropout_mask(c.post.rows(), c.post.cols(), dropout, *rng);
        c.post.hadamard_in_place(c.mask);
      }
    }
    act = c.post;
    caches.push_back(std::move(c));
  }
}

// rng == nullptr selects eval mode (no dropout).
inline ForwardCache forward(const NetParams& net, const Matrix& X,
                            const std::vector<int>& t, double dropout, RngStream* rng) {
  if (X.cols() != net.input_dim) throw std::invalid_argument("forward: input width mismatch");
  if (t.size() != X.rows()) throw std::invalid_argument("forward: t length mismatch");
  ForwardCache fc;
  fc.input = X;

  Matrix act = X;
  run_block(net.phi, act, fc.phi, dropout, rng);
  fc.rep = act;

  fc.head_in = Matrix(act.rows(), act.cols() + 1);
  for (std::size_t i = 0; i < act.rows(); ++i) {
    for (std::size_t j = 0; j < act.cols(); ++j) fc.head_in(i, j) = act(i, j);
    fc.head_in(i, act.cols()) = static_cast<double>(t[i]);
  }

  Matrix hact = fc.head_in;
  run_block(net.head, hact, fc.head, dropout, rng);
  if (hact.cols() != 1) throw std::logic_error("forward: head output must be one column");
  fc.yhat.resize(hact.rows());
  for (std::size_t i = 0; i < hact.rows(); ++i) fc.yhat[i] = hact(i, 0);
  return fc;
}

inline std::size_t head_weight_count(const NetParams& net) {
  std::size_t n = 0;
  for (const auto& layer : net.head) n += layer.W.size();
  return n;
}

}  // namespace detail

// Outcome predictions under the given treatment column, eval mode.
inline std::vector<double> predict(const NetParams& net, const Matrix& X,
                                   const std::vector<int>& t) {
  return detail::forward(net, X, t, 0.0, nullptr).yhat;
}

// Inverse-share weights t/(2u) + (1-t)/(2(1-u)) with u the treated fraction
// of the given rows. A single-group set degenerates to unit weights and is
// reported through LossBreakdown::fallback.
inline std::vector<double> sample_weights(const std::vector<int>& t, bool* fallback = nullptr) {
  if (t.empty()) throw std::invalid_argument("sample_weights: empty batch");
  std::size_t n1 = 0;
  for (int ti : t) n1 += static_cast<std::size_t>(ti);
  const std::size_t n = t.size();
  if (n1 == 0 || n1 == n) {
    if (fallback) *fallback = true;
    return std::vector<double>(n, 1.0);
  }
  if (fallback) *fallback = false;
  const double u = static_cast<double>(n1) / static_cast<double>(n);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = t[i] == 1 ? 1.0 / (2.0 * u) : 1.0 / (2.0 * (1.0 - u));
  }
  return w;
}

// L2 distance between treated and control representation means; 0 when a
// group is empty.
inline double representation_discrepancy(const Matrix& rep, const std::vector<int>& t) {
  if (t.size() != rep.rows()) {
    throw std::invalid_argument("representation_discrepancy: t length mismatch");
  }
  std::size_t n1 = 0;
  for (int ti : t) n1 += static_cast<std::size_t>(ti);
  const std::size_t n0 = t.size() - n1;
  if (n1 == 0 || n0 == 0) return 0.0;
  double sq = 0.0;
  for (std::size_t j = 0; j < rep.cols(); ++j) {
    double m1 = 0.0, m0 = 0.0;
    for (std::size_t i = 0; i < rep.rows(); ++i) {
      (t[i] == 1 ? m1 : m0) += rep(i, j);
    }
    const double d = m1 / static_cast<double>(n1) - m0 / static_cast<double>(n0);
    sq += d * d;
  }
  return std::sqrt(sq);
}

namespace detail {

struct LossGrads {
  LossBreakdown loss;
  NetParams grads;
};

inline void backprop_block(const std::vector<DenseLayer>& block,
                           const std::vector<LayerCache>& caches, const Matrix& block_input,
                           Matrix d_out, std::vector<DenseLayer>& grad_block,
                           Matrix* d_input) {
  for (std::size_t li = block.size(); li-- > 0;) {
    const DenseLayer& layer = block[li];
    const LayerCache& cache = caches[li];
    Matrix d_pre = std::move(d_out);
    if (layer.relu) {
      if (cache.mask.size() > 0) d_pre.hadamard_in_place(cache.mask);
      for (std::size_t i = 0; i < d_pre.size(); ++i) {
        if (cache.pre.data()[i] <= 0.0) d_pre.data()[i] = 0.0;
      }
    }
    const Matrix& below = li == 0 ? block_input : caches[li - 1].post;
    grad_block[li].W = below.transposed().multiply(d_pre);
    grad_block[li].b = d_pre.col_sums();
    if (li > 0 || d_input != nullptr) {
      d_out = d_pre.multiply(layer.W.transposed());
    }
    if (li == 0 && d_input != nullptr) *d_input = std::move(d_out);
  }
}

// Loss and full gradient on one batch. rng non-null selects train mode.
inline LossGrads loss_and_grad(const NetParams& net, const CIConfig& cfg, const Matrix& X,
                               const std::vector<int>& t, const std::vector<double>& y,
                               RngStream* rng) {
  cfg.validate();
  const std::size_t n = X.rows();
  if (n == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  if (y.size() != n) throw std::invalid_argument("loss_and_grad: y length mismatch");

  ForwardCache fc = forward(net, X, t, cfg.dropout, rng);

  LossGrads out;
  out.grads = zeros_like(net);

  bool fallback = false;
  const std::vector<double> w = sample_weights(t, &fallback);
  out.loss.fallback = fallback;

  double factual = 0.0;
  Matrix d_yhat(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double err = fc.yhat[i] - y[i];
    factual += w[i] * err * err;
    d_yhat(i, 0) = 2.0 * w[i] * err / static_cast<double>(n);
  }
  factual /= static_cast<double>(n);
  out.loss.factual = factual;

  const std::size_t hw = head_weight_count(net);
  double comp = 0.0;
  for (const auto& layer : net.head) {
    for (double v : layer.W.data()) comp += v * v;
  }
  comp /= static_cast<double>(hw);
  out.loss.complexity = comp;

  Matrix d_head_in(n, fc.head_in.cols(), 0.0);
  backprop_block(net.head, fc.head, fc.head_in, std::move(d_yhat), out.grads.head, &d_head_in);
  for (std::size_t l = 0; l < net.head.size(); ++l) {
    out.grads.head[l].W.axpy_in_place(2.0 * cfg.gamma / static_cast<double>(hw),
                                      net.head[l].W);
  }

  const std::size_t rd = fc.rep.cols();
  Matrix d_rep(n, rd);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < rd; ++j) d_rep(i, j) = d_head_in(i, j);

  double disc = 0.0;
  if (!fallback && cfg.alpha != 0.0 && !net.phi.empty()) {
    std::size_t n1 = 0;
    for (int ti : t) n1 += static_cast<std::size_t>(ti);
    const std::size_t n0 = n - n1;
    std::vector<double> diff(rd, 0.0);
    for (std::size_t j = 0; j < rd; ++j) {
      double m1 = 0.0, m0 = 0.0;
      for (std::size_t i = 0; i < n; ++i) (t[i] == 1 ? m1 : m0) += fc.rep(i, j);
      diff[j] = m1 / static_cast<double>(n1) - m0 / static_cast<double>(n0);
      disc += diff[j] * diff[j];
    }
    disc = std::sqrt(disc);
    if (disc > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        const double group = t[i] == 1 ? 1.0 / static_cast<double>(n1)
                                       : -1.0 / static_cast<double>(n0);
        for (std::size_t j = 0; j < rd; ++j) {
          d_rep(i, j) += cfg.alpha * group * diff[j] / disc;
        }
      }
    }
  } else if (!fallback && !net.phi.empty()) {
    disc = representation_discrepancy(fc.rep, t);
  }
  out.loss.discrepancy = disc;

  if (!net.phi.empty()) {
    backprop_block(net.phi, fc.phi, fc.input, std::move(d_rep), out.grads.phi, nullptr);
  }

  out.loss.total = factual + cfg.alpha * disc + cfg.gamma * comp;
  return out;
}

inline Matrix gather_rows(const Matrix& X, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < X.cols(); ++j) out(i, j) = X(rows[i], j);
  return out;
}

template <typename T>
inline std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= v.size()) throw std::out_of_range("gather: row index out of range");
    out.push_back(v[r]);
  }
  return out;
}

}  // namespace detail

// Eval-mode loss over the selected rows.
inline LossBreakdown ci_loss(const NetParams& net, const CIConfig& cfg, const Dataset& data,
                             const std::vector<std::size_t>& rows) {
  const Matrix X = detail::gather_rows(data.X, rows);
  const std::vector<int> t = detail::gather(data.t, rows);
  const std::vector<double> y = detail::gather(data.y, rows);
  return detail::loss_and_grad(net, cfg, X, t, y, nullptr).loss;
}

inline double validation_objective(const NetParams& net, const CIConfig& cfg,
                                   const Dataset& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw std::invalid_argument("validation_objective: empty row set");
  return ci_loss(net, cfg, data, rows).total;
}

// ---------------------------------------------------------------------------
// Mini-batch SGD update operator
// ---------------------------------------------------------------------------

struct UpdateResult {
  NetParams params;
  std::size_t skipped_batches = 0;  // single-group batches carry no usable signal
  std::size_t applied_batches = 0;
};

// cfg.epochs passes over the rows; each epoch reshuffles, partitions into
// batches of cfg.batch_size (last one short), and applies plain SGD steps.
// The skip check runs before any dropout draw so skipping is reproducible.
inline UpdateResult update_operator(NetParams params, const CIConfig& cfg, const Dataset& data,
                                    const std::vector<std::size_t>& rows, RngStream rng) {
  cfg.validate();
  if (rows.empty()) throw std::invalid_argument("update_operator: empty row set");
  UpdateResult res;

  std::vector<std::size_t> order = rows;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      std::size_t n1 = 0;
      for (std::size_t r : batch) n1 += static_cast<std::size_t>(data.t[r]);
      if (n1 == 0 || n1 == batch.size()) {
        ++res.skipped_batches;
        continue;
      }
      const Matrix X = detail::gather_rows(data.X, batch);
      const std::vector<int> t = detail::gather(data.t, batch);
      const std::vector<double> y = detail::gather(data.y, batch);
      auto lg = detail::loss_and_grad(params, cfg, X, t, y, &rng);
      axpy_params(params, -cfg.learning_rate, lg.grads);
      ++res.applied_batches;
    }
  }
  res.params = std::move(params);
  return res;
}

}  // namespace metaci
