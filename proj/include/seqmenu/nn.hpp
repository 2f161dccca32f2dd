#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seqmenu/activations.hpp"
#include "seqmenu/core_types.hpp"
#include "seqmenu/errors.hpp"
#include "seqmenu/rng.hpp"
#include "seqmenu/valuations.hpp"

namespace seqmenu {

enum class OutputHead { Identity, SoftplusOffset, SigmoidOffset };

/**
 * Fixed MLP layout: an embedding table (embed_rows x d_emb) whose row for the
 * current agent is prepended to `features` raw inputs, then hidden_layers tanh
 * layers of hidden_units, then a linear layer of output_dim and the head.
 */
struct MlpSpec {
  int features = 1;
  int hidden_layers = 3;
  int hidden_units = 256;
  int output_dim = 1;
  OutputHead head = OutputHead::Identity;
  int embed_rows = 0;  // 0 disables the embedding
  int d_emb = 0;

  int input_dim() const noexcept { return features + (embed_rows > 0 ? d_emb : 0); }

  void validate() const {
    require(features >= 1 && hidden_layers >= 0 && hidden_units >= 1 && output_dim >= 1, "MLP dims must be >= 1");
    require(embed_rows >= 0 && d_emb >= 0 && (embed_rows == 0 || d_emb >= 1), "bad embedding shape");
  }

  /// (rows, cols) of each dense layer's weight matrix, input side first.
  std::vector<std::pair<int, int>> layer_shapes() const {
    std::vector<std::pair<int, int>> out;
    int in = input_dim();
    for (int l = 0; l < hidden_layers; ++l) {
      out.emplace_back(hidden_units, in);
      in = hidden_units;
    }
    out.emplace_back(output_dim, in);
    return out;
  }

  /// Flat parameter count: per layer W (column-major) then b, then the embedding (row-major).
  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto [r, c] : layer_shapes()) n += static_cast<std::size_t>(r) * c + r;
    return n + static_cast<std::size_t>(embed_rows) * d_emb;
  }
};

struct MlpParams {
  MlpSpec spec;
  Eigen::VectorXd theta;

  using MapM = Eigen::Map<Eigen::MatrixXd>;
  using CMapM = Eigen::Map<const Eigen::MatrixXd>;
  using EmbMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using CEmbMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  std::size_t weight_offset(int layer) const {
    std::size_t off = 0;
    const auto shapes = spec.layer_shapes();
    for (int l = 0; l < layer; ++l) off += static_cast<std::size_t>(shapes[l].first) * shapes[l].second + shapes[l].first;
    return off;
  }

  CMapM W(int layer) const {
    const auto [r, c] = spec.layer_shapes()[layer];
    return CMapM(theta.data() + weight_offset(layer), r, c);
  }
  Eigen::Map<const Eigen::VectorXd> b(int layer) const {
    const auto [r, c] = spec.layer_shapes()[layer];
    return Eigen::Map<const Eigen::VectorXd>(theta.data() + weight_offset(layer) + static_cast<std::size_t>(r) * c, r);
  }
  CEmbMap embedding() const {
    return CEmbMap(theta.data() + weight_offset(spec.hidden_layers + 1), spec.embed_rows, spec.d_emb);
  }
};

/// Xavier-uniform weights, zero biases, N(0, 0.1) embedding entries.
inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  MlpParams p{spec, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.param_count()))};
  std::size_t off = 0;
  for (auto [r, c] : spec.layer_shapes()) {
    const double a = std::sqrt(6.0 / (r + c));
    for (std::size_t i = 0; i < static_cast<std::size_t>(r) * c; ++i) p.theta[off + i] = rng.uniform(-a, a);
    off += static_cast<std::size_t>(r) * c + r;
  }
  for (std::size_t i = off; i < spec.param_count(); ++i) p.theta[i] = 0.1 * rng.normal();
  return p;
}

/// Network input for a state: the agent's embedding row (if any), then the m availability bits.
inline Eigen::VectorXd encode_state(const AuctionState& s, const MlpParams& params, int m) {
  const auto& spec = params.spec;
  require(spec.features == m, "network features do not match m");
  Eigen::VectorXd x(spec.input_dim());
  int o = 0;
  if (spec.embed_rows > 0) {
    require(s.agent >= 1 && s.agent <= spec.embed_rows, "agent index outside the embedding table");
    x.head(spec.d_emb) = params.embedding().row(s.agent - 1).transpose();
    o = spec.d_emb;
  }
  for (int j = 0; j < m; ++j) x[o + j] = s.available.contains(j) ? 1.0 : 0.0;
  return x;
}

/// Column-per-sample input batch for a list of states.
inline Eigen::MatrixXd encode_states(std::span<const AuctionState> states, const MlpParams& params, int m) {
  Eigen::MatrixXd X(params.spec.input_dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = encode_state(states[i], params, m);
  return X;
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> activations;  // layer inputs: activations[0] = X, then each hidden output
  Eigen::MatrixXd pre_output;                // last layer before the head
  Eigen::MatrixXd output;
};

inline double apply_head(OutputHead h, double x) {
  switch (h) {
    case OutputHead::SoftplusOffset: return softplus_with_offset(x);
    case OutputHead::SigmoidOffset: return sigmoid_with_offset(x);
    default: return x;
  }
}
inline double head_grad(OutputHead h, double x) {
  switch (h) {
    case OutputHead::SoftplusOffset: return softplus_with_offset_grad(x);
    case OutputHead::SigmoidOffset: return sigmoid_with_offset_grad(x);
    default: return 1.0;
  }
}

/// Forward pass on a column batch. Throws DivergenceError on non-finite outputs.
inline ForwardCache forward(const MlpParams& params, const Eigen::MatrixXd& X) {
  const auto& spec = params.spec;
  require(X.rows() == spec.input_dim(), "input batch has the wrong dimension");
  ForwardCache c;
  c.activations.reserve(spec.hidden_layers + 1);
  c.activations.push_back(X);
  for (int l = 0; l < spec.hidden_layers; ++l) {
    Eigen::MatrixXd z = params.W(l) * c.activations.back();
    z.colwise() += params.b(l);
    c.activations.push_back(z.array().tanh().matrix());
  }
  c.pre_output = params.W(spec.hidden_layers) * c.activations.back();
  c.pre_output.colwise() += params.b(spec.hidden_layers);
  c.output = c.pre_output.unaryExpr([&](double x) { return apply_head(spec.head, x); });
  if (!c.output.allFinite()) throw DivergenceError("network produced a non-finite output");
  return c;
}

struct Gradients {
  Eigen::VectorXd theta;  // same layout as MlpParams::theta
  Eigen::MatrixXd input;  // d loss / d X
};

/**
 * Reverse pass for d_output (same shape as the output batch). Gradients are
 * sums over the batch. If `agents` is given (1-based, one per column), the
 * input gradient of the embedding coordinates is accumulated into the rows
 * of the embedding table.
 */
inline Gradients backward(const MlpParams& params, const ForwardCache& cache, const Eigen::MatrixXd& d_output,
                          std::span<const int> agents = {}) {
  const auto& spec = params.spec;
  require(d_output.rows() == cache.output.rows() && d_output.cols() == cache.output.cols(),
          "output gradient has the wrong shape");
  Gradients g;
  g.theta = Eigen::VectorXd::Zero(params.theta.size());
  Eigen::MatrixXd delta = d_output.cwiseProduct(cache.pre_output.unaryExpr([&](double x) { return head_grad(spec.head, x); }));
  for (int l = spec.hidden_layers; l >= 0; --l) {
    const auto [r, c] = spec.layer_shapes()[l];
    const std::size_t off = params.weight_offset(l);
    const Eigen::MatrixXd& in = cache.activations[l];
    Eigen::Map<Eigen::MatrixXd>(g.theta.data() + off, r, c).noalias() = delta * in.transpose();
    Eigen::Map<Eigen::VectorXd>(g.theta.data() + off + static_cast<std::size_t>(r) * c, r) = delta.rowwise().sum();
    Eigen::MatrixXd d_in = params.W(l).transpose() * delta;
    if (l > 0) delta = d_in.cwiseProduct((1.0 - in.array().square()).matrix());
    else g.input = std::move(d_in);
  }
  if (spec.embed_rows > 0 && !agents.empty()) {
    require(static_cast<Eigen::Index>(agents.size()) == g.input.cols(), "one agent index per batch column");
    const std::size_t off = params.weight_offset(spec.hidden_layers + 1);
    for (std::size_t i = 0; i < agents.size(); ++i) {
      require(agents[i] >= 1 && agents[i] <= spec.embed_rows, "agent index outside the embedding table");
      double* row = g.theta.data() + off + static_cast<std::size_t>(agents[i] - 1) * spec.d_emb;
      for (int d = 0; d < spec.d_emb; ++d) row[d] += g.input(d, static_cast<Eigen::Index>(i));
    }
  }
  return g;
}

/// Adam moments for one parameter vector.
struct OptimizerState {
  Eigen::VectorXd m1, m2;
  long step = 0;
  double lr = 1e-4;

  explicit OptimizerState(std::size_t size = 0, double learning_rate = 1e-4)
      : m1(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
        m2(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))), lr(learning_rate) {}
};

inline void opt_step(MlpParams& params, const Eigen::VectorXd& grad, OptimizerState& st) {
  require(grad.size() == params.theta.size() && st.m1.size() == grad.size(), "optimizer shapes do not match");
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  st.m1 = b1 * st.m1 + (1 - b1) * grad;
  st.m2 = b2 * st.m2 + (1 - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  params.theta.array() -= st.lr * (st.m1.array() / c1) / ((st.m2.array() / c2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Checkpoints (little-endian): char[4] "SQNN", u32 version=1, i32 features,
// hidden_layers, hidden_units, output_dim, head, embed_rows, d_emb,
// u32 tag length + tag bytes (e.g. "critic", "actor-full", "actor-entry-fee"),
// u64 parameter count, then the f64 parameters in MlpParams::theta order.

inline void save_mlp(std::ostream& os, const MlpParams& p, const std::string& tag) {
  os.write("SQNN", 4);
  detail::write_pod<std::uint32_t>(os, 1);
  const auto& s = p.spec;
  for (int v : {s.features, s.hidden_layers, s.hidden_units, s.output_dim, static_cast<int>(s.head), s.embed_rows, s.d_emb})
    detail::write_pod<std::int32_t>(os, v);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tag.size()));
  os.write(tag.data(), static_cast<std::streamsize>(tag.size()));
  detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.theta.size()));
  os.write(reinterpret_cast<const char*>(p.theta.data()), static_cast<std::streamsize>(p.theta.size() * sizeof(double)));
}

inline MlpParams load_mlp(std::istream& is, std::string* tag = nullptr) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SQNN") throw FormatError("not a network checkpoint");
  if (detail::read_pod<std::uint32_t>(is) != 1) throw FormatError("unsupported checkpoint version");
  MlpParams p;
  auto& s = p.spec;
  s.features = detail::read_pod<std::int32_t>(is);
  s.hidden_layers = detail::read_pod<std::int32_t>(is);
  s.hidden_units = detail::read_pod<std::int32_t>(is);
  s.output_dim = detail::read_pod<std::int32_t>(is);
  s.head = static_cast<OutputHead>(detail::read_pod<std::int32_t>(is));
  s.embed_rows = detail::read_pod<std::int32_t>(is);
  s.d_emb = detail::read_pod<std::int32_t>(is);
  s.validate();
  std::string t(detail::read_pod<std::uint32_t>(is), '\0');
  is.read(t.data(), static_cast<std::streamsize>(t.size()));
  if (tag) *tag = t;
  const auto count = detail::read_pod<std::uint64_t>(is);
  if (count != s.param_count()) throw FormatError("checkpoint parameter count does not match its header");
  p.theta.resize(static_cast<Eigen::Index>(count));
  is.read(reinterpret_cast<char*>(p.theta.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw FormatError("truncated checkpoint");
  if (!p.theta.allFinite()) throw FormatError("checkpoint holds non-finite parameters");
  return p;
}

}  // namespace seqmenu
