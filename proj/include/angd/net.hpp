#pragma once

// Dense feedforward network with exact derivative services: parameter
// Jacobians of value / spatial-derivative observables, spatial gradients
// and Hessians, and per-layer gradient factors for Kronecker
// preconditioning. All derivatives are analytic layer recurrences over
// second-order jets (value, spatial gradient, spatial Hessian); no
// numerical differentiation anywhere.

#include <cstdint>
#include <fstream>
#include <random>
#include <vector>

#include <json.hpp>

#include "angd/core.hpp"

namespace angd {

// Differential observable applied to the scalar network output.
// Total order is capped at 2 (enough for second-order PDE residuals
// and the |s| <= 1 Sobolev systems).
struct DerivOp {
  enum class Kind { Identity, Partial, Mixed, Laplacian };
  Kind kind = Kind::Identity;
  int i = -1;  // Partial/Mixed first index
  int j = -1;  // Mixed second index

  static DerivOp identity() { return {}; }
  static DerivOp partial(int i) { return {Kind::Partial, i, -1}; }
  static DerivOp mixed(int i, int j) { return {Kind::Mixed, i, j}; }
  static DerivOp laplacian() { return {Kind::Laplacian, -1, -1}; }

  int order() const {
    switch (kind) {
      case Kind::Identity: return 0;
      case Kind::Partial: return 1;
      default: return 2;
    }
  }
};

struct MlpNet {
  std::vector<int> layer_dims;   // n_0 .. n_K
  std::vector<Matrix> weights;   // layer l: n_l x (n_{l-1}+1), bias folded in last column

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }

  int param_count() const {
    int p = 0;
    for (const auto& w : weights) p += static_cast<int>(w.size());
    return p;
  }

  // Flattening order: layer-major, then row-major within a layer.
  Vector flatten() const {
    Vector theta(param_count());
    int off = 0;
    for (const auto& w : weights) {
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) theta[off++] = w(r, c);
    }
    return theta;
  }

  void unflatten(const Vector& theta) {
    require(theta.size() == param_count(), "MlpNet::unflatten: size mismatch");
    int off = 0;
    for (auto& w : weights) {
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = theta[off++];
    }
  }

  void add_scaled(const Vector& d, double h) {
    Vector theta = flatten();
    theta += h * d;
    unflatten(theta);
  }

  static MlpNet zeros(std::vector<int> dims) {
    require(dims.size() >= 2, "MlpNet: need at least input and output dims");
    for (int n : dims) require(n > 0, "MlpNet: layer dims must be positive");
    MlpNet net;
    net.layer_dims = std::move(dims);
    for (size_t l = 1; l < net.layer_dims.size(); ++l)
      net.weights.push_back(Matrix::Zero(net.layer_dims[l], net.layer_dims[l - 1] + 1));
    return net;
  }

  // Xavier-uniform weights, zero biases, driven by a fixed-seed engine.
  static MlpNet seeded(std::vector<int> dims, uint64_t seed) {
    MlpNet net = zeros(std::move(dims));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (size_t l = 0; l < net.weights.size(); ++l) {
      const int fan_in = net.layer_dims[l];
      const int fan_out = net.layer_dims[l + 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (int r = 0; r < net.weights[l].rows(); ++r)
        for (int c = 0; c < net.weights[l].cols() - 1; ++c)
          net.weights[l](r, c) = bound * unif(rng);
    }
    return net;
  }
};

namespace detail {

inline double act(double s) { return std::tanh(s); }
inline double act_d1(double t) { return 1.0 - t * t; }            // from t = tanh(s)
inline double act_d2(double t) { return -2.0 * t * (1.0 - t * t); }
inline double act_d3(double t) {
  const double d1 = 1.0 - t * t;
  return -2.0 * d1 * d1 + 4.0 * t * t * d1;
}

// Second-order jet of every neuron in one layer with respect to the
// spatial input: values, gradients (rows), and Hessians stored as
// row-major d*d blocks per neuron.
struct LayerJet {
  Vector val;
  Matrix grad;  // n_l x d
  Matrix hess;  // n_l x d*d
};

struct ForwardTape {
  int order = 0;
  int dim = 0;
  std::vector<LayerJet> pre;   // pre-activation jets s_l, per layer
  std::vector<LayerJet> post;  // activated jets a_l; post[0] is the input jet
};

inline void forward_jets(const MlpNet& net, const Eigen::Ref<const Vector>& x,
                         int order, ForwardTape& tape) {
  require(x.size() == net.input_dim(), "forward: input dimension mismatch");
  const int d = net.input_dim();
  const int K = net.num_layers();
  tape.order = order;
  tape.dim = d;
  tape.pre.resize(K);
  tape.post.resize(K + 1);

  LayerJet& in = tape.post[0];
  in.val = x;
  if (order >= 1) in.grad = Matrix::Identity(d, d);
  if (order >= 2) in.hess = Matrix::Zero(d, d * d);

  for (int l = 0; l < K; ++l) {
    const Matrix& W = net.weights[l];
    const auto Wlin = W.leftCols(W.cols() - 1);
    const auto bias = W.col(W.cols() - 1);
    const LayerJet& a = tape.post[l];
    LayerJet& s = tape.pre[l];
    s.val = Wlin * a.val + bias;
    if (order >= 1) s.grad = Wlin * a.grad;
    if (order >= 2) s.hess = Wlin * a.hess;

    LayerJet& out = tape.post[l + 1];
    const bool last = (l == K - 1);
    if (last) {
      out = s;  // identity output activation
      continue;
    }
    const int n = static_cast<int>(s.val.size());
    out.val.resize(n);
    if (order >= 1) out.grad.resize(n, d);
    if (order >= 2) out.hess.resize(n, d * d);
    for (int r = 0; r < n; ++r) {
      const double t = act(s.val[r]);
      out.val[r] = t;
      if (order >= 1) {
        const double d1 = act_d1(t);
        out.grad.row(r) = d1 * s.grad.row(r);
        if (order >= 2) {
          const double d2 = act_d2(t);
          for (int c1 = 0; c1 < d; ++c1)
            for (int c2 = 0; c2 < d; ++c2)
              out.hess(r, c1 * d + c2) =
                  d1 * s.hess(r, c1 * d + c2) + d2 * s.grad(r, c1) * s.grad(r, c2);
        }
      }
    }
  }
}

// Adjoint state mirroring LayerJet.
struct JetAdjoint {
  Vector val;
  Matrix grad;
  Matrix hess;
  void zero(int n, int d, int order) {
    val = Vector::Zero(n);
    grad = order >= 1 ? Matrix::Zero(n, d) : Matrix();
    hess = order >= 2 ? Matrix::Zero(n, d * d) : Matrix();
  }
};

// Reverse sweep: given the adjoint of the output jet, accumulate the
// gradient with respect to the flattened parameters.
inline Vector backprop_jets(const MlpNet& net, const ForwardTape& tape,
                            JetAdjoint out_bar) {
  const int d = tape.dim;
  const int order = tape.order;
  const int K = net.num_layers();
  std::vector<Matrix> wbar(K);
  JetAdjoint s_bar = std::move(out_bar);  // adjoint of pre[K-1] (identity output)

  for (int l = K - 1; l >= 0; --l) {
    const Matrix& W = net.weights[l];
    const auto Wlin = W.leftCols(W.cols() - 1);
    const LayerJet& a = tape.post[l];
    const int n_in = static_cast<int>(a.val.size());

    // Parameter adjoint: sum of channelwise outer products.
    Matrix& wb = wbar[l];
    wb = Matrix::Zero(W.rows(), W.cols());
    wb.leftCols(n_in) += s_bar.val * a.val.transpose();
    wb.col(n_in) += s_bar.val;
    if (order >= 1) wb.leftCols(n_in) += s_bar.grad * a.grad.transpose();
    if (order >= 2) wb.leftCols(n_in) += s_bar.hess * a.hess.transpose();

    if (l == 0) break;

    JetAdjoint a_bar;
    a_bar.val = Wlin.transpose() * s_bar.val;
    if (order >= 1) a_bar.grad = Wlin.transpose() * s_bar.grad;
    if (order >= 2) a_bar.hess = Wlin.transpose() * s_bar.hess;

    // Pull the adjoint back through tanh of the previous layer.
    const LayerJet& sp = tape.pre[l - 1];
    const LayerJet& ap = tape.post[l];
    const int n = static_cast<int>(sp.val.size());
    JetAdjoint sp_bar;
    sp_bar.zero(n, d, order);
    for (int r = 0; r < n; ++r) {
      const double t = ap.val[r];
      const double d1 = act_d1(t);
      sp_bar.val[r] = d1 * a_bar.val[r];
      if (order >= 1) {
        const double d2 = act_d2(t);
        sp_bar.val[r] += d2 * sp.grad.row(r).dot(a_bar.grad.row(r));
        sp_bar.grad.row(r) = d1 * a_bar.grad.row(r);
        if (order >= 2) {
          const double d3 = act_d3(t);
          for (int c1 = 0; c1 < d; ++c1) {
            for (int c2 = 0; c2 < d; ++c2) {
              const double hb = a_bar.hess(r, c1 * d + c2);
              if (hb == 0.0) continue;
              sp_bar.val[r] += hb * (d2 * sp.hess(r, c1 * d + c2) +
                                     d3 * sp.grad(r, c1) * sp.grad(r, c2));
              sp_bar.grad(r, c1) += hb * d2 * sp.grad(r, c2);
              sp_bar.grad(r, c2) += hb * d2 * sp.grad(r, c1);
              sp_bar.hess(r, c1 * d + c2) += hb * d1;
            }
          }
        }
      }
    }
    s_bar = std::move(sp_bar);
  }

  Vector g(net.param_count());
  int off = 0;
  for (const auto& wb : wbar) {
    for (int r = 0; r < wb.rows(); ++r)
      for (int c = 0; c < wb.cols(); ++c) g[off++] = wb(r, c);
  }
  return g;
}

inline JetAdjoint seed_for_op(const DerivOp& op, int d, int order) {
  JetAdjoint bar;
  bar.zero(1, d, order);
  switch (op.kind) {
    case DerivOp::Kind::Identity:
      bar.val[0] = 1.0;
      break;
    case DerivOp::Kind::Partial:
      require(op.i >= 0 && op.i < d, "DerivOp: partial index out of range");
      bar.grad(0, op.i) = 1.0;
      break;
    case DerivOp::Kind::Mixed:
      require(op.i >= 0 && op.i < d && op.j >= 0 && op.j < d,
              "DerivOp: mixed index out of range");
      bar.hess(0, op.i * d + op.j) = 1.0;
      break;
    case DerivOp::Kind::Laplacian:
      for (int c = 0; c < d; ++c) bar.hess(0, c * d + c) = 1.0;
      break;
  }
  return bar;
}

inline double apply_op(const DerivOp& op, const LayerJet& out, int d) {
  switch (op.kind) {
    case DerivOp::Kind::Identity: return out.val[0];
    case DerivOp::Kind::Partial: return out.grad(0, op.i);
    case DerivOp::Kind::Mixed: return out.hess(0, op.i * d + op.j);
    case DerivOp::Kind::Laplacian: {
      double tr = 0.0;
      for (int c = 0; c < d; ++c) tr += out.hess(0, c * d + c);
      return tr;
    }
  }
  return 0.0;
}

}  // namespace detail

inline Vector forward(const MlpNet& net, const Eigen::Ref<const Vector>& x) {
  detail::ForwardTape tape;
  detail::forward_jets(net, x, 0, tape);
  return tape.post.back().val;
}

struct SpatialDerivs {
  Vector value;               // m
  Matrix gradient;            // m x d
  std::vector<Matrix> hessian;  // per output, d x d, symmetric
};

inline SpatialDerivs spatial_derivs(const MlpNet& net, const Eigen::Ref<const Vector>& x) {
  detail::ForwardTape tape;
  detail::forward_jets(net, x, 2, tape);
  const auto& out = tape.post.back();
  const int d = net.input_dim();
  const int m = net.output_dim();
  SpatialDerivs sd;
  sd.value = out.val;
  sd.gradient = out.grad;
  sd.hessian.resize(m);
  for (int r = 0; r < m; ++r) {
    Matrix h(d, d);
    for (int c1 = 0; c1 < d; ++c1)
      for (int c2 = 0; c2 < d; ++c2) h(c1, c2) = out.hess(r, c1 * d + c2);
    sd.hessian[r] = 0.5 * (h + h.transpose());
  }
  return sd;
}

// Scalar observable (op o net)(x) for a scalar-output net.
inline double eval_op(const MlpNet& net, const Eigen::Ref<const Vector>& x,
                      const DerivOp& op) {
  require(net.output_dim() == 1, "eval_op: scalar output expected");
  detail::ForwardTape tape;
  detail::forward_jets(net, x, op.order(), tape);
  return detail::apply_op(op, tape.post.back(), net.input_dim());
}

// Gradient of (op o net)(x_j) with respect to the flattened parameters,
// one row per sample.
inline Matrix param_jacobian(const MlpNet& net, const Matrix& xs, const DerivOp& op) {
  require(net.output_dim() == 1, "param_jacobian: scalar output expected");
  require(xs.cols() == net.input_dim(), "param_jacobian: sample dimension mismatch");
  const int n = static_cast<int>(xs.rows());
  const int order = op.order();
  Matrix J(n, net.param_count());
  detail::ForwardTape tape;
  for (int j = 0; j < n; ++j) {
    detail::forward_jets(net, xs.row(j).transpose(), order, tape);
    J.row(j) = detail::backprop_jets(
        net, tape, detail::seed_for_op(op, net.input_dim(), order));
  }
  return J;
}

inline Vector param_grad_at(const MlpNet& net, const Eigen::Ref<const Vector>& x,
                            const DerivOp& op) {
  detail::ForwardTape tape;
  detail::forward_jets(net, x, op.order(), tape);
  return detail::backprop_jets(net, tape,
                               detail::seed_for_op(op, net.input_dim(), op.order()));
}

// Per-layer gradient factorization of the value observable:
// row i of the layer-l parameter gradient equals the outer product of the
// output sensitivity g_l^i with the augmented input activation a_{l-1}^i.
// Only the identity observable admits this single-channel form; spatial
// derivative observables pull back through extra jet channels.
struct LayerFactors {
  std::vector<Matrix> input_acts;    // per layer: n x (n_{l-1}+1)
  std::vector<Matrix> out_sens;      // per layer: n x n_l
};

inline LayerFactors layer_factors(const MlpNet& net, const Matrix& xs, const DerivOp& op) {
  require(net.output_dim() == 1, "layer_factors: scalar output expected");
  require(xs.rows() > 0, "layer_factors: empty batch");
  if (op.kind != DerivOp::Kind::Identity)
    throw CapabilityError("layer_factors: only the identity observable factorizes");
  const int n = static_cast<int>(xs.rows());
  const int K = net.num_layers();
  LayerFactors lf;
  lf.input_acts.resize(K);
  lf.out_sens.resize(K);
  for (int l = 0; l < K; ++l) {
    lf.input_acts[l].resize(n, net.layer_dims[l] + 1);
    lf.out_sens[l].resize(n, net.layer_dims[l + 1]);
  }
  detail::ForwardTape tape;
  for (int i = 0; i < n; ++i) {
    detail::forward_jets(net, xs.row(i).transpose(), 0, tape);
    // Backprop sensitivities g_l = d out / d s_l.
    Vector g = Vector::Ones(1);
    for (int l = K - 1; l >= 0; --l) {
      lf.input_acts[l].row(i).head(net.layer_dims[l]) = tape.post[l].val;
      lf.input_acts[l](i, net.layer_dims[l]) = 1.0;
      lf.out_sens[l].row(i) = g;
      if (l == 0) break;
      const Matrix& W = net.weights[l];
      Vector a_bar = W.leftCols(W.cols() - 1).transpose() * g;
      g.resize(net.layer_dims[l]);
      for (int r = 0; r < net.layer_dims[l]; ++r)
        g[r] = detail::act_d1(tape.post[l].val[r]) * a_bar[r];
    }
  }
  return lf;
}

// JSON checkpoint: layer_dims + row-major weight arrays.
inline void save_checkpoint(const MlpNet& net, const std::string& path, uint64_t seed = 0) {
  nlohmann::json j;
  j["layer_dims"] = net.layer_dims;
  j["seed"] = seed;
  std::vector<std::vector<double>> ws;
  for (const auto& w : net.weights) {
    std::vector<double> flat;
    flat.reserve(w.size());
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    ws.push_back(std::move(flat));
  }
  j["weights"] = ws;
  std::ofstream out(path);
  require(out.good(), "save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline MlpNet load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  MlpNet net = MlpNet::zeros(j.at("layer_dims").get<std::vector<int>>());
  const auto ws = j.at("weights").get<std::vector<std::vector<double>>>();
  require(ws.size() == net.weights.size(), "load_checkpoint: layer count mismatch");
  for (size_t l = 0; l < ws.size(); ++l) {
    auto& w = net.weights[l];
    require(static_cast<int>(ws[l].size()) == w.size(),
            "load_checkpoint: weight size mismatch");
    size_t k = 0;
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = ws[l][k++];
  }
  return net;
}

}  // namespace angd
