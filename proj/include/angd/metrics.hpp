#pragma once

// Per-metric assembly of the iteration linear system O_k d_k = b_k or its
// preconditioned surrogate (Gram + right-hand side v_k). Builders are pure
// in (net, batch, state); batch reductions run in fixed order.

#include <vector>

#include "angd/core.hpp"
#include "angd/density.hpp"
#include "angd/linsolve.hpp"
#include "angd/net.hpp"

namespace angd {

struct MetricKind {
  enum class Tag { L2, Hs, FisherRao, Wasserstein2 } tag = Tag::L2;
  int s = 0;  // Sobolev order for Hs, restricted to {-1, 0, 1}

  static MetricKind l2() { return {Tag::L2, 0}; }
  static MetricKind hs(int s) {
    require(s >= -1 && s <= 1, "MetricKind: Hs restricted to s in {-1,0,1}");
    return {Tag::Hs, s};
  }
  static MetricKind fisher_rao() { return {Tag::FisherRao, 0}; }
  static MetricKind wasserstein2() { return {Tag::Wasserstein2, 0}; }
};

// Assembled system for one iteration. Two forms:
//  - preconditioned: Gram = gram_rows^T gram_rows / n acts on rhs_v in R^p;
//  - direct row-space: solve O d = b through O O^T (min-norm family).
struct TangentSystem {
  enum class GramSpec { GramOverN, RowSpace };
  GramSpec gram_spec = GramSpec::GramOverN;
  Matrix O;          // n x p rows of the A-map parameter Jacobian
  Matrix gram_rows;  // stacked rows defining the Gram (GramOverN form)
  Vector rhs_v;      // R^p (GramOverN form)
  Vector b;          // R^n (RowSpace form)
  int n = 0;
};

// Derivative set D^1 = {identity, d/dx_1, ..., d/dx_d}, in this fixed order.
inline std::vector<DerivOp> first_order_ops(int dim) {
  std::vector<DerivOp> ops{DerivOp::identity()};
  for (int c = 0; c < dim; ++c) ops.push_back(DerivOp::partial(c));
  return ops;
}

// L2: B_k = O_k, Gram = O^T O / n, rhs supplied by the optimizer recurrence.
inline TangentSystem build_l2_system(const MlpNet& net, const Matrix& batch,
                                     const Vector& v) {
  require(v.size() == net.param_count(), "build_l2_system: rhs size mismatch");
  TangentSystem sys;
  sys.O = param_jacobian(net, batch, DerivOp::identity());
  sys.gram_rows = sys.O;
  sys.rhs_v = v;
  sys.n = static_cast<int>(batch.rows());
  check_finite(sys.O, "build_l2_system");
  return sys;
}

// H^s, s = +1: Gram = (1/n) sum_{D in D^1} (B^D)^T B^D, rhs v = (1/n) O^T z
// with z the sampled values of (Psi_k - beta_k dL/drho).
inline TangentSystem build_hs_pos_system(const MlpNet& net, const Matrix& batch,
                                         const Vector& z, int s = 1) {
  require(s == 0 || s == 1, "build_hs_pos_system: s in {0,1}");
  require(z.size() == batch.rows(), "build_hs_pos_system: z size mismatch");
  TangentSystem sys;
  sys.n = static_cast<int>(batch.rows());
  sys.O = param_jacobian(net, batch, DerivOp::identity());
  if (s == 0) {
    sys.gram_rows = sys.O;
  } else {
    const auto ops = first_order_ops(net.input_dim());
    sys.gram_rows.resize(static_cast<Eigen::Index>(ops.size()) * sys.n,
                         net.param_count());
    sys.gram_rows.topRows(sys.n) = sys.O;
    for (size_t i = 1; i < ops.size(); ++i)
      sys.gram_rows.middleRows(static_cast<Eigen::Index>(i) * sys.n, sys.n) =
          param_jacobian(net, batch, ops[i]);
  }
  sys.rhs_v = sys.O.transpose() * z / sys.n;
  return sys;
}

// H^s, s = -1: Gram = O^T O / n, rhs v = (1/n) sum_D (B^D)^T z^D with z^D the
// sampled values of D(Psi_k - beta_k dL/drho), D running over D^1 in order.
inline TangentSystem build_hs_neg_system(const MlpNet& net, const Matrix& batch,
                                         const std::vector<Vector>& zD, int s = -1) {
  require(s == -1 || s == 0, "build_hs_neg_system: s in {-1,0}");
  const auto ops = first_order_ops(net.input_dim());
  const size_t want = (s == 0) ? 1 : ops.size();
  require(zD.size() == want, "build_hs_neg_system: need one z vector per D");
  TangentSystem sys;
  sys.n = static_cast<int>(batch.rows());
  sys.O = param_jacobian(net, batch, DerivOp::identity());
  sys.gram_rows = sys.O;
  sys.rhs_v = Vector::Zero(net.param_count());
  for (size_t i = 0; i < want; ++i) {
    require(zD[i].size() == sys.n, "build_hs_neg_system: z^D size mismatch");
    const Matrix B = (i == 0) ? sys.O : param_jacobian(net, batch, ops[i]);
    sys.rhs_v += B.transpose() * zD[i] / sys.n;
  }
  return sys;
}

inline Matrix centered_scores(const LogDensityModel& model, const Matrix& batch) {
  const int n = static_cast<int>(batch.rows());
  Matrix O(n, model.param_count());
  for (int i = 0; i < n; ++i) O.row(i) = model.score(batch.row(i).transpose());
  const Vector mean = O.colwise().mean();
  O.rowwise() -= mean.transpose();
  return O;
}

// Fisher-Rao: O = centered scores, b = Phi-bar (already centered), solved in
// row space (min-norm / projected momentum).
inline TangentSystem build_fisher_rao_system(const LogDensityModel& model,
                                             const Matrix& batch,
                                             const Vector& phi_bar) {
  require(batch.rows() >= 2, "build_fisher_rao_system: batch of n >= 2 required");
  require(phi_bar.size() == batch.rows(), "build_fisher_rao_system: b size mismatch");
  TangentSystem sys;
  sys.gram_spec = TangentSystem::GramSpec::RowSpace;
  sys.n = static_cast<int>(batch.rows());
  sys.O = centered_scores(model, batch);
  sys.b = phi_bar;
  check_finite(sys.O, "build_fisher_rao_system");
  return sys;
}

// Wasserstein-2 (beta == 0 regime): Gram = O^T O / n over score rows,
// rhs v = (1/n) sum_i d_theta <nabla_x log rho(x^i), V^i> computed
// analytically through mixed derivatives.
inline TangentSystem build_w2_system(const LogDensityModel& model, const Matrix& batch,
                                     const Matrix& V) {
  require(V.rows() == batch.rows() && V.cols() == model.dim(),
          "build_w2_system: velocity shape mismatch");
  TangentSystem sys;
  sys.n = static_cast<int>(batch.rows());
  sys.O = centered_scores(model, batch);
  sys.gram_rows = sys.O;
  sys.rhs_v = Vector::Zero(model.param_count());
  for (int i = 0; i < sys.n; ++i)
    sys.rhs_v += model.mixed_grad(batch.row(i).transpose(), V.row(i).transpose());
  sys.rhs_v /= sys.n;
  return sys;
}

// The Tikhonov lambda a config prescribes for a given system; relative
// damping scales by the mean Gram eigenvalue trace(Gram)/p.
inline double effective_damping(const TangentSystem& sys, const SolveConfig& cfg) {
  if (!cfg.relative_damping) return cfg.damping;
  if (sys.gram_spec == TangentSystem::GramSpec::RowSpace)
    return cfg.damping * sys.O.squaredNorm() / sys.O.cols();
  return cfg.damping * sys.gram_rows.squaredNorm() /
         (static_cast<double>(sys.n) * sys.gram_rows.cols());
}

// Dispatches a tangent system to the matching solver.
inline Vector solve_system(const TangentSystem& sys, const SolveConfig& cfg,
                           const Vector& d_prev = Vector(),
                           double* lambda_out = nullptr) {
  cfg.validate();
  const double lambda = effective_damping(sys, cfg);
  if (lambda_out) *lambda_out = lambda;
  if (sys.gram_spec == TangentSystem::GramSpec::RowSpace) {
    if (cfg.tag == SolveConfig::Tag::ProjectedMomentum) {
      Vector prev = d_prev.size() ? d_prev : Vector::Zero(sys.O.cols());
      return projected_momentum_solve(sys.O, sys.b, prev, cfg.momentum, lambda);
    }
    return gram_min_norm_solve(sys.O, sys.b, lambda);
  }
  return normal_solve_rows(sys.gram_rows, sys.rhs_v, sys.n, lambda);
}

}  // namespace angd
