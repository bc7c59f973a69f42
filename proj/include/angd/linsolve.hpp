#pragma once

// Per-iteration solvers for the underdetermined tangent systems:
// damped normal equations, Gram min-norm, projected momentum, and the
// layer-blocked Kronecker (KFAC) solve.

#include <vector>

#include "angd/core.hpp"

namespace angd {

struct SolveConfig {
  double damping = 1e-4;   // Tikhonov lambda added to the Gram
  double momentum = 0.0;   // eta in [0,1) for the projected-momentum solve
  // When set, `damping` is relative: the lambda actually applied is
  // damping * trace(Gram) / p, recomputed (and reported) every step.
  bool relative_damping = false;
  enum class Tag { Normal, GramMinNorm, ProjectedMomentum, Kfac } tag = Tag::Normal;

  void validate() const {
    require(damping >= 0.0, "SolveConfig: damping must be nonnegative");
    require(momentum >= 0.0 && momentum < 1.0, "SolveConfig: momentum in [0,1)");
  }
};

namespace detail {

// Symmetric positive (semi-)definite solve; Cholesky first, eigendecomposition
// fallback when the factorization fails.
inline Matrix spd_solve(const Matrix& M, const Matrix& rhs) {
  check_finite(M, "spd_solve");
  check_finite(rhs, "spd_solve rhs");
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M);
  if (eig.info() != Eigen::Success)
    throw NumericError("spd_solve: factorization failed (size " +
                       std::to_string(M.rows()) + ")");
  const Vector& ev = eig.eigenvalues();
  const double cutoff = std::max(ev.cwiseAbs().maxCoeff(), 1.0) * 1e-14;
  Vector inv(ev.size());
  for (int i = 0; i < ev.size(); ++i) inv[i] = ev[i] > cutoff ? 1.0 / ev[i] : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * rhs;
}

}  // namespace detail

// Solves (gram + lambda I) d = v for an explicit p x p PSD gram.
inline Vector normal_solve(const Matrix& gram, const Vector& v, double lambda) {
  require(gram.rows() == gram.cols() && gram.rows() == v.size(),
          "normal_solve: dimension mismatch");
  require(lambda >= 0.0, "normal_solve: lambda must be nonnegative");
  Matrix M = gram;
  M.diagonal().array() += lambda;
  return detail::spd_solve(M, v);
}

// Solves (R^T R / n + lambda I) d = v given the stacked rows R (r x p)
// without forming the p x p Gram when r << p (Woodbury route). The two
// routes agree exactly, so the choice is observationally neutral.
inline Vector normal_solve_rows(const Matrix& rows, const Vector& v, int n_samples,
                                double lambda) {
  require(rows.cols() == v.size(), "normal_solve_rows: dimension mismatch");
  require(n_samples > 0, "normal_solve_rows: empty batch");
  const int r = static_cast<int>(rows.rows());
  const int p = static_cast<int>(rows.cols());
  if (lambda > 0.0 && 4 * r < p) {
    Matrix K = rows * rows.transpose();
    K.diagonal().array() += static_cast<double>(n_samples) * lambda;
    const Vector t = detail::spd_solve(K, rows * v);
    return (v - rows.transpose() * t) / lambda;
  }
  Matrix gram = rows.transpose() * rows / n_samples;
  return normal_solve(gram, v, lambda);
}

// Min-norm solution of O d = b: d = O^T (O O^T + lambda I)^{-1} b, with
// the algebraically identical p x p route when p < n.
inline Vector gram_min_norm_solve(const Matrix& O, const Vector& b, double lambda) {
  require(O.rows() == b.size(), "gram_min_norm_solve: dimension mismatch");
  const int n = static_cast<int>(O.rows());
  const int p = static_cast<int>(O.cols());
  if (n <= p) {
    Matrix K = O * O.transpose();
    K.diagonal().array() += lambda;
    return O.transpose() * detail::spd_solve(K, b);
  }
  Matrix M = O.transpose() * O;
  M.diagonal().array() += lambda;
  return detail::spd_solve(M, O.transpose() * b);
}

// Min-norm solution plus the null-space projection of the previous
// direction scaled by eta.
inline Vector projected_momentum_solve(const Matrix& O, const Vector& b,
                                       const Vector& d_prev, double eta, double lambda) {
  require(eta >= 0.0 && eta < 1.0, "projected_momentum_solve: eta in [0,1)");
  require(O.cols() == d_prev.size(), "projected_momentum_solve: d_prev size mismatch");
  const int n = static_cast<int>(O.rows());
  const int p = static_cast<int>(O.cols());
  if (n <= p) {
    Matrix K = O * O.transpose();
    K.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(K);
    Vector d;
    if (llt.info() == Eigen::Success) {
      d = O.transpose() * llt.solve(b);
      if (eta > 0.0)
        d += eta * (d_prev - O.transpose() * llt.solve(O * d_prev));
    } else {
      d = O.transpose() * detail::spd_solve(K, b);
      if (eta > 0.0)
        d += eta * (d_prev - O.transpose() * detail::spd_solve(K, O * d_prev));
    }
    return d;
  }
  Matrix M = O.transpose() * O;
  M.diagonal().array() += lambda;
  Vector d = detail::spd_solve(M, O.transpose() * b);
  if (eta > 0.0) d += eta * (d_prev - detail::spd_solve(M, O.transpose() * (O * d_prev)));
  return d;
}

// Kronecker layer factors: A_{l-1} = (1/n) sum a a^T over the augmented
// input activations, S_l = (1/n) sum g g^T over the output sensitivities.
struct KfacFactors {
  std::vector<Matrix> A;  // per layer, (n_{l-1}+1) x (n_{l-1}+1)
  std::vector<Matrix> S;  // per layer, n_l x n_l
};

// Block solve d^(l) = vec( S~^{-1} V_l A~^{-1} ) with the symmetric
// pi = 1 damping split A + pi sqrt(lambda) I, S + sqrt(lambda)/pi I.
// V_l is the layer-shaped (row-major) reshape of v; block order follows
// the network's layer order.
inline Vector kfac_solve(const KfacFactors& factors, const Vector& v, double lambda,
                         double pi = 1.0) {
  require(factors.A.size() == factors.S.size(), "kfac_solve: factor count mismatch");
  require(lambda >= 0.0 && pi > 0.0, "kfac_solve: bad damping");
  const double root = std::sqrt(lambda);
  Vector d(v.size());
  int off = 0;
  for (size_t l = 0; l < factors.A.size(); ++l) {
    const int cols = static_cast<int>(factors.A[l].rows());
    const int rows = static_cast<int>(factors.S[l].rows());
    require(off + rows * cols <= v.size(), "kfac_solve: v too short");
    Matrix At = factors.A[l];
    At.diagonal().array() += pi * root;
    Matrix St = factors.S[l];
    St.diagonal().array() += root / pi;
    Matrix V(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) V(r, c) = v[off + r * cols + c];
    // S~^{-1} V A~^{-1}
    Matrix X = detail::spd_solve(St, V);
    Matrix D = detail::spd_solve(At, X.transpose()).transpose();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) d[off + r * cols + c] = D(r, c);
    off += rows * cols;
  }
  require(off == v.size(), "kfac_solve: v length does not match factors");
  return d;
}

}  // namespace angd
