#include <catch_amalgamated.hpp>

#include <random>

#include "angd/linsolve.hpp"

using namespace angd;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

Vector random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

// SVD pseudo-inverse oracle for the min-norm solution of O d = b.
Vector pinv_solve(const Matrix& O, const Vector& b) {
  Eigen::JacobiSVD<Matrix> svd(O, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = sv.maxCoeff() * 1e-12;
  Vector inv(sv.size());
  for (int i = 0; i < sv.size(); ++i) inv[i] = sv[i] > cutoff ? 1.0 / sv[i] : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * b;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace

TEST_CASE("damped normal solve matches a dense reference") {
  std::mt19937_64 rng(1);
  const Matrix R = random_matrix(12, 8, rng);
  const Matrix gram = R.transpose() * R / 12.0;
  const Vector v = random_vector(8, rng);
  const double lambda = 1e-3;
  const Vector d = normal_solve(gram, v, lambda);
  Matrix M = gram;
  M.diagonal().array() += lambda;
  REQUIRE((M * d - v).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("row-form normal solve agrees across the Woodbury threshold") {
  std::mt19937_64 rng(2);
  for (auto [r, p] : std::vector<std::pair<int, int>>{{5, 40}, {20, 50}, {30, 20}}) {
    const Matrix rows = random_matrix(r, p, rng);
    const Vector v = random_vector(p, rng);
    const double lambda = 1e-4;
    const int n = r;
    const Vector fast = normal_solve_rows(rows, v, n, lambda);
    Matrix M = rows.transpose() * rows / n;
    M.diagonal().array() += lambda;
    const Vector dense = M.ldlt().solve(v);
    REQUIRE((fast - dense).cwiseAbs().maxCoeff() /
                std::max(1.0, dense.cwiseAbs().maxCoeff()) <
            1e-9);
  }
}

TEST_CASE("undamped min-norm solve matches the SVD pseudo-inverse") {
  std::mt19937_64 rng(3);
  for (auto [n, p] : std::vector<std::pair<int, int>>{{5, 20}, {8, 40}, {40, 10}}) {
    const Matrix O = random_matrix(n, p, rng);
    const Vector b = random_vector(n, rng);
    const Vector d = gram_min_norm_solve(O, b, 0.0);
    const Vector oracle = pinv_solve(O, b);
    REQUIRE((d - oracle).cwiseAbs().maxCoeff() /
                std::max(1.0, oracle.cwiseAbs().maxCoeff()) <
            1e-8);
  }
}

TEST_CASE("projected momentum keeps the row-space residual and adds only null space") {
  std::mt19937_64 rng(4);
  const Matrix O = random_matrix(6, 25, rng);
  const Vector b = random_vector(6, rng);
  const Vector d_prev = random_vector(25, rng);
  const double eta = 0.7;
  const Vector d = projected_momentum_solve(O, b, d_prev, eta, 0.0);
  REQUIRE((O * d - b).norm() <= 1e-10 * b.norm());
  // The added component is orthogonal to the row space: O (d - d_minnorm) = 0.
  const Vector d0 = projected_momentum_solve(O, b, d_prev, 0.0, 0.0);
  REQUIRE((O * (d - d0)).cwiseAbs().maxCoeff() < 1e-10);
  // eta = 0 reduces to the plain min-norm solve.
  REQUIRE((d0 - gram_min_norm_solve(O, b, 0.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projected momentum p x p route agrees with the row-space route") {
  std::mt19937_64 rng(5);
  const Matrix O = random_matrix(30, 10, rng);  // n > p triggers the p x p path
  const Vector b = random_vector(30, rng);
  const Vector d_prev = random_vector(10, rng);
  const Vector d = projected_momentum_solve(O, b, d_prev, 0.5, 1e-8);
  // Reference through the explicit n x n route.
  Matrix K = O * O.transpose();
  K.diagonal().array() += 1e-8;
  Eigen::LDLT<Matrix> ldlt(K);
  Vector ref = O.transpose() * ldlt.solve(b);
  ref += 0.5 * (d_prev - O.transpose() * ldlt.solve(O * d_prev));
  REQUIRE((d - ref).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("stronger damping monotonically shrinks the solution") {
  std::mt19937_64 rng(6);
  const Matrix O = random_matrix(10, 30, rng);
  const Vector b = random_vector(10, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-6, 1e-3, 1e-1, 10.0}) {
    const double norm = gram_min_norm_solve(O, b, lambda).norm();
    REQUIRE(norm < prev);
    prev = norm;
  }
}

TEST_CASE("kfac solve equals the dense Kronecker-block solve") {
  std::mt19937_64 rng(7);
  // Two layers with widths <= 6.
  KfacFactors kf;
  std::vector<std::pair<int, int>> shapes{{4, 3}, {1, 5}};  // (rows=n_l, cols=aug in)
  int p = 0;
  for (auto [r, c] : shapes) {
    const Matrix Ra = random_matrix(8, c, rng);
    const Matrix Rs = random_matrix(8, r, rng);
    kf.A.push_back(Ra.transpose() * Ra / 8.0);
    kf.S.push_back(Rs.transpose() * Rs / 8.0);
    p += r * c;
  }
  const Vector v = random_vector(p, rng);
  const double lambda = 1e-3;
  const Vector d = kfac_solve(kf, v, lambda);

  // Dense oracle: block-diagonal (S~ kron A~) acting on row-major vec.
  int off = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto [r, c] = shapes[l];
    Matrix At = kf.A[l];
    At.diagonal().array() += std::sqrt(lambda);
    Matrix St = kf.S[l];
    St.diagonal().array() += std::sqrt(lambda);
    const Matrix G = kron(St, At);  // row-major vec(V) = kron(S, A) ordering
    const Vector dl = G.ldlt().solve(v.segment(off, r * c));
    REQUIRE((d.segment(off, r * c) - dl).cwiseAbs().maxCoeff() /
                std::max(1.0, dl.cwiseAbs().maxCoeff()) <
            1e-8);
    off += r * c;
  }
}

TEST_CASE("row-major vec identity: (S kron A) vec(V) = vec(S V A^T)") {
  std::mt19937_64 rng(8);
  const Matrix S = random_matrix(3, 3, rng);
  const Matrix A = random_matrix(4, 4, rng);
  const Matrix V = random_matrix(3, 4, rng);
  Vector vec(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) vec[r * 4 + c] = V(r, c);
  const Vector lhs = kron(S, A) * vec;
  const Matrix W = S * V * A.transpose();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      REQUIRE_THAT(lhs[r * 4 + c], Catch::Matchers::WithinAbs(W(r, c), 1e-12));
}

TEST_CASE("kfac is exact on rank-one factors") {
  std::mt19937_64 rng(9);
  // With n = 1 sample, A and S are rank-one and G = A kron S exactly
  // represents the gram of the single gradient row; with lambda = 0 and
  // an invertible surrogate we instead check the identity-factor case.
  KfacFactors kf;
  kf.A.push_back(Matrix::Identity(4, 4));
  kf.S.push_back(Matrix::Identity(2, 2));
  const Vector v = random_vector(8, rng);
  REQUIRE((kfac_solve(kf, v, 0.0) - v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("solver input validation") {
  REQUIRE_THROWS_AS(normal_solve(Matrix::Zero(3, 2), Vector::Zero(2), 0.1),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(normal_solve(Matrix::Zero(2, 2), Vector::Zero(2), -1.0),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      projected_momentum_solve(Matrix::Zero(2, 3), Vector::Zero(2),
                               Vector::Zero(3), 1.5, 0.0),
      std::invalid_argument);
  SolveConfig bad;
  bad.momentum = -0.1;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
