#include <catch_amalgamated.hpp>

#include "angd/metrics.hpp"

using namespace angd;

namespace {

Matrix random_batch(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = normal(rng);
  return m;
}

Vector random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

TEST_CASE("L2 system: Gram rows are the value Jacobian, rhs passes through") {
  std::mt19937_64 rng(1);
  MlpNet net = MlpNet::seeded({1, 6, 1}, 4);
  const Matrix batch = random_batch(5, 1, rng);
  const Vector v = random_vector(net.param_count(), rng);
  const TangentSystem sys = build_l2_system(net, batch, v);
  REQUIRE(sys.n == 5);
  REQUIRE((sys.gram_rows - param_jacobian(net, batch, DerivOp::identity()))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  REQUIRE((sys.rhs_v - v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("H^1 Gram stacks the D^1 derivative rows in fixed order") {
  std::mt19937_64 rng(2);
  MlpNet net = MlpNet::seeded({2, 5, 1}, 8);
  const Matrix batch = random_batch(4, 2, rng);
  const Vector z = random_vector(4, rng);
  const TangentSystem sys = build_hs_pos_system(net, batch, z, 1);
  REQUIRE(sys.gram_rows.rows() == 3 * 4);  // identity + d/dx_0 + d/dx_1
  REQUIRE((sys.gram_rows.middleRows(4, 4) -
           param_jacobian(net, batch, DerivOp::partial(0)))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  REQUIRE((sys.rhs_v - sys.O.transpose() * z / 4.0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("H^s degenerates to L2 at s = 0") {
  std::mt19937_64 rng(3);
  MlpNet net = MlpNet::seeded({1, 5, 1}, 2);
  const Matrix batch = random_batch(6, 1, rng);
  const Vector z = random_vector(6, rng);
  const TangentSystem pos = build_hs_pos_system(net, batch, z, 0);
  const TangentSystem neg = build_hs_neg_system(net, batch, {z}, 0);
  const TangentSystem l2 = build_l2_system(net, batch, pos.rhs_v);
  REQUIRE((pos.gram_rows - l2.gram_rows).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((neg.gram_rows - l2.gram_rows).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((neg.rhs_v - pos.rhs_v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("H^{-1} rhs sums per-derivative contributions") {
  std::mt19937_64 rng(4);
  MlpNet net = MlpNet::seeded({1, 4, 1}, 6);
  const Matrix batch = random_batch(5, 1, rng);
  const Vector z0 = random_vector(5, rng);
  const Vector z1 = random_vector(5, rng);
  const TangentSystem sys = build_hs_neg_system(net, batch, {z0, z1}, -1);
  const Matrix O = param_jacobian(net, batch, DerivOp::identity());
  const Matrix B1 = param_jacobian(net, batch, DerivOp::partial(0));
  const Vector want = (O.transpose() * z0 + B1.transpose() * z1) / 5.0;
  REQUIRE((sys.rhs_v - want).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE((sys.gram_rows - O).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("centered scores have zero column means") {
  GaussianMeanDensity model((Vector(2) << 0.4, -1.2).finished());
  std::mt19937_64 rng(5);
  const Matrix batch = random_batch(50, 2, rng);
  const Matrix O = centered_scores(model, batch);
  REQUIRE(O.colwise().mean().cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("Fisher-Rao system wants at least two particles and a matching b") {
  GaussianMeanDensity model(Vector::Zero(1));
  Matrix one(1, 1);
  one << 0.3;
  REQUIRE_THROWS_AS(build_fisher_rao_system(model, one, Vector::Zero(1)),
                    std::invalid_argument);
  std::mt19937_64 rng(6);
  const Matrix batch = random_batch(8, 1, rng);
  REQUIRE_THROWS_AS(build_fisher_rao_system(model, batch, Vector::Zero(3)),
                    std::invalid_argument);
  const TangentSystem sys =
      build_fisher_rao_system(model, batch, random_vector(8, rng));
  REQUIRE(sys.gram_spec == TangentSystem::GramSpec::RowSpace);
}

TEST_CASE("W2 rhs for the Gaussian-mean family is the velocity average") {
  // mixed_grad is V itself for N(theta, I), so rhs = mean of the rows of V.
  GaussianMeanDensity model((Vector(2) << 0.0, 0.0).finished());
  std::mt19937_64 rng(7);
  const Matrix batch = random_batch(9, 2, rng);
  const Matrix V = random_batch(9, 2, rng);
  const TangentSystem sys = build_w2_system(model, batch, V);
  const Vector want = V.colwise().mean();
  REQUIRE((sys.rhs_v - want).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("relative damping scales with the mean Gram eigenvalue") {
  std::mt19937_64 rng(8);
  MlpNet net = MlpNet::seeded({1, 4, 1}, 3);
  const Matrix batch = random_batch(6, 1, rng);
  TangentSystem sys = build_l2_system(net, batch, Vector::Zero(net.param_count()));
  SolveConfig cfg;
  cfg.damping = 1e-4;
  cfg.relative_damping = true;
  const double trace = (sys.gram_rows.transpose() * sys.gram_rows / sys.n).trace();
  REQUIRE_THAT(effective_damping(sys, cfg),
               Catch::Matchers::WithinRel(1e-4 * trace / net.param_count(), 1e-12));
  cfg.relative_damping = false;
  REQUIRE(effective_damping(sys, cfg) == 1e-4);
}

TEST_CASE("solve_system residual check across dispatch targets") {
  std::mt19937_64 rng(9);
  MlpNet net = MlpNet::seeded({1, 8, 1}, 10);
  const Matrix batch = random_batch(5, 1, rng);
  const int p = net.param_count();

  SECTION("normal path solves the damped Gram system") {
    const Vector v = random_vector(p, rng);
    TangentSystem sys = build_l2_system(net, batch, v);
    SolveConfig cfg;
    cfg.damping = 1e-3;
    const Vector d = solve_system(sys, cfg);
    const Matrix gram = sys.gram_rows.transpose() * sys.gram_rows / sys.n;
    REQUIRE(((gram + 1e-3 * Matrix::Identity(p, p)) * d - v).cwiseAbs().maxCoeff() <
            1e-9);
  }

  SECTION("row-space path solves O d = b") {
    GaussianMeanDensity model(Vector::Zero(2));
    const Matrix particles = random_batch(6, 2, rng);
    Vector b = random_vector(6, rng);
    b.array() -= b.mean();
    // Project b onto the range of O so the min-norm solve can reach it.
    TangentSystem sys = build_fisher_rao_system(model, particles, b);
    SolveConfig cfg;
    cfg.damping = 0.0;
    cfg.tag = SolveConfig::Tag::GramMinNorm;
    const Vector d = solve_system(sys, cfg);
    // Residual orthogonal to the range: O O^+ b is the best approximation.
    const Vector resid = sys.O * d - sys.b;
    REQUIRE((sys.O.transpose() * resid).cwiseAbs().maxCoeff() < 1e-9);
  }
}
