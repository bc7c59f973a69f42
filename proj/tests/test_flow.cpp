#include <catch_amalgamated.hpp>

#include "angd/flow.hpp"

using namespace angd;

namespace {

const auto quad_f = [](const Vector& x) { return 0.5 * x.squaredNorm(); };
const auto quad_g = [](const Vector& x) { return x; };

FlowCoeffs nesterov_like() {
  FlowCoeffs c;
  c.alpha = 3.0;
  c.beta0 = 0.05;
  c.beta_decay = 0.1;
  c.gamma = 1.0;
  c.t0 = 1.0;
  return c;
}

}  // namespace

TEST_CASE("coefficient validator enforces alpha > 1 and gamma > 0") {
  FlowCoeffs c;
  c.alpha = 1.0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.alpha = 3.0;
  c.gamma = 0.0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.gamma = 1.0;
  c.validate();
}

TEST_CASE("rate hypotheses hold for the standard schedule and fail for huge beta") {
  REQUIRE(nesterov_like().rate_hypotheses_hold(1.0, 100.0));
  FlowCoeffs bad = nesterov_like();
  bad.beta0 = 2.0;  // w(1) = 1 - betadot - beta = negative
  REQUIRE_FALSE(bad.rate_hypotheses_hold(1.0, 10.0));
}

TEST_CASE("the minimizer with zero cotangent is a fixed point") {
  const Vector x0 = Vector::Zero(4);
  const auto res =
      integrate_euclidean_ishd(quad_f, quad_g, x0, nesterov_like(), 20.0, 1e-2, 100);
  REQUIRE_FALSE(res.trace.aborted);
  REQUIRE(res.x.cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE(res.psi.cwiseAbs().maxCoeff() < 1e-14);
  for (double l : res.trace.loss) REQUIRE(l < 1e-25);
}

TEST_CASE("quadratic trajectory matches a 10x-finer reference integration") {
  Vector x0(3);
  x0 << 1.0, -0.5, 2.0;
  const FlowCoeffs c = nesterov_like();
  const auto coarse =
      integrate_euclidean_ishd(quad_f, quad_g, x0, c, 50.0, 1e-2, 100);
  const auto fine =
      integrate_euclidean_ishd(quad_f, quad_g, x0, c, 50.0, 1e-3, 1000);
  REQUIRE(coarse.trace.t.size() == fine.trace.t.size());
  for (size_t i = 0; i < coarse.trace.t.size(); ++i) {
    REQUIRE_THAT(coarse.trace.t[i],
                 Catch::Matchers::WithinAbs(fine.trace.t[i], 1e-9));
    REQUIRE(std::abs(coarse.trace.loss[i] - fine.trace.loss[i]) < 1e-6);
  }
  REQUIRE((coarse.x - fine.x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("euclidean Lyapunov vanishes at the optimum and stays nonnegative") {
  const FlowCoeffs c = nesterov_like();
  const Vector x_star = Vector::Zero(2);
  REQUIRE(euclidean_lyapunov(c, 2.0, x_star, Vector::Zero(2), 0.0, x_star, 0.0) ==
          0.0);
  Vector x(2);
  x << 0.5, -1.0;
  REQUIRE(euclidean_lyapunov(c, 2.0, x, Vector::Zero(2), quad_f(x), x_star, 0.0) >
          0.0);
}

TEST_CASE("refining dt shrinks the worst Lyapunov increment at RK4 order") {
  Vector x0(2);
  x0 << 1.0, 0.3;
  const FlowCoeffs c = nesterov_like();
  const Vector x_star = Vector::Zero(2);
  const auto run = [&](double dt) {
    const auto res = integrate_euclidean_ishd(quad_f, quad_g, x0, c, 20.0, dt, 1,
                                              &x_star, 0.0);
    return max_lyapunov_increment(res.trace.lyapunov);
  };
  const double coarse = run(4e-2);
  const double fine = run(2e-2);
  if (fine > 1e-15)  // above the rounding floor the order shows
    REQUIRE(coarse / fine >= 4.0);
  else
    REQUIRE(coarse < 1e-12);
}

TEST_CASE("a concave objective blows up and aborts with a partial trace") {
  const auto res = integrate_euclidean_ishd(
      [](const Vector& x) { return -0.5 * x.squaredNorm(); },
      [](const Vector& x) { return Vector(-x); }, Vector::Ones(2), nesterov_like(),
      200.0, 1e-2, 10);
  REQUIRE(res.trace.aborted);
  REQUIRE_FALSE(res.trace.t.empty());
}

TEST_CASE("simplex flow conserves mass and fixes the target") {
  Vector rho_star(3);
  rho_star << 0.5, 0.3, 0.2;
  const FlowCoeffs c = nesterov_like();

  SECTION("equilibrium at the target") {
    const auto res =
        integrate_fisher_rao_simplex(rho_star, rho_star, c, 20.0, 1e-2, 100);
    REQUIRE_FALSE(res.trace.aborted);
    for (double l : res.trace.loss) REQUIRE(std::abs(l) < 1e-12);
    REQUIRE((res.rho - rho_star).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("mass drift stays tiny from a generic start") {
    Vector rho0 = Vector::Constant(3, 1.0 / 3.0);
    const auto res =
        integrate_fisher_rao_simplex(rho0, rho_star, c, 50.0, 1e-2, 100);
    REQUIRE_FALSE(res.trace.aborted);
    REQUIRE(res.max_mass_drift < 1e-8);
    REQUIRE(res.trace.loss.back() < 1e-4 * res.trace.loss.front());
    REQUIRE_THAT(res.rho.sum(), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE(res.rho.minCoeff() > 0.0);
  }
}

TEST_CASE("simplex geometry: log map norm equals the geodesic distance") {
  Vector rho(3), rho_star(3);
  rho << 0.5, 0.3, 0.2;
  rho_star << 0.2, 0.5, 0.3;
  const Vector T = simplex_log_map(rho, rho_star);
  double gtt = 0.0;
  for (int i = 0; i < 3; ++i) gtt += T[i] * T[i] / rho[i];
  REQUIRE_THAT(gtt, Catch::Matchers::WithinRel(simplex_distance_sq(rho, rho_star),
                                               1e-10));
  REQUIRE(simplex_log_map(rho, rho).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rate fit recovers synthetic exponents") {
  std::vector<double> t, quadratic, constant;
  for (int i = 0; i < 50; ++i) {
    const double ti = 1.0 + i;
    t.push_back(ti);
    quadratic.push_back(1.0 / (ti * ti));
    constant.push_back(3.0);
  }
  REQUIRE_THAT(rate_estimate(t, quadratic), Catch::Matchers::WithinAbs(-2.0, 1e-9));
  REQUIRE_THAT(rate_estimate(t, constant), Catch::Matchers::WithinAbs(0.0, 1e-12));
  REQUIRE_THROWS_AS(rate_estimate({1, 2, 3}, {1, 2, 3}), std::invalid_argument);
}
