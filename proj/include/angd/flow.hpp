#pragma once

// Continuous-time companions of the discrete algorithms: the damped
// inertial flow in Euclidean space, its Fisher-Rao analogue on the
// probability simplex, closed-form Lyapunov functionals, and the
// log-log rate fit used to certify convergence orders.

#include <cmath>
#include <functional>
#include <vector>

#include "angd/core.hpp"

namespace angd {

// Time-dependent coefficient laws: damping alpha(t) = alpha / t,
// beta(t) = beta0 / (1 + beta_decay (t - t0)), constant gamma.
struct FlowCoeffs {
  double alpha = 3.0;
  double beta0 = 0.0;
  double beta_decay = 0.0;
  double gamma = 1.0;
  double t0 = 1.0;

  void validate() const {
    require(alpha > 1.0, "FlowCoeffs: alpha must exceed 1");
    require(beta0 >= 0.0 && beta_decay >= 0.0, "FlowCoeffs: beta law nonnegative");
    require(gamma > 0.0, "FlowCoeffs: gamma must be positive");
    require(t0 > 0.0, "FlowCoeffs: t0 must be positive");
  }

  double alpha_at(double t) const { return alpha / t; }
  double beta_at(double t) const { return beta0 / (1.0 + beta_decay * (t - t0)); }
  double beta_dot_at(double t) const {
    const double den = 1.0 + beta_decay * (t - t0);
    return -beta0 * beta_decay / (den * den);
  }
  // w_t = gamma - betadot_t - beta_t / t, the rate weight.
  double w_at(double t) const { return gamma - beta_dot_at(t) - beta_at(t) / t; }
  // delta_t = t^2 (gamma + (alpha - 3) beta_t / (2t) - betadot_t).
  double delta_at(double t) const {
    return t * t *
           (gamma + (alpha - 3.0) * beta_at(t) / (2.0 * t) - beta_dot_at(t));
  }

  // Checks the two convergence hypotheses, w_t > 0 and
  // ddot{delta}... i.e. d/dt delta_t <= 2 t w_t (alpha - 1), on a uniform
  // grid over [t_lo, t_hi] using a central difference for d/dt delta_t.
  bool rate_hypotheses_hold(double t_lo, double t_hi, int n_points = 256,
                            double tol = 1e-9) const {
    validate();
    require(t_hi > t_lo && t_lo > 0.0 && n_points >= 2,
            "FlowCoeffs: bad hypothesis grid");
    const double dt = (t_hi - t_lo) / (n_points - 1);
    const double fd = std::min(1e-5, dt / 4.0);
    for (int i = 0; i < n_points; ++i) {
      const double t = t_lo + i * dt;
      if (w_at(t) <= 0.0) return false;
      const double ddelta = (delta_at(t + fd) - delta_at(t - fd)) / (2.0 * fd);
      if (ddelta > 2.0 * t * w_at(t) * (alpha - 1.0) + tol) return false;
    }
    return true;
  }
};

struct FlowTrace {
  std::vector<double> t;
  std::vector<double> loss;
  std::vector<double> lyapunov;  // empty when no reference optimum given
  std::vector<double> dist2;     // squared geodesic distance to the optimum
  std::vector<double> psi_norm;
  bool aborted = false;
};

namespace detail {

constexpr double kBlowupNorm = 1e12;

// One classical RK4 step of y' = rhs(t, y).
template <class Rhs>
Vector rk4_step(const Rhs& rhs, double t, const Vector& y, double dt) {
  const Vector k1 = rhs(t, y);
  const Vector k2 = rhs(t + dt / 2.0, (y + (dt / 2.0) * k1).eval());
  const Vector k3 = rhs(t + dt / 2.0, (y + (dt / 2.0) * k2).eval());
  const Vector k4 = rhs(t + dt, (y + dt * k3).eval());
  return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Euclidean inertial flow with Hessian-driven damping, first-order form:
//   x' = Psi - beta(t) grad f(x)
//   Psi' = -alpha(t) Psi + (alpha(t) beta(t) - gamma + betadot(t)) grad f(x)
// with Psi(t0) = beta(t0) grad f(x0).

struct EuclideanFlowResult {
  FlowTrace trace;
  Vector x;
  Vector psi;
};

// Lyapunov value E_t = t^2 w_t (f - f*) + |v|^2 / 2 with
// v = (alpha - 1)(x - x*) + t Psi.  Along the flow dE/dt <= 0 whenever the
// rate hypotheses hold, which is what certifies the O(1/(t^2 w_t)) rate.
inline double euclidean_lyapunov(const FlowCoeffs& c, double t, const Vector& x,
                                 const Vector& psi, double f_val, const Vector& x_star,
                                 double f_star) {
  const Vector v = (c.alpha - 1.0) * (x - x_star) + t * psi;
  return t * t * c.w_at(t) * (f_val - f_star) + 0.5 * v.squaredNorm();
}

inline EuclideanFlowResult integrate_euclidean_ishd(
    const std::function<double(const Vector&)>& f,
    const std::function<Vector(const Vector&)>& grad_f, const Vector& x0,
    const FlowCoeffs& coeffs, double t_end, double dt, int record_every = 1,
    const Vector* x_star = nullptr, double f_star = 0.0) {
  coeffs.validate();
  require(dt > 0.0 && t_end > coeffs.t0, "integrate_euclidean_ishd: bad time grid");
  require(record_every >= 1, "integrate_euclidean_ishd: record_every >= 1");
  const int d = static_cast<int>(x0.size());

  const auto rhs = [&](double t, const Vector& y) {
    const Vector x = y.head(d);
    const Vector psi = y.tail(d);
    const Vector g = grad_f(x);
    Vector dy(2 * d);
    dy.head(d) = psi - coeffs.beta_at(t) * g;
    dy.tail(d) = -coeffs.alpha_at(t) * psi +
                 (coeffs.alpha_at(t) * coeffs.beta_at(t) - coeffs.gamma +
                  coeffs.beta_dot_at(t)) *
                     g;
    return dy;
  };

  Vector y(2 * d);
  y.head(d) = x0;
  y.tail(d) = coeffs.beta_at(coeffs.t0) * grad_f(x0);

  EuclideanFlowResult out;
  const auto record = [&](double t) {
    out.trace.t.push_back(t);
    out.trace.loss.push_back(f(y.head(d)));
    out.trace.psi_norm.push_back(y.tail(d).norm());
    if (x_star) {
      out.trace.lyapunov.push_back(euclidean_lyapunov(
          coeffs, t, y.head(d), y.tail(d), out.trace.loss.back(), *x_star, f_star));
      out.trace.dist2.push_back((y.head(d) - *x_star).squaredNorm());
    }
  };

  double t = coeffs.t0;
  record(t);
  const long n_steps = static_cast<long>(std::ceil((t_end - coeffs.t0) / dt - 1e-12));
  for (long k = 0; k < n_steps; ++k) {
    const double step = std::min(dt, t_end - t);
    y = detail::rk4_step(rhs, t, y, step);
    t += step;
    if (!y.allFinite() || y.norm() > detail::kBlowupNorm) {
      out.trace.aborted = true;
      break;
    }
    if ((k + 1) % record_every == 0 || k + 1 == n_steps) record(t);
  }
  out.x = y.head(d);
  out.psi = y.tail(d);
  return out;
}

// ---------------------------------------------------------------------------
// Fisher-Rao flow on the open probability simplex, KL loss against a
// fixed target rho*:
//   rho' = (Phi - E_rho[Phi]) rho,                Phi = Psi - beta dL/drho
//   Psi' = -alpha Psi - (Phi - E[Phi])(Psi - E[Psi]) / 2
//          + (alpha beta - gamma + betadot) dL/drho
// with dL/drho = log(rho / rho*) + 1 and Psi(t0) = beta(t0) dL/drho(rho0).

struct SimplexFlowResult {
  FlowTrace trace;
  Vector rho;
  Vector psi;
  double max_mass_drift = 0.0;  // max |sum rho - 1| before renormalization
};

inline double simplex_kl(const Vector& rho, const Vector& rho_star) {
  double acc = 0.0;
  for (int i = 0; i < rho.size(); ++i) acc += rho[i] * std::log(rho[i] / rho_star[i]);
  return acc;
}

// Fisher-Rao logarithmic map on the simplex (sphere pullback), returned as a
// tangent vector at rho; valid for H = arccos(sum sqrt(rho rho*)) < pi/2.
inline Vector simplex_log_map(const Vector& rho, const Vector& rho_star) {
  const double c = (rho.cwiseProduct(rho_star)).cwiseSqrt().sum();
  const double h = std::acos(std::min(1.0, std::max(-1.0, c)));
  require(h < M_PI / 2.0 - 1e-6, "simplex_log_map: points too far apart");
  if (h < 1e-12) return Vector::Zero(rho.size());
  const double s = std::sin(h);
  return (2.0 * h / s) * (rho.cwiseProduct(rho_star)).cwiseSqrt() -
         (2.0 * h * std::cos(h) / s) * rho;
}

inline double simplex_distance_sq(const Vector& rho, const Vector& rho_star) {
  const double c = (rho.cwiseProduct(rho_star)).cwiseSqrt().sum();
  const double h = std::acos(std::min(1.0, std::max(-1.0, c)));
  return 4.0 * h * h;
}

// E_t = t^2 w_t L + g(v, v)/2 with
// v = -(alpha - 1) log_rho(rho*) + t (rho' + beta grad L) and
// g_rho(a, b) = sum a b / rho.
inline double simplex_lyapunov(const FlowCoeffs& c, double t, const Vector& rho,
                               const Vector& psi, const Vector& rho_star) {
  const int n = static_cast<int>(rho.size());
  Vector dl(n);
  for (int i = 0; i < n; ++i) dl[i] = std::log(rho[i] / rho_star[i]) + 1.0;
  const double beta = c.beta_at(t);
  const Vector phi = psi - beta * dl;
  const double e_phi = rho.dot(phi);
  const Vector rho_dot = (phi.array() - e_phi).matrix().cwiseProduct(rho);
  const double e_dl = rho.dot(dl);
  const Vector grad_l = (dl.array() - e_dl).matrix().cwiseProduct(rho);
  const Vector v = -(c.alpha - 1.0) * simplex_log_map(rho, rho_star) +
                   t * (rho_dot + beta * grad_l);
  double gvv = 0.0;
  for (int i = 0; i < n; ++i) gvv += v[i] * v[i] / rho[i];
  return t * t * c.w_at(t) * simplex_kl(rho, rho_star) + 0.5 * gvv;
}

inline SimplexFlowResult integrate_fisher_rao_simplex(const Vector& rho0,
                                                      const Vector& rho_star,
                                                      const FlowCoeffs& coeffs,
                                                      double t_end, double dt,
                                                      int record_every = 1,
                                                      bool with_lyapunov = true) {
  coeffs.validate();
  require(rho0.size() == rho_star.size() && rho0.size() >= 2,
          "integrate_fisher_rao_simplex: dimension mismatch");
  require(rho0.minCoeff() > 0.0 && rho_star.minCoeff() > 0.0,
          "integrate_fisher_rao_simplex: interior points required");
  require(std::abs(rho0.sum() - 1.0) < 1e-12 && std::abs(rho_star.sum() - 1.0) < 1e-12,
          "integrate_fisher_rao_simplex: inputs must sum to one");
  require(dt > 0.0 && t_end > coeffs.t0, "integrate_fisher_rao_simplex: bad time grid");
  const int n = static_cast<int>(rho0.size());

  const auto rhs = [&](double t, const Vector& y) {
    const Vector rho = y.head(n);
    const Vector psi = y.tail(n);
    Vector dl(n);
    for (int i = 0; i < n; ++i) dl[i] = std::log(rho[i] / rho_star[i]) + 1.0;
    const double beta = coeffs.beta_at(t);
    const Vector phi = psi - beta * dl;
    const double e_phi = rho.dot(phi);
    const double e_psi = rho.dot(psi);
    Vector dy(2 * n);
    dy.head(n) = (phi.array() - e_phi).matrix().cwiseProduct(rho);
    dy.tail(n) =
        -coeffs.alpha_at(t) * psi -
        0.5 * ((phi.array() - e_phi) * (psi.array() - e_psi)).matrix() +
        (coeffs.alpha_at(t) * beta - coeffs.gamma + coeffs.beta_dot_at(t)) * dl;
    return dy;
  };

  Vector y(2 * n);
  y.head(n) = rho0;
  for (int i = 0; i < n; ++i)
    y[n + i] = coeffs.beta_at(coeffs.t0) * (std::log(rho0[i] / rho_star[i]) + 1.0);

  SimplexFlowResult out;
  const auto record = [&](double t) {
    out.trace.t.push_back(t);
    out.trace.loss.push_back(simplex_kl(y.head(n), rho_star));
    out.trace.psi_norm.push_back(y.tail(n).norm());
    out.trace.dist2.push_back(simplex_distance_sq(y.head(n), rho_star));
    if (with_lyapunov)
      out.trace.lyapunov.push_back(
          simplex_lyapunov(coeffs, t, y.head(n), y.tail(n), rho_star));
  };

  double t = coeffs.t0;
  record(t);
  const long n_steps = static_cast<long>(std::ceil((t_end - coeffs.t0) / dt - 1e-12));
  for (long k = 0; k < n_steps; ++k) {
    const double step = std::min(dt, t_end - t);
    y = detail::rk4_step(rhs, t, y, step);
    t += step;
    if (!y.allFinite() || y.head(n).minCoeff() < 1e-300) {
      out.trace.aborted = true;
      break;
    }
    const double mass = y.head(n).sum();
    out.max_mass_drift = std::max(out.max_mass_drift, std::abs(mass - 1.0));
    y.head(n) /= mass;
    if ((k + 1) % record_every == 0 || k + 1 == n_steps) record(t);
  }
  out.rho = y.head(n);
  out.psi = y.tail(n);
  return out;
}

// ---------------------------------------------------------------------------
// Least-squares slope of log(loss - loss_star) against log t over the
// recorded trace; points at or below loss_star are skipped.
inline double rate_estimate(const std::vector<double>& t, const std::vector<double>& loss,
                            double loss_star = 0.0, int min_points = 10) {
  require(t.size() == loss.size(), "rate_estimate: length mismatch");
  std::vector<double> lx, ly;
  for (size_t i = 0; i < t.size(); ++i) {
    const double gap = loss[i] - loss_star;
    if (gap > 0.0 && t[i] > 0.0) {
      lx.push_back(std::log(t[i]));
      ly.push_back(std::log(gap));
    }
  }
  require(static_cast<int>(lx.size()) >= min_points,
          "rate_estimate: too few usable points");
  const double n = static_cast<double>(lx.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < lx.size(); ++i) {
    sx += lx[i];
    sy += ly[i];
    sxx += lx[i] * lx[i];
    sxy += lx[i] * ly[i];
  }
  const double denom = n * sxx - sx * sx;
  require(denom > 0.0, "rate_estimate: degenerate abscissa");
  return (n * sxy - sx * sy) / denom;
}

// Largest upward increment between consecutive Lyapunov samples.
inline double max_lyapunov_increment(const std::vector<double>& e) {
  double worst = 0.0;
  for (size_t i = 1; i < e.size(); ++i) worst = std::max(worst, e[i] - e[i - 1]);
  return worst;
}

}  // namespace angd
