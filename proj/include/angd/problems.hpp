#pragma once

// Desk-scale benchmark objectives: spectral 1-D Poisson and viscous
// Burgers PINN losses, and KL density fitting against closed-form
// targets, each exposing exactly the derivative services the optimizers
// consume.

#include <memory>
#include <random>

#include "angd/core.hpp"
#include "angd/density.hpp"
#include "angd/net.hpp"
#include "angd/spectral.hpp"

namespace angd {

struct LossAndGrad {
  double loss;
  Vector grad;
};

class PinnProblem {
 public:
  virtual ~PinnProblem() = default;
  // Collocation batch the L2/Hs metric samples over (fixed per run).
  virtual const Matrix& batch() const = 0;
  virtual double loss(const MlpNet& net) const = 0;
  virtual LossAndGrad loss_and_grad(const MlpNet& net) const = 0;
  // Held-out residual on a half-cell-shifted grid.
  virtual double test_loss(const MlpNet& net) const = 0;
  // Pointwise dL/drho at the collocation batch; problems without a
  // tractable first variation throw CapabilityError.
  virtual Vector first_variation(const MlpNet& net) const {
    throw CapabilityError("first_variation: not available for this problem");
  }
  // D(dL/drho) for a first-order derivative op (H^{-1} path).
  virtual Vector first_variation_deriv(const MlpNet& net, const DerivOp& op) const {
    throw CapabilityError("first_variation_deriv: not available for this problem");
  }
};

// Periodic Poisson -u'' = f on [0, 2pi): the loss is the mean squared
// spectral residual over the grid samples,
//   L(u) = (1/n) || A u - f ||^2,  A = -Delta realized spectrally,
// so the pointwise first variation 2 A^T (A u - f) is exact and the
// chain-rule identity (1/n) O^T [dL/du] = grad_theta L holds to rounding.
class PoissonProblem final : public PinnProblem {
 public:
  PoissonProblem(int n_grid, std::function<double(double)> f_fn)
      : grid_{n_grid, 2.0 * M_PI} {
    const Vector xs = grid_.points();
    batch_.resize(n_grid, 1);
    f_.resize(n_grid);
    for (int j = 0; j < n_grid; ++j) {
      batch_(j, 0) = xs[j];
      f_[j] = f_fn(xs[j]);
    }
    // Dense spectral Laplacian, built column by column.
    A_ = Matrix::Zero(n_grid, n_grid);
    for (int c = 0; c < n_grid; ++c) {
      Vector e = Vector::Zero(n_grid);
      e[c] = 1.0;
      A_.col(c) = -spectral_laplacian(grid_, e);
    }
    shift_batch_ = batch_;
    shift_batch_.array() += 0.5 * grid_.dx();
    f_shift_.resize(n_grid);
    for (int j = 0; j < n_grid; ++j) f_shift_[j] = f_fn(shift_batch_(j, 0));
  }

  const Matrix& batch() const override { return batch_; }
  const PeriodicGrid& grid() const { return grid_; }

  Vector values_on(const MlpNet& net, const Matrix& pts) const {
    Vector u(pts.rows());
    for (int j = 0; j < pts.rows(); ++j) u[j] = forward(net, pts.row(j).transpose())[0];
    return u;
  }

  double loss(const MlpNet& net) const override {
    const Vector r = A_ * values_on(net, batch_) - f_;
    return r.squaredNorm() / batch_.rows();
  }

  LossAndGrad loss_and_grad(const MlpNet& net) const override {
    const int n = static_cast<int>(batch_.rows());
    const Vector r = A_ * values_on(net, batch_) - f_;
    const Vector fv = 2.0 * A_.transpose() * r;  // dL/du samples
    const Matrix O = param_jacobian(net, batch_, DerivOp::identity());
    return {r.squaredNorm() / n, O.transpose() * fv / n};
  }

  double test_loss(const MlpNet& net) const override {
    const Vector r = A_ * values_on(net, shift_batch_) - f_shift_;
    return r.squaredNorm() / shift_batch_.rows();
  }

  // dL/du for explicit grid values; first_variation(net) samples the net here.
  Vector first_variation_values(const Vector& u) const {
    require(u.size() == batch_.rows(), "first_variation_values: grid size mismatch");
    return 2.0 * A_.transpose() * (A_ * u - f_);
  }

  Vector first_variation(const MlpNet& net) const override {
    return first_variation_values(values_on(net, batch_));
  }

  Vector first_variation_deriv(const MlpNet& net, const DerivOp& op) const override {
    const Vector fv = first_variation(net);
    switch (op.kind) {
      case DerivOp::Kind::Identity: return fv;
      case DerivOp::Kind::Partial:
        require(op.i == 0, "PoissonProblem: 1-D only");
        return spectral_derivative(grid_, fv);
      default:
        throw CapabilityError("PoissonProblem: first-order derivatives only");
    }
  }

 private:
  PeriodicGrid grid_;
  Matrix batch_, shift_batch_;
  Vector f_, f_shift_;
  Matrix A_;
};

// Viscous Burgers PINN on [-1,1] x [0,1]:
//   L = (1/n) sum (u_t + u u_x - nu u_xx)^2 + lambda_b (1/n_b) sum (u - g)^2.
// No pointwise first variation (nonlinear adjoint composition out of scope).
class BurgersProblem final : public PinnProblem {
 public:
  BurgersProblem(int nx, int nt, std::function<double(double)> h_init,
                 double lambda_b = 100.0, double nu = 0.01 / M_PI)
      : lambda_b_(lambda_b), nu_(nu) {
    // Cell-centered interior lattice.
    interior_.resize(nx * nt, 2);
    int k = 0;
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nt; ++j) {
        interior_(k, 0) = -1.0 + (i + 0.5) * 2.0 / nx;
        interior_(k, 1) = (j + 0.5) / nt;
        ++k;
      }
    shift_interior_ = interior_;
    shift_interior_.col(0).array() += 0.5 * (2.0 / nx);
    shift_interior_.col(1).array() += 0.25 / nt;
    // wrap shifted points back into the domain
    for (int r = 0; r < shift_interior_.rows(); ++r) {
      if (shift_interior_(r, 0) > 1.0) shift_interior_(r, 0) -= 2.0;
      if (shift_interior_(r, 1) > 1.0) shift_interior_(r, 1) -= 1.0;
    }
    // Boundary: initial line t = 0 and the two lateral walls.
    boundary_.resize(nx + 2 * nt, 2);
    bvals_.resize(nx + 2 * nt);
    k = 0;
    for (int i = 0; i < nx; ++i, ++k) {
      boundary_(k, 0) = -1.0 + (i + 0.5) * 2.0 / nx;
      boundary_(k, 1) = 0.0;
      bvals_[k] = h_init(boundary_(k, 0));
    }
    for (int j = 0; j < nt; ++j) {
      boundary_(k, 0) = -1.0;
      boundary_(k, 1) = (j + 0.5) / nt;
      bvals_[k++] = 0.0;
      boundary_(k, 0) = 1.0;
      boundary_(k, 1) = (j + 0.5) / nt;
      bvals_[k++] = 0.0;
    }
    batch_.resize(interior_.rows() + boundary_.rows(), 2);
    batch_ << interior_, boundary_;
  }

  const Matrix& batch() const override { return batch_; }
  const Matrix& interior() const { return interior_; }
  const Matrix& boundary() const { return boundary_; }

  double residual_at(const MlpNet& net, const Eigen::Ref<const Vector>& xt) const {
    const SpatialDerivs sd = spatial_derivs(net, xt);
    return sd.gradient(0, 1) + sd.value[0] * sd.gradient(0, 0) -
           nu_ * sd.hessian[0](0, 0);
  }

  double loss(const MlpNet& net) const override {
    return interior_loss(net, interior_) + boundary_loss(net);
  }

  double test_loss(const MlpNet& net) const override {
    return interior_loss(net, shift_interior_) + boundary_loss(net);
  }

  LossAndGrad loss_and_grad(const MlpNet& net) const override {
    const int n = static_cast<int>(interior_.rows());
    Vector grad = Vector::Zero(net.param_count());
    double loss = 0.0;
    for (int j = 0; j < n; ++j) {
      const Vector xt = interior_.row(j).transpose();
      const SpatialDerivs sd = spatial_derivs(net, xt);
      const double u = sd.value[0], ux = sd.gradient(0, 0), ut = sd.gradient(0, 1);
      const double uxx = sd.hessian[0](0, 0);
      const double r = ut + u * ux - nu_ * uxx;
      loss += r * r;
      // d_theta r = J_t + u_x J_id + u J_x - nu J_xx
      Vector dr = param_grad_at(net, xt, DerivOp::partial(1));
      dr += ux * param_grad_at(net, xt, DerivOp::identity());
      dr += u * param_grad_at(net, xt, DerivOp::partial(0));
      dr -= nu_ * param_grad_at(net, xt, DerivOp::mixed(0, 0));
      grad += (2.0 / n) * r * dr;
    }
    loss /= n;
    const int nb = static_cast<int>(boundary_.rows());
    for (int j = 0; j < nb; ++j) {
      const Vector xt = boundary_.row(j).transpose();
      const double mis = forward(net, xt)[0] - bvals_[j];
      loss += lambda_b_ * mis * mis / nb;
      grad += (2.0 * lambda_b_ / nb) * mis * param_grad_at(net, xt, DerivOp::identity());
    }
    return {loss, grad};
  }

 private:
  double interior_loss(const MlpNet& net, const Matrix& pts) const {
    double acc = 0.0;
    for (int j = 0; j < pts.rows(); ++j) {
      const double r = residual_at(net, pts.row(j).transpose());
      acc += r * r;
    }
    return acc / pts.rows();
  }

  double boundary_loss(const MlpNet& net) const {
    double acc = 0.0;
    for (int j = 0; j < boundary_.rows(); ++j) {
      const double mis = forward(net, boundary_.row(j).transpose())[0] - bvals_[j];
      acc += mis * mis;
    }
    return lambda_b_ * acc / boundary_.rows();
  }

  double lambda_b_, nu_;
  Matrix interior_, shift_interior_, boundary_, batch_;
  Vector bvals_;
};

// Closed-form target densities for the particle paths.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;
  virtual double log_density(const Eigen::Ref<const Vector>& x) const = 0;
  virtual Vector grad_log(const Eigen::Ref<const Vector>& x) const = 0;
};

class GaussianTarget final : public TargetDensity {
 public:
  explicit GaussianTarget(Vector mean) : mean_(std::move(mean)) {}
  double log_density(const Eigen::Ref<const Vector>& x) const override {
    return -0.5 * (x - mean_).squaredNorm() -
           0.5 * mean_.size() * std::log(2.0 * M_PI);
  }
  Vector grad_log(const Eigen::Ref<const Vector>& x) const override {
    return mean_ - x;
  }

 private:
  Vector mean_;
};

// Equal-weight mixture of unit-covariance Gaussians.
class GaussianMixtureTarget final : public TargetDensity {
 public:
  explicit GaussianMixtureTarget(std::vector<Vector> means) : means_(std::move(means)) {
    require(!means_.empty(), "GaussianMixtureTarget: need components");
  }
  double log_density(const Eigen::Ref<const Vector>& x) const override {
    const double d = static_cast<double>(x.size());
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> le(means_.size());
    for (size_t i = 0; i < means_.size(); ++i) {
      le[i] = -0.5 * (x - means_[i]).squaredNorm();
      mx = std::max(mx, le[i]);
    }
    double acc = 0.0;
    for (double v : le) acc += std::exp(v - mx);
    return mx + std::log(acc / means_.size()) - 0.5 * d * std::log(2.0 * M_PI);
  }
  Vector grad_log(const Eigen::Ref<const Vector>& x) const override {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> le(means_.size());
    for (size_t i = 0; i < means_.size(); ++i) {
      le[i] = -0.5 * (x - means_[i]).squaredNorm();
      mx = std::max(mx, le[i]);
    }
    double z = 0.0;
    Vector g = Vector::Zero(x.size());
    for (size_t i = 0; i < means_.size(); ++i) {
      const double w = std::exp(le[i] - mx);
      z += w;
      g += w * (means_[i] - x);
    }
    return g / z;
  }

 private:
  std::vector<Vector> means_;
};

struct KlVariation {
  Vector centered_values;  // centered dL/drho at particles
  Matrix gradients;        // n x d rows of nabla dL/drho = nabla log rho_theta - nabla log rho*
};

// KL(rho_theta || rho*): dL/drho = log rho_theta - log rho* + 1; the centered
// form drops the constant and the model's log Z.
class DensityProblem {
 public:
  DensityProblem(std::shared_ptr<TargetDensity> target, double quad_half_width = 8.0,
                 int quad_points_per_dim = 96)
      : target_(std::move(target)),
        quad_half_width_(quad_half_width),
        quad_points_(quad_points_per_dim) {}

  const TargetDensity& target() const { return *target_; }

  KlVariation kl_variation(const LogDensityModel& model, const Matrix& particles) const {
    const int n = static_cast<int>(particles.rows());
    require(n > 0, "kl_variation: empty particle set");
    KlVariation out;
    out.centered_values.resize(n);
    out.gradients.resize(n, model.dim());
    for (int i = 0; i < n; ++i) {
      const Vector x = particles.row(i).transpose();
      out.centered_values[i] = model.log_unnormalized(x) - target_->log_density(x);
      out.gradients.row(i) = (model.spatial_grad(x) - target_->grad_log(x)).transpose();
    }
    out.centered_values.array() -= out.centered_values.mean();
    check_finite(out.centered_values, "kl_variation");
    return out;
  }

  // Deterministic tensor-grid quadrature estimate of KL(rho_theta || rho*),
  // normalizing the model on the same grid. Supports d in {1, 2}.
  double kl_estimate(const LogDensityModel& model) const {
    const int d = model.dim();
    require(d == 1 || d == 2, "kl_estimate: quadrature supports d <= 2");
    const int m = quad_points_;
    const double hw = quad_half_width_;
    const double dx = 2.0 * hw / m;
    const double cell = (d == 1) ? dx : dx * dx;
    std::vector<Vector> pts;
    pts.reserve(d == 1 ? m : m * m);
    for (int i = 0; i < m; ++i) {
      const double xi = -hw + (i + 0.5) * dx;
      if (d == 1) {
        Vector x(1);
        x << xi;
        pts.push_back(x);
      } else {
        for (int j = 0; j < m; ++j) {
          Vector x(2);
          x << xi, -hw + (j + 0.5) * dx;
          pts.push_back(x);
        }
      }
    }
    std::vector<double> lu(pts.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < pts.size(); ++i) {
      lu[i] = model.log_unnormalized(pts[i]);
      mx = std::max(mx, lu[i]);
    }
    double z = 0.0;
    for (double v : lu) z += std::exp(v - mx);
    z *= cell;
    const double log_z = mx + std::log(z);
    double kl = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
      const double log_rho = lu[i] - log_z;
      kl += std::exp(log_rho) * (log_rho - target_->log_density(pts[i])) * cell;
    }
    return kl;
  }

 private:
  std::shared_ptr<TargetDensity> target_;
  double quad_half_width_;
  int quad_points_;
};

struct MalaStats {
  int proposals = 0;
  int accepted = 0;
  double acceptance_rate() const {
    return proposals == 0 ? 1.0 : static_cast<double>(accepted) / proposals;
  }
};

// Metropolis-adjusted Langevin chain targeting the model density.
inline MalaStats mala_resample(const LogDensityModel& model, Matrix& particles,
                               double step, int n_steps, std::mt19937_64& rng) {
  require(step > 0.0, "mala_resample: step must be positive");
  require(n_steps >= 0, "mala_resample: n_steps must be nonnegative");
  const int n = static_cast<int>(particles.rows());
  const int d = model.dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MalaStats stats;
  const double noise_scale = std::sqrt(2.0 * step);
  for (int s = 0; s < n_steps; ++s) {
    for (int i = 0; i < n; ++i) {
      const Vector x = particles.row(i).transpose();
      const double lx = model.log_unnormalized(x);
      const Vector gx = model.spatial_grad(x);
      Vector prop = x + step * gx;
      for (int c = 0; c < d; ++c) prop[c] += noise_scale * normal(rng);
      const double lp = model.log_unnormalized(prop);
      const Vector gp = model.spatial_grad(prop);
      const double fwd = -(prop - x - step * gx).squaredNorm() / (4.0 * step);
      const double bwd = -(x - prop - step * gp).squaredNorm() / (4.0 * step);
      const double log_alpha = lp - lx + bwd - fwd;
      ++stats.proposals;
      if (std::log(unif(rng)) < log_alpha) {
        particles.row(i) = prop.transpose();
        ++stats.accepted;
      }
    }
  }
  return stats;
}

}  // namespace angd
