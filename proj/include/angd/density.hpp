#pragma once

// Parameterized log-density models for the Fisher-Rao and Wasserstein-2
// paths. Models expose log rho up to an additive constant (unnormalized
// energy parameterization); every consumer uses centered scores or
// spatial gradients, so the normalizing constant never enters.

#include <memory>

#include "angd/core.hpp"
#include "angd/net.hpp"

namespace angd {

class LogDensityModel {
 public:
  virtual ~LogDensityModel() = default;
  virtual int dim() const = 0;
  virtual int param_count() const = 0;
  virtual Vector params() const = 0;
  virtual void set_params(const Vector& theta) = 0;

  // log rho_theta(x) up to an additive constant.
  virtual double log_unnormalized(const Eigen::Ref<const Vector>& x) const = 0;
  // d_theta log rho~_theta(x), length p (uncentered, unnormalized score).
  virtual Vector score(const Eigen::Ref<const Vector>& x) const = 0;
  // nabla_x log rho_theta(x), length d (log Z independent).
  virtual Vector spatial_grad(const Eigen::Ref<const Vector>& x) const = 0;
  // d_theta <nabla_x log rho_theta(x), V>, length p.
  virtual Vector mixed_grad(const Eigen::Ref<const Vector>& x,
                            const Eigen::Ref<const Vector>& V) const = 0;
  virtual std::unique_ptr<LogDensityModel> clone() const = 0;
};

// log rho~_theta(x) = -E_theta(x) - tau |x|^2 / 2 with E a scalar-output
// dense net.  The parameter-free Gaussian base term (precision tau) keeps the
// density proper: a saturating net alone has flat tails, which lets sampled
// particles wander off and destabilizes the sampled natural gradient.
class EnergyNetDensity final : public LogDensityModel {
 public:
  explicit EnergyNetDensity(MlpNet net, double base_precision = 0.0)
      : net_(std::move(net)), tau_(base_precision) {
    require(net_.output_dim() == 1, "EnergyNetDensity: scalar energy expected");
    require(tau_ >= 0.0, "EnergyNetDensity: base precision must be >= 0");
  }

  const MlpNet& net() const { return net_; }
  double base_precision() const { return tau_; }

  int dim() const override { return net_.input_dim(); }
  int param_count() const override { return net_.param_count(); }
  Vector params() const override { return net_.flatten(); }
  void set_params(const Vector& theta) override { net_.unflatten(theta); }

  double log_unnormalized(const Eigen::Ref<const Vector>& x) const override {
    return -forward(net_, x)[0] - 0.5 * tau_ * x.squaredNorm();
  }
  Vector score(const Eigen::Ref<const Vector>& x) const override {
    return -param_grad_at(net_, x, DerivOp::identity());
  }
  Vector spatial_grad(const Eigen::Ref<const Vector>& x) const override {
    return -spatial_derivs(net_, x).gradient.row(0).transpose() - tau_ * x;
  }
  Vector mixed_grad(const Eigen::Ref<const Vector>& x,
                    const Eigen::Ref<const Vector>& V) const override {
    require(V.size() == dim(), "mixed_grad: velocity dimension mismatch");
    Vector g = Vector::Zero(param_count());
    for (int c = 0; c < dim(); ++c)
      if (V[c] != 0.0) g -= V[c] * param_grad_at(net_, x, DerivOp::partial(c));
    return g;
  }
  std::unique_ptr<LogDensityModel> clone() const override {
    return std::make_unique<EnergyNetDensity>(net_, tau_);
  }

 private:
  MlpNet net_;
  double tau_;
};

// N(theta, I): closed forms for tests and reductions.
class GaussianMeanDensity final : public LogDensityModel {
 public:
  explicit GaussianMeanDensity(Vector mean) : mean_(std::move(mean)) {}

  int dim() const override { return static_cast<int>(mean_.size()); }
  int param_count() const override { return static_cast<int>(mean_.size()); }
  Vector params() const override { return mean_; }
  void set_params(const Vector& theta) override { mean_ = theta; }

  double log_unnormalized(const Eigen::Ref<const Vector>& x) const override {
    return -0.5 * (x - mean_).squaredNorm();
  }
  Vector score(const Eigen::Ref<const Vector>& x) const override {
    return x - mean_;
  }
  Vector spatial_grad(const Eigen::Ref<const Vector>& x) const override {
    return mean_ - x;
  }
  Vector mixed_grad(const Eigen::Ref<const Vector>&,
                    const Eigen::Ref<const Vector>& V) const override {
    return V;
  }
  std::unique_ptr<LogDensityModel> clone() const override {
    return std::make_unique<GaussianMeanDensity>(mean_);
  }

 private:
  Vector mean_;
};

}  // namespace angd
