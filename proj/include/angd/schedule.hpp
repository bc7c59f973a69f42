#pragma once

// Deterministic hyperparameter laws. All decaying quantities follow the
// linear-decay rule x_k = x_0 / (1 + eps k); the beta time-derivative is
// realized as a backward difference of the beta schedule.

#include "angd/core.hpp"

namespace angd {

struct Schedule {
  double h0 = 0.01;
  double lr_decay = 0.0;      // eps in h_k = h0 / (1 + eps k)
  double alpha0 = 1.0;
  double alpha_decay = 0.0;
  double beta0 = 0.0;
  double beta_decay = 0.0;
  double gamma0 = 1.0;
  double gamma_decay = 0.0;
  bool memoryless = false;    // mu_k = 0: the non-accelerated reduction

  struct Values {
    double h, alpha, beta, gamma, mu, beta_dot;
  };

  void validate() const {
    require(h0 > 0.0, "Schedule: h0 must be positive");
    require(lr_decay >= 0.0 && alpha_decay >= 0.0 && beta_decay >= 0.0 &&
                gamma_decay >= 0.0,
            "Schedule: decay rates must be nonnegative");
    require(beta0 >= 0.0 && gamma0 > 0.0, "Schedule: beta0 >= 0, gamma0 > 0");
    if (!memoryless) {
      require(alpha0 > 0.0, "Schedule: alpha0 must be positive");
      require(h0 * alpha0 < 1.0, "Schedule: h0 * alpha0 must be < 1");
    }
  }

  double h_at(int k) const { return h0 / (1.0 + lr_decay * k); }
  double beta_at(int k) const { return beta0 / (1.0 + beta_decay * k); }

  Values at(int k) const {
    require(k >= 0, "Schedule: k must be nonnegative");
    Values v;
    v.h = h_at(k);
    v.beta = beta_at(k);
    v.gamma = gamma0 / (1.0 + gamma_decay * k);
    if (memoryless) {
      v.alpha = 1.0 / v.h;
      v.mu = 0.0;
    } else {
      v.alpha = alpha0 / (1.0 + alpha_decay * k);
      v.mu = 1.0 - v.h * v.alpha;
    }
    v.beta_dot = k == 0 ? 0.0 : (v.beta - beta_at(k - 1)) / v.h;
    return v;
  }

  // The non-accelerated reduction of a given schedule: mu = 0, beta = 0,
  // gamma = 1, same step-size law.
  static Schedule ngd(double h0, double lr_decay = 0.0) {
    Schedule s;
    s.h0 = h0;
    s.lr_decay = lr_decay;
    s.beta0 = 0.0;
    s.gamma0 = 1.0;
    s.memoryless = true;
    return s;
  }
};

}  // namespace angd
