#pragma once

// The four discrete accelerated natural-gradient algorithms with their
// cotangent recurrences, the pointwise Psi oracle, and plain SGD/Adam
// baselines. Non-accelerated NGD variants are the same steps driven by
// the memoryless schedule reduction (mu = 0, beta = 0, gamma = 1).

#include <memory>
#include <random>

#include "angd/core.hpp"
#include "angd/density.hpp"
#include "angd/linsolve.hpp"
#include "angd/metrics.hpp"
#include "angd/net.hpp"
#include "angd/problems.hpp"
#include "angd/schedule.hpp"

namespace angd {

struct StepDiagnostics {
  double loss = 0.0;
  double d_norm = 0.0;
  double residual = 0.0;
  double lambda = 0.0;
  double accept_rate = 1.0;
};

inline KfacFactors kfac_factors_from(const LayerFactors& lf) {
  KfacFactors kf;
  const size_t K = lf.input_acts.size();
  kf.A.resize(K);
  kf.S.resize(K);
  for (size_t l = 0; l < K; ++l) {
    const double n = static_cast<double>(lf.input_acts[l].rows());
    kf.A[l] = lf.input_acts[l].transpose() * lf.input_acts[l] / n;
    kf.S[l] = lf.out_sens[l].transpose() * lf.out_sens[l] / n;
  }
  return kf;
}

// ---------------------------------------------------------------------------
// L2 path (Algorithm: accelerated L2 NGD).

struct L2State {
  Vector w;          // momentum vector approximating O^T b
  Vector prev_grad;  // grad_theta L at the previous iterate
  double prev_beta = 0.0;

  static L2State init(int p) {
    L2State s;
    s.w = Vector::Zero(p);
    s.prev_grad = Vector::Zero(p);
    return s;
  }
};

// w_k = mu_k (w_{k-1} + n beta_{k-1} grad_{k-1})
//       - n (mu_k beta_k + h_k (gamma_k - betadot_k)) grad_k
inline Vector l2_momentum_update(const L2State& state, const Vector& grad, int n,
                                 const Schedule::Values& sv) {
  return sv.mu * (state.w + n * state.prev_beta * state.prev_grad) -
         n * (sv.mu * sv.beta + sv.h * (sv.gamma - sv.beta_dot)) * grad;
}

inline StepDiagnostics l2_angd_step(MlpNet& net, const PinnProblem& problem,
                                    L2State& state, const Schedule& sched, int k,
                                    const SolveConfig& cfg) {
  const auto sv = sched.at(k);
  const auto lg = problem.loss_and_grad(net);
  if (!std::isfinite(lg.loss)) throw NumericError("l2_angd_step: non-finite loss");
  const int n = static_cast<int>(problem.batch().rows());
  const Vector w = l2_momentum_update(state, lg.grad, n, sv);
  TangentSystem sys = build_l2_system(net, problem.batch(), w / n);
  double lambda = cfg.damping;
  const Vector d = solve_system(sys, cfg, Vector(), &lambda);
  net.add_scaled(d, sv.h);
  state.w = w;
  state.prev_grad = lg.grad;
  state.prev_beta = sv.beta;
  StepDiagnostics diag;
  diag.loss = lg.loss;
  diag.d_norm = d.norm();
  diag.lambda = lambda;
  diag.residual = (sys.gram_rows.transpose() * (sys.gram_rows * d) / sys.n +
                   lambda * d - sys.rhs_v)
                      .norm();
  return diag;
}

// Pointwise cotangent recurrence
//   Psi_k(x^j) = mu_k Psi_{k-1}(x^j)
//                - h_k (gamma_k - betadot_k - alpha_k beta_k) dL/drho(x^j),
// available only for problems exposing the pointwise first variation.
inline Vector l2_psi_oracle_step(const MlpNet& net, const PinnProblem& problem,
                                 const Vector& psi, const Schedule& sched, int k) {
  const auto sv = sched.at(k);
  const Vector fv = problem.first_variation(net);
  require(psi.size() == fv.size(), "l2_psi_oracle_step: psi size mismatch");
  return sv.mu * psi - sv.h * (sv.gamma - sv.beta_dot - sv.alpha * sv.beta) * fv;
}

// ---------------------------------------------------------------------------
// H^s path, s in {-1, 0, +1}.

struct HsState {
  L2State l2;               // s >= 0 reuses the w recurrence
  std::vector<Vector> dpsi;  // s = -1: D Psi per derivative op, D^1 order

  static HsState init(int p, int n, int dim) {
    HsState s;
    s.l2 = L2State::init(p);
    s.dpsi.assign(dim + 1, Vector::Zero(n));
    return s;
  }
};

inline StepDiagnostics hs_step(MlpNet& net, const PinnProblem& problem, HsState& state,
                               const Schedule& sched, int k, int s,
                               const SolveConfig& cfg) {
  require(s >= -1 && s <= 1, "hs_step: s in {-1,0,1}");
  if (s >= 0) {
    const auto sv = sched.at(k);
    const auto lg = problem.loss_and_grad(net);
    if (!std::isfinite(lg.loss)) throw NumericError("hs_step: non-finite loss");
    const int n = static_cast<int>(problem.batch().rows());
    const Vector w = l2_momentum_update(state.l2, lg.grad, n, sv);
    // O^T z coincides with the L2 v_k; only the Gram changes.
    TangentSystem sys = build_hs_pos_system(net, problem.batch(), Vector::Zero(n), s);
    sys.rhs_v = w / n;
    StepDiagnostics diag;
    diag.lambda = cfg.damping;
    const Vector d = solve_system(sys, cfg, Vector(), &diag.lambda);
    net.add_scaled(d, sv.h);
    state.l2.w = w;
    state.l2.prev_grad = lg.grad;
    state.l2.prev_beta = sv.beta;
    diag.loss = lg.loss;
    diag.d_norm = d.norm();
    return diag;
  }
  // s = -1: track D Psi pointwise; needs D(dL/drho).
  const auto sv = sched.at(k);
  const double loss = problem.loss(net);
  if (!std::isfinite(loss)) throw NumericError("hs_step: non-finite loss");
  const auto ops = first_order_ops(net.input_dim());
  require(state.dpsi.size() == ops.size(), "hs_step: state arity mismatch");
  std::vector<Vector> z(ops.size());
  for (size_t i = 0; i < ops.size(); ++i) {
    const Vector dfv = problem.first_variation_deriv(net, ops[i]);
    state.dpsi[i] = sv.mu * state.dpsi[i] -
                    sv.h * (sv.gamma - sv.beta_dot - sv.alpha * sv.beta) * dfv;
    z[i] = state.dpsi[i] - sv.beta * dfv;
  }
  TangentSystem sys = build_hs_neg_system(net, problem.batch(), z, -1);
  StepDiagnostics diag;
  diag.lambda = cfg.damping;
  const Vector d = solve_system(sys, cfg, Vector(), &diag.lambda);
  net.add_scaled(d, sv.h);
  diag.loss = loss;
  diag.d_norm = d.norm();
  return diag;
}

// ---------------------------------------------------------------------------
// Fisher-Rao path (Algorithm: accelerated Fisher-Rao NGD).

struct FrState {
  Vector d_prev;  // d_{-1} = 0
  std::unique_ptr<LogDensityModel> prev_model;  // theta_{k-1} snapshot
  double prev_beta = 0.0;

  static FrState init(int p) {
    FrState s;
    s.d_prev = Vector::Zero(p);
    return s;
  }
};

struct ParticleStepConfig {
  double mala_step = 0.05;
  int mala_steps = 3;
};

inline StepDiagnostics fisher_rao_angd_step(LogDensityModel& model, Matrix& particles,
                                            FrState& state, const DensityProblem& problem,
                                            const Schedule& sched, int k,
                                            const SolveConfig& cfg,
                                            const ParticleStepConfig& pcfg,
                                            std::mt19937_64& rng) {
  const auto sv = sched.at(k);
  const int n = static_cast<int>(particles.rows());
  const KlVariation kv = problem.kl_variation(model, particles);

  // Phi-bar_{k-1} at the current samples, re-estimated from d_{k-1}.
  Vector phi_prev = Vector::Zero(n);
  Vector dl_prev = Vector::Zero(n);
  if (state.prev_model) {
    phi_prev = centered_scores(*state.prev_model, particles) * state.d_prev;
    dl_prev = problem.kl_variation(*state.prev_model, particles).centered_values;
  }
  const Vector psi_prev = phi_prev + state.prev_beta * dl_prev;

  Vector phi = (1.0 - sv.h * sv.alpha) * phi_prev.array().matrix() -
               (sv.h / 2.0) * (phi_prev.array() * psi_prev.array()).matrix() +
               (sv.beta - sv.h * sv.beta_dot - sv.h * sv.gamma) * kv.centered_values -
               state.prev_beta * dl_prev;
  phi.array() -= phi.mean();  // centralization does not influence the update

  state.prev_model = model.clone();  // theta_k snapshot for the next iteration
  TangentSystem sys = build_fisher_rao_system(model, particles, phi);
  SolveConfig solve_cfg = cfg;
  if (solve_cfg.tag != SolveConfig::Tag::GramMinNorm)
    solve_cfg.tag = SolveConfig::Tag::ProjectedMomentum;
  StepDiagnostics diag;
  diag.lambda = cfg.damping;
  const Vector d = solve_system(sys, solve_cfg, state.d_prev, &diag.lambda);
  model.set_params(model.params() + sv.h * d);
  state.d_prev = d;
  state.prev_beta = sv.beta;

  const auto stats = mala_resample(model, particles, pcfg.mala_step, pcfg.mala_steps, rng);
  diag.d_norm = d.norm();
  diag.residual = (sys.O * d - sys.b).norm();
  diag.accept_rate = stats.acceptance_rate();
  return diag;
}

// ---------------------------------------------------------------------------
// Wasserstein-2 path (Algorithm: accelerated W2 NGD, beta == 0 regime).

struct W2State {
  Matrix V;  // n x d particle velocities, V_0 = 0

  static W2State init(int n, int d) {
    W2State s;
    s.V = Matrix::Zero(n, d);
    return s;
  }
};

inline StepDiagnostics w2_angd_step(LogDensityModel& model, Matrix& particles,
                                    W2State& state, const DensityProblem& problem,
                                    const Schedule& sched, int k, const SolveConfig& cfg,
                                    const ParticleStepConfig& pcfg,
                                    std::mt19937_64& rng) {
  const auto sv = sched.at(k);
  require(sv.beta == 0.0, "w2_angd_step: beta must be identically zero");
  const KlVariation kv = problem.kl_variation(model, particles);

  state.V = (1.0 - sv.alpha * sv.h) * state.V - sv.h * kv.gradients;
  TangentSystem sys = build_w2_system(model, particles, state.V);

  StepDiagnostics diag;
  diag.lambda = cfg.damping;
  Vector d;
  if (cfg.tag == SolveConfig::Tag::Kfac) {
    const auto* energy = dynamic_cast<const EnergyNetDensity*>(&model);
    if (!energy)
      throw CapabilityError("w2_angd_step: KFAC solve needs a net-backed density");
    const auto kf = kfac_factors_from(
        layer_factors(energy->net(), particles, DerivOp::identity()));
    diag.lambda = effective_damping(sys, cfg);
    d = kfac_solve(kf, sys.rhs_v, diag.lambda);
  } else {
    d = solve_system(sys, cfg, Vector(), &diag.lambda);
  }
  model.set_params(model.params() + sv.h * d);
  particles += sv.h * state.V;
  const auto stats = mala_resample(model, particles, pcfg.mala_step, pcfg.mala_steps, rng);

  diag.d_norm = d.norm();
  diag.accept_rate = stats.acceptance_rate();
  return diag;
}

// ---------------------------------------------------------------------------
// Plain first-order baselines (parameter-vector updates).

inline void sgd_update(Vector& theta, const Vector& grad, double h) {
  theta -= h * grad;
}

struct AdamState {
  Vector m, v;
  int t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  static AdamState init(int p, double beta1 = 0.9, double beta2 = 0.999,
                        double weight_decay = 0.0) {
    AdamState s;
    s.m = Vector::Zero(p);
    s.v = Vector::Zero(p);
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.weight_decay = weight_decay;
    return s;
  }
};

inline void adam_update(Vector& theta, AdamState& st, const Vector& grad, double h) {
  Vector g = grad;
  if (st.weight_decay != 0.0) g += st.weight_decay * theta;
  ++st.t;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * g;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * g.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(st.beta1, st.t);
  const double bc2 = 1.0 - std::pow(st.beta2, st.t);
  theta -= (h / bc1) * st.m.cwiseQuotient(
                           ((st.v / bc2).cwiseSqrt().array() + st.eps).matrix());
}

}  // namespace angd
