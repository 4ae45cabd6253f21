#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochpersist/engine.hpp"
#include "stochpersist/env.hpp"
#include "stochpersist/models.hpp"
#include "stochpersist/special.hpp"
#include "stochpersist/stats.hpp"

namespace stochpersist {

enum class NormKind { L1, Max };

template <class Derived>
double vector_norm(const Eigen::MatrixBase<Derived>& v, NormKind norm) {
  return norm == NormKind::L1 ? v.template lpNorm<1>() : v.template lpNorm<Eigen::Infinity>();
}

/// Dominant Lyapunov exponent of the linearization v <- A(0, xi) v, estimated
/// as the average one-step log growth of ||v|| with v renormalized every step.
/// The initial vector (cfg.initial_state, default all ones) is normalized
/// before the first step. Burn-in steps are discarded; replicates pooled.
RateEstimate lyapunov_mc(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg, NormKind norm = NormKind::L1);

/// Inputs of the closed-form biennial exponent with Gamma(k, theta) seed yield.
struct GammaClosedFormInput {
  double p = 0.5;
  double a = 0.5;
  double theta = 1.0;
  double k = 1.0;
  double rel_tol = 1e-10;
};

void validate(const GammaClosedFormInput& in);

/// Decay rate of the stationary density of u = X1 / ((1-p) X2) under the
/// linearized biennial dynamics: a (1-p)^2 / (theta p).
double roerdink_z(const GammaClosedFormInput& in);
/// (1-p)^2 / (theta p): the a = 1 special case of roerdink_z, kept for reports.
double roerdink_z_as_printed(const GammaClosedFormInput& in);

struct RoerdinkResult {
  double gamma = 0.0;
  /// Propagated quadrature error bound.
  double error = 0.0;
  long evaluations = 0;
  double z = 0.0;
  /// p actually evaluated (capped at 1 - 1e-6 in the interior branch).
  double p_used = 0.0;
  std::string branch;
};

/// gamma = ln(a(1-p)) + N/K with
///   K = int_0^inf t^{k-1} (1+t)^{-k} e^{-z t} dt,  N = same with ln(1+t),
/// evaluated after the substitution v = ln(1+t) (and v = s^{1/k} for k < 1).
/// p = 0 returns ln a; p = 1 returns the extrapolated p -> 1 quadrature limit.
RoerdinkResult roerdink_gamma(const GammaClosedFormInput& in);

struct RoerdinkP1Report {
  /// Interior formula at p = 1 - 1e-6.
  double at_cap = 0.0;
  /// Quadratic extrapolation in 1/ln(1/z) from p = 1 - 10^-j, j = 3..8.
  double extrapolated_limit = 0.0;
  /// 1/2 (ln(a theta) + psi(a)) and 1/2 (ln(a theta) + psi(k)).
  double candidate_psi_a = 0.0;
  double candidate_psi_k = 0.0;
  double discrepancy_psi_a = 0.0;
  double discrepancy_psi_k = 0.0;
};

RoerdinkP1Report roerdink_p1_report(const GammaClosedFormInput& in);

/// Biennial model with its seed yield wired to a new Gamma(k, theta)
/// coordinate appended to `env`.
ModelSpec biennial_with_gamma_yield(const GammaClosedFormInput& in, EnvSpec& env, double b1 = 1.0, double b2 = 1.0);

}  // namespace stochpersist
