#include "stochpersist/lyap.hpp"

#include <cmath>

#include "stochpersist/errors.hpp"
#include "stochpersist/quadrature.hpp"

namespace stochpersist {

namespace {

constexpr double kPCap = 1.0 - 1e-6;
// exp(-745) underflows to zero
constexpr double kExpCutoff = 745.0;

struct Integrals {
  QuadratureResult<double> k_int, n_int;
};

Integrals roerdink_integrals(double z, double k, double rel_tol) {
  const double v_max = std::log1p(kExpCutoff / z);
  Integrals out;
  if (k < 1.0) {
    // v = s^{1/k} absorbs the v^{k-1} endpoint singularity.
    const double s_max = std::pow(v_max, k);
    auto weight = [z, k](double s) {
      const double v = std::pow(s, 1.0 / k);
      const double ratio = v > 0.0 ? -std::expm1(-v) / v : 1.0;
      return std::pow(ratio, k - 1.0) * std::exp(-z * std::expm1(v)) / k;
    };
    out.k_int = adaptive_simpson(weight, 0.0, s_max, rel_tol);
    out.n_int = adaptive_simpson([&](double s) { return std::pow(s, 1.0 / k) * weight(s); }, 0.0, s_max, rel_tol);
  } else {
    auto weight = [z, k](double v) {
      const double head = k == 1.0 ? 1.0 : std::pow(-std::expm1(-v), k - 1.0);
      return head * std::exp(-z * std::expm1(v));
    };
    out.k_int = adaptive_simpson(weight, 0.0, v_max, rel_tol);
    out.n_int = adaptive_simpson([&](double v) { return v * weight(v); }, 0.0, v_max, rel_tol);
  }
  return out;
}

RoerdinkResult interior(const GammaClosedFormInput& in, double p) {
  GammaClosedFormInput at = in;
  at.p = p;
  RoerdinkResult out;
  out.p_used = p;
  out.z = roerdink_z(at);
  const auto ints = roerdink_integrals(out.z, in.k, in.rel_tol);
  const double ratio = ints.n_int.value / ints.k_int.value;
  out.gamma = std::log(in.a * (1.0 - p)) + ratio;
  out.error = std::fabs(ratio) * (ints.n_int.error / std::fabs(ints.n_int.value) +
                                  ints.k_int.error / std::fabs(ints.k_int.value));
  out.evaluations = ints.n_int.evaluations + ints.k_int.evaluations;
  out.branch = p < in.p ? "interior (p capped at 1 - 1e-6)" : "interior";
  if (!std::isfinite(out.gamma)) throw NumericError("roerdink_gamma: non-finite result");
  return out;
}

}  // namespace

RateEstimate lyapunov_mc(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg, NormKind norm) {
  validate(cfg);
  validate(env);
  validate(m, env);
  if (!is_structured(m)) throw ConfigError("lyapunov_mc needs a structured model (biennial or linear_matrix)");
  const Eigen::Index k = dimension(m);
  Eigen::VectorXd v0 = cfg.initial_state ? *cfg.initial_state : Eigen::VectorXd::Ones(k);
  if (v0.size() != k || !(v0.array() > 0.0).all()) throw ConfigError("lyapunov_mc needs a strictly positive start");

  std::vector<RateEstimate> parts(cfg.replicates);
  for_each_replicate(cfg.replicates, cfg.threads, [&](std::size_t r) {
    Stream stream(cfg.seed, r);
    Eigen::VectorXd v = v0 / vector_norm(v0, norm);
    Eigen::VectorXd omega(env.dim());
    Eigen::ArrayXd growth(cfg.horizon - cfg.burn_in);
    for (long t = 0; t < cfg.horizon; ++t) {
      sample_into(env, stream, omega);
      v = linearization_at_zero(m, omega) * v;
      const double n = vector_norm(v, norm);
      if (!(n > 0.0) || !std::isfinite(n))
        throw NumericError("lyapunov_mc: product vector collapsed to zero (primitivity violated)", v, t + 1);
      v /= n;
      if (t >= cfg.burn_in) growth[t - cfg.burn_in] = std::log(n);
    }
    parts[r] = batch_means(growth, cfg.batches);
  });
  return pool(parts);
}

void validate(const GammaClosedFormInput& in) {
  if (!(in.p >= 0.0 && in.p <= 1.0)) throw ConfigError("roerdink: p must lie in [0,1]");
  if (!(in.a > 0.0 && in.a < 1.0)) throw ConfigError("roerdink: a must lie in (0,1)");
  if (!(in.theta > 0.0) || !(in.k > 0.0)) throw ConfigError("roerdink: theta and k must be positive");
  if (!(in.rel_tol > 0.0)) throw ConfigError("roerdink: rel_tol must be positive");
}

double roerdink_z(const GammaClosedFormInput& in) {
  return in.a * (1.0 - in.p) * (1.0 - in.p) / (in.theta * in.p);
}

double roerdink_z_as_printed(const GammaClosedFormInput& in) {
  return (1.0 - in.p) * (1.0 - in.p) / (in.theta * in.p);
}

RoerdinkResult roerdink_gamma(const GammaClosedFormInput& in) {
  validate(in);
  if (in.p == 0.0) {
    RoerdinkResult out;
    out.gamma = std::log(in.a);
    out.branch = "p=0";
    out.z = HUGE_VAL;
    return out;
  }
  if (in.p == 1.0) {
    const auto report = roerdink_p1_report(in);
    RoerdinkResult out;
    out.gamma = report.extrapolated_limit;
    out.error = std::fabs(report.extrapolated_limit - report.at_cap);
    out.branch = "p=1 (extrapolated quadrature limit)";
    out.p_used = 1.0;
    out.z = 0.0;
    return out;
  }
  return interior(in, std::min(in.p, kPCap));
}

RoerdinkP1Report roerdink_p1_report(const GammaClosedFormInput& in) {
  validate(in);
  RoerdinkP1Report out;
  out.at_cap = interior(in, kPCap).gamma;
  constexpr int kPoints = 6;
  Eigen::MatrixXd design(kPoints, 3);
  Eigen::VectorXd values(kPoints);
  for (int j = 0; j < kPoints; ++j) {
    const double p = 1.0 - std::pow(10.0, -(j + 3));
    GammaClosedFormInput at = in;
    at.p = p;
    const double u = 1.0 / std::log(1.0 / roerdink_z(at));
    design.row(j) << 1.0, u, u * u;
    values[j] = interior(in, p).gamma;
  }
  const Eigen::Vector3d coef = design.colPivHouseholderQr().solve(values);
  out.extrapolated_limit = coef[0];
  out.candidate_psi_a = 0.5 * (std::log(in.a * in.theta) + digamma(in.a));
  out.candidate_psi_k = 0.5 * (std::log(in.a * in.theta) + digamma(in.k));
  out.discrepancy_psi_a = std::fabs(out.candidate_psi_a - out.extrapolated_limit);
  out.discrepancy_psi_k = std::fabs(out.candidate_psi_k - out.extrapolated_limit);
  return out;
}

ModelSpec biennial_with_gamma_yield(const GammaClosedFormInput& in, EnvSpec& env, double b1, double b2) {
  validate(in);
  const std::size_t coord = env.add(dist::Gamma{in.k, in.theta});
  return model::Biennial{in.p, in.a, b1, b2, Coef::env(coord)};
}

}  // namespace stochpersist
