#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochpersist/engine.hpp"
#include "stochpersist/env.hpp"
#include "stochpersist/models.hpp"
#include "stochpersist/stats.hpp"

namespace stochpersist {

/// Estimates within this many standard errors of zero are not decisive.
inline constexpr double kDecisionSigmas = 3.0;

enum class VerdictKind { Extinction, Explosion, Persistent, Inconclusive };
std::string to_string(VerdictKind v);

struct Verdict {
  VerdictKind kind = VerdictKind::Inconclusive;
  std::map<std::string, RateEstimate> evidence;
  /// Smallest |estimate| / SE among the quantities that decided the verdict.
  double decision_margin = 0.0;
  bool simulation_agrees = false;
  std::vector<std::string> notes;
};

/// lambda_i(x) = E[log f_i(x, xi)] from n independent draws (n >= 1000).
/// Deterministic environments give the exact value with zero SE.
RateEstimate mean_percapita_growth_at(const ModelSpec& m, const EnvSpec& env, const Eigen::VectorXd& x,
                                      std::size_t species, long n, std::uint64_t seed = 1);

/// Per-species average log growth along a trajectory started in the
/// interior of the face `support` (0-based).
struct FaceRates {
  std::vector<std::size_t> support;
  std::vector<RateEstimate> rates;
  bool degenerate = false;
  std::string note;
  std::vector<Eigen::VectorXd> samples;
};

FaceRates face_growth_rates(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                            const std::vector<std::size_t>& support);

/// Ergodic estimate of lambda_invader(mu) for the measure sampled on the
/// resident face. Throws FaceDegenerateError if a resident hits the
/// extinction floor.
RateEstimate invasion_rate(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg, std::size_t invader,
                           const std::vector<std::size_t>& resident_support);

struct FaceRow {
  std::vector<std::size_t> support;
  /// "simulated", "vertex_dirac" or "origin_dirac".
  std::string source;
  std::vector<RateEstimate> rates;
  /// Entries whose measure is known analytically (Dirac rows).
  std::vector<bool> analytic;
  bool degenerate = false;
  std::string note;

  /// Largest rate among species outside the support.
  std::optional<RateEstimate> max_outside() const;
};

enum class PermanenceVerdict { Persistent, NotPermanent, Inconclusive };
std::string to_string(PermanenceVerdict v);

struct InvasionTable {
  std::size_t species = 0;
  std::vector<FaceRow> rows;
  PermanenceVerdict verdict = PermanenceVerdict::Inconclusive;
  std::string measure_note = "one sampled ergodic measure per face";
};

struct ReportOptions {
  /// Extra starts per face (full-dimension states); each adds a row.
  std::vector<Eigen::VectorXd> alternative_starts;
  /// Draws for Dirac rows.
  long dirac_draws = 100000;
};

/// Enumerates every proper face (plus the origin for orthant models) and
/// fills lambda_i(mu) for one ergodic measure per face. RPS faces use the
/// three vertex Diracs directly.
InvasionTable boundary_invasion_report(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                       const ReportOptions& options = {});

struct WeightsResult {
  bool feasible = false;
  Eigen::VectorXd p;
  /// min over rows of sum_i p_i lambda_i - 3 * aggregated SE at the returned p.
  double margin = -HUGE_VAL;
};

/// Robust margin of a weight vector against every non-degenerate row;
/// species inside a row's support contribute exactly zero.
double weights_margin(const InvasionTable& table, const Eigen::VectorXd& p);

/// Maximin search for p > 0 with sum_i p_i lambda_i(mu) > 3 SE on every row:
/// simplex grid (1/200 for k <= 3, coarser for larger k) then local zooming.
WeightsResult find_persistence_weights(const InvasionTable& table);

struct ClassifyOptions {
  long draws = 100000;
  double x_max = 1e6;
  bool run_simulation = true;
};

/// Extinction / explosion / persistence trichotomy for a decreasing scalar
/// per-capita growth f, plus a confirming simulation with `cfg`.
Verdict scalar_classify(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                        const ClassifyOptions& options = {});

using StateFunction = std::function<double(const Eigen::VectorXd&)>;

/// V(F(x, w)) <= alpha(w) V(x) + beta(w) for all x, w.
struct DriftConstruction {
  std::string name;
  StateFunction lyapunov;
  StateFunction alpha;  // evaluated on the environment vector
  StateFunction beta;
};

/// "sum" (x_1 + ... + x_k, "identity" for scalars) or "max".
StateFunction named_lyapunov(const std::string& name);

/// Smallest M = 2^j with E[log f(M, xi)] < -eps at 3 SE.
double choose_drift_threshold(const ModelSpec& m, const EnvSpec& env, double eps = 0.1, std::uint64_t seed = 1);

/// V(x) = x, alpha = f(M, w), beta = f(0, w) M for decreasing scalar f.
DriftConstruction scalar_drift_construction(const ModelSpec& m, double threshold);
/// V(x) = x_1 + x_2, alpha = 1/2, beta = e^{xi^1 - 1} + e^{xi^2 - 1}
/// (x e^{r - x} <= e^{r - 1}).
DriftConstruction ricker_competition_drift_construction(const ModelSpec& m);
/// V(x) = x with the model's own alpha and beta.
DriftConstruction affine_drift_construction(const ModelSpec& m);

/// Random audit points: each orthant coordinate is exactly zero with
/// probability zero_fraction, otherwise log-uniform on [lo, hi]; simplex
/// models draw uniformly on the simplex.
struct StateSampler {
  double lo = 1e-6;
  double hi = 1e6;
  double zero_fraction = 0.05;

  Eigen::VectorXd draw(const ModelSpec& m, Stream& stream) const;
};

struct DriftBoundedReport {
  std::string construction;
  RateEstimate log_alpha;
  RateEstimate log_plus_alpha;
  RateEstimate log_plus_beta;
  long audited = 0;
  long violations = 0;
  std::optional<Eigen::VectorXd> counterexample_state;
  std::optional<Eigen::VectorXd> counterexample_env;
  bool hypotheses_hold = false;
};

DriftBoundedReport drift_bounded_check(const ModelSpec& m, const EnvSpec& env, const DriftConstruction& c, long n,
                                       std::uint64_t seed = 1, const StateSampler& sampler = {});

struct DriftErgodicReport {
  long audited = 0;
  long violations = 0;
  double worst_slack = HUGE_VAL;
  Eigen::VectorXd worst_state;
  bool holds = false;
};

/// Audits E[V(X_1) | X_0 = x] <= (1 - beta) V(x) + 1_C(x) at n sampled x by
/// inner Monte Carlo over one shared set of environment draws. Advisory:
/// irreducibility is not checked.
DriftErgodicReport drift_ergodic_check(const ModelSpec& m, const EnvSpec& env, const StateFunction& lyapunov,
                                       const SetDescriptor& small_set, double beta, long n, long inner_draws = 1000,
                                       std::uint64_t seed = 1, const StateSampler& sampler = {});

enum class ConditionVerdict { Holds, Fails, Inconclusive };
std::string to_string(ConditionVerdict v);

struct RpsConditionReport {
  double d = 0.0;
  /// E[log(1-d+d alpha/beta)] + E[log(1-d+d gamma/beta)]
  RateEstimate exact_lhs;
  /// E[alpha/beta] + E[gamma/beta] - 2
  RateEstimate small_d_lhs;
  ConditionVerdict exact = ConditionVerdict::Inconclusive;
  ConditionVerdict small_d = ConditionVerdict::Inconclusive;
};

RpsConditionReport rps_condition(const ModelSpec& m, const EnvSpec& env, long n, std::uint64_t seed = 1);

struct TaylorRate {
  RateEstimate estimate;
  std::vector<std::string> warnings;
};

/// First-order (in d) lottery invasion rate
///   -d + d * mean_x E[xi_i / sum_j x_j xi_j]
/// over boundary samples; the inner expectation uses `inner_draws` draws.
TaylorRate lottery_taylor_rate(const ModelSpec& m, const EnvSpec& env, const std::vector<Eigen::VectorXd>& face_samples,
                               std::size_t invader, long inner_draws = 100, std::uint64_t seed = 1,
                               long batches = 20);

}  // namespace stochpersist
