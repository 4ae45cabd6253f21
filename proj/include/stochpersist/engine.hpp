#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stochpersist/env.hpp"
#include "stochpersist/models.hpp"
#include "stochpersist/stats.hpp"

namespace stochpersist {

/// A measurable set of states whose occupation is tracked.
struct SetDescriptor {
  enum class Kind { ExtinctionNeighborhood, OutsideBall, Box };

  Kind kind = Kind::ExtinctionNeighborhood;
  double radius = 0.01;  // eta for S_eta, a for the ball
  Eigen::VectorXd lo, hi;
  bool complement = false;

  static SetDescriptor extinction_neighborhood(double eta);
  /// States with max-norm strictly greater than a.
  static SetDescriptor outside_ball(double a);
  static SetDescriptor box(Eigen::VectorXd lo, Eigen::VectorXd hi);
  SetDescriptor complemented() const;

  std::string label() const;
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x, const ModelSpec& m) const;
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x, ExtinctionSet s0) const;
};

/// Observable h averaged along trajectories.
struct Functional {
  enum class Kind { Coordinate, LogPerCapita, Indicator, LogNorm };

  Kind kind = Kind::Coordinate;
  std::size_t index = 0;
  SetDescriptor set;

  static Functional coordinate(std::size_t i) { return {Kind::Coordinate, i, {}}; }
  /// log f_i(X_s, xi_{s+1}), the realised per-capita growth of species i.
  static Functional log_percapita(std::size_t i) { return {Kind::LogPerCapita, i, {}}; }
  static Functional indicator(SetDescriptor s) { return {Kind::Indicator, 0, std::move(s)}; }
  /// log of the 1-norm of the state.
  static Functional log_norm() { return {Kind::LogNorm, 0, {}}; }

  std::string label() const;
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::size_t replicates = 1;
  long burn_in = 0;
  long horizon = 1000;
  long thinning = 1;
  /// Unset means "random_interior".
  std::optional<Eigen::VectorXd> initial_state;
  /// When non-empty, random interior starts are drawn on this face (0-based
  /// species) and every other coordinate starts at exactly zero.
  std::vector<std::size_t> face_support;
  std::vector<double> eta_grid{0.01};
  double bound_radius = 1e3;
  std::vector<SetDescriptor> sets;
  std::vector<Functional> functionals;
  long batches = 20;
  /// Affects speed only.
  unsigned threads = 1;
  /// Keep at most this many thinned samples per replicate (0 keeps none).
  std::size_t max_samples = 100000;
};

void validate(const SimConfig& cfg);

struct EmpiricalSummary {
  std::uint64_t replicate = 0;
  std::map<std::string, double> occupation;
  std::vector<Eigen::VectorXd> thinned_samples;
  std::map<std::string, RateEstimate> functional_averages;
  Eigen::VectorXd terminal_state;
  bool extinct = false;
  long extinction_step = -1;
};

struct SimulationResult {
  std::vector<EmpiricalSummary> replicates;
  /// Occupations averaged and estimates pooled in replicate order; thinned
  /// samples concatenated in replicate order.
  EmpiricalSummary pooled;
  double extinct_fraction = 0.0;
};

/// Canonical random-interior start: uniform on [0.1, 1]^k (orthant) or
/// uniform on the simplex with every coordinate >= 0.01.
Eigen::VectorXd random_interior(const ModelSpec& m, Stream& stream);

Eigen::VectorXd initial_state(const ModelSpec& m, const SimConfig& cfg, Stream& stream);

/// Runs `cfg.replicates` trajectories; statistics cover X_B .. X_{T-1}.
SimulationResult simulate(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg);

/// Time average of `h` over the post-burn-in window, pooled over replicates.
RateEstimate ergodic_average(const ModelSpec& m, const EnvSpec& env, SimConfig cfg, const Functional& h);

/// Fraction of replicates with X_t in `set`, binomial SE.
RateEstimate ensemble_hit_probability(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                      const SetDescriptor& set, long t);

struct AffineChainResult {
  EmpiricalSummary summary;
  bool diverged = false;
  /// Mean of log Z over ten consecutive windows of the post-burn-in path.
  std::vector<double> window_log_means;
};

/// Z_{t+1} = alpha_{t+1} Z_t + beta_{t+1}, simulated in log space. Uses the
/// first replicate stream of `cfg`; Z_0 is cfg.initial_state[0] or 1.
AffineChainResult auxiliary_affine_chain(const Coef& alpha, const Coef& beta, const EnvSpec& env,
                                         const SimConfig& cfg);

struct DominanceReport {
  long steps = 0;
  long violations = 0;
  /// Largest V(X_t) - Z_t seen (<= 0 when the chain dominates).
  double max_excess = -HUGE_VAL;
};

/// Couples the model with its dominating affine chain driven by the same
/// environment draws and counts the steps with V(X_t) > Z_t.
DominanceReport coupled_dominance(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                  const std::function<double(const Eigen::VectorXd&)>& lyapunov,
                                  const std::function<double(const Eigen::VectorXd&)>& alpha,
                                  const std::function<double(const Eigen::VectorXd&)>& beta);

/// Runs fn(r) for r in [0, n) on up to `threads` workers. Exceptions are
/// rethrown for the lowest failing index, so failures are deterministic too.
void for_each_replicate(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace stochpersist
