#include "stochpersist/persist.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "stochpersist/errors.hpp"

namespace stochpersist {

namespace {

constexpr std::uint64_t kDiracStream = 0x5d1ac0ffee5ULL;

bool positive_support(const ScalarDist& d) {
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, dist::Constant>) {
          return x.value > 0.0;
        } else if constexpr (std::is_same_v<T, dist::Normal>) {
          return false;
        } else if constexpr (std::is_same_v<T, dist::Uniform>) {
          return x.lo > 0.0;
        } else if constexpr (std::is_same_v<T, dist::Discrete>) {
          return std::all_of(x.values.begin(), x.values.end(), [](double v) { return v > 0.0; });
        } else {
          return true;  // log-normal, gamma
        }
      },
      d);
}

bool strictly_positive(const Coef& c, const EnvSpec& env) {
  return c.coord ? positive_support(env.coords[*c.coord]) : c.value > 0.0;
}

bool is_zero(const Coef& c) { return !c.coord && c.value == 0.0; }

RateEstimate minus_infinity() { return exact_estimate(-HUGE_VAL); }

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::size_t> support_of(const Eigen::VectorXd& x) {
  std::vector<std::size_t> s;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] > 0.0) s.push_back(static_cast<std::size_t>(i));
  return s;
}

bool in_support(const std::vector<std::size_t>& support, std::size_t i) {
  return std::find(support.begin(), support.end(), i) != support.end();
}

ConditionVerdict condition_verdict(const RateEstimate& e) {
  if (e.significantly_positive(kDecisionSigmas)) return ConditionVerdict::Holds;
  if (e.significantly_negative(kDecisionSigmas)) return ConditionVerdict::Fails;
  return ConditionVerdict::Inconclusive;
}

FaceRow dirac_row(const ModelSpec& m, const EnvSpec& env, const std::vector<std::size_t>& support,
                  const std::string& source, long draws, std::uint64_t seed) {
  const Eigen::Index k = dimension(m);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
  for (auto i : support) x[static_cast<Eigen::Index>(i)] = 1.0;
  FaceRow row;
  row.support = support;
  row.source = source;
  for (Eigen::Index i = 0; i < k; ++i) {
    row.rates.push_back(mean_percapita_growth_at(m, env, x, static_cast<std::size_t>(i), draws, seed));
    row.analytic.push_back(true);
  }
  return row;
}

FaceRow simulated_row(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                      const std::vector<std::size_t>& support) {
  FaceRates fr = face_growth_rates(m, env, cfg, support);
  FaceRow row;
  row.support = fr.support;
  row.source = "simulated";
  row.rates = std::move(fr.rates);
  row.analytic.assign(row.rates.size(), false);
  row.degenerate = fr.degenerate;
  row.note = fr.note;
  return row;
}

/// Interior points of the simplex grid with spacing 1/n.
void for_each_composition(long n, long k, const std::function<void(const Eigen::VectorXd&)>& fn) {
  std::vector<long> parts(static_cast<std::size_t>(k), 1);
  Eigen::VectorXd p(k);
  std::function<void(long, long)> rec = [&](long idx, long remaining) {
    if (idx == k - 1) {
      parts[static_cast<std::size_t>(idx)] = remaining;
      for (long i = 0; i < k; ++i) p[i] = static_cast<double>(parts[static_cast<std::size_t>(i)]) / static_cast<double>(n);
      fn(p);
      return;
    }
    for (long v = 1; v <= remaining - (k - 1 - idx); ++v) {
      parts[static_cast<std::size_t>(idx)] = v;
      rec(idx + 1, remaining - v);
    }
  };
  rec(0, n);
}

}  // namespace

std::string to_string(VerdictKind v) {
  switch (v) {
    case VerdictKind::Extinction:
      return "extinction";
    case VerdictKind::Explosion:
      return "explosion";
    case VerdictKind::Persistent:
      return "persistent";
    case VerdictKind::Inconclusive:
      return "inconclusive";
  }
  return {};
}

std::string to_string(PermanenceVerdict v) {
  switch (v) {
    case PermanenceVerdict::Persistent:
      return "persistent";
    case PermanenceVerdict::NotPermanent:
      return "not_permanent";
    case PermanenceVerdict::Inconclusive:
      return "inconclusive";
  }
  return {};
}

std::string to_string(ConditionVerdict v) {
  switch (v) {
    case ConditionVerdict::Holds:
      return "holds";
    case ConditionVerdict::Fails:
      return "fails";
    case ConditionVerdict::Inconclusive:
      return "inconclusive";
  }
  return {};
}

RateEstimate mean_percapita_growth_at(const ModelSpec& m, const EnvSpec& env, const Eigen::VectorXd& x,
                                      std::size_t species, long n, std::uint64_t seed) {
  validate(env);
  validate(m, env);
  if (n < 1000) throw ConfigError("mean_percapita_growth_at needs at least 1000 draws");
  if (x.size() != dimension(m)) throw ConfigError("state dimension does not match " + model_name(m));
  if (static_cast<Eigen::Index>(species) >= x.size()) throw ConfigError("species index out of range");
  Stream stream(seed, kDiracStream);
  Eigen::VectorXd omega(env.dim());
  if (env.deterministic()) {
    sample_into(env, stream, omega);
    RateEstimate e = exact_estimate(log_percapita_growth(m, x, omega, species));
    e.n = n;
    return e;
  }
  Eigen::ArrayXd values(n);
  for (long j = 0; j < n; ++j) {
    sample_into(env, stream, omega);
    values[j] = log_percapita_growth(m, x, omega, species);
  }
  if (!values.allFinite()) throw NumericError("non-finite log growth rate at the requested state", x);
  return iid_estimate(values);
}

FaceRates face_growth_rates(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                            const std::vector<std::size_t>& support) {
  if (!is_multiplicative(m)) throw ConfigError("face growth rates need a multiplicative model");
  const Eigen::Index k = dimension(m);
  const auto sorted = sorted_unique(support);
  if (sorted.size() != support.size()) throw ConfigError("duplicate species in face support");
  if (sorted.empty()) throw ConfigError("face support must be non-empty");
  for (auto i : sorted)
    if (static_cast<Eigen::Index>(i) >= k) throw ConfigError("face support refers to a missing species");

  SimConfig c = cfg;
  c.face_support = sorted;
  if (c.initial_state && support_of(*c.initial_state) != sorted) c.initial_state.reset();
  c.functionals.clear();
  for (Eigen::Index i = 0; i < k; ++i) c.functionals.push_back(Functional::log_percapita(static_cast<std::size_t>(i)));

  const auto result = simulate(m, env, c);
  FaceRates out;
  out.support = sorted;
  for (const auto& h : c.functionals) out.rates.push_back(result.pooled.functional_averages.at(h.label()));
  for (const auto& rep : result.replicates) {
    if (rep.extinct) {
      out.degenerate = true;
      out.note = "residents reached the extinction floor in replicate " + std::to_string(rep.replicate) +
                 " at step " + std::to_string(rep.extinction_step);
      break;
    }
  }
  out.samples = result.pooled.thinned_samples;
  return out;
}

RateEstimate invasion_rate(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg, std::size_t invader,
                           const std::vector<std::size_t>& resident_support) {
  if (static_cast<Eigen::Index>(invader) >= dimension(m)) throw ConfigError("invader index out of range");
  if (in_support(resident_support, invader)) throw ConfigError("the invader must not belong to the resident face");
  const FaceRates fr = face_growth_rates(m, env, cfg, resident_support);
  if (fr.degenerate) throw FaceDegenerateError("face degenerate: " + fr.note);
  return fr.rates[invader];
}

std::optional<RateEstimate> FaceRow::max_outside() const {
  std::optional<RateEstimate> best;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (in_support(support, i)) continue;
    if (!best || rates[i].mean > best->mean) best = rates[i];
  }
  return best;
}

InvasionTable boundary_invasion_report(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                       const ReportOptions& options) {
  validate(cfg);
  validate(env);
  validate(m, env);
  if (!is_multiplicative(m)) throw ConfigError("boundary invasion reports need a multiplicative model");
  const auto k = static_cast<std::size_t>(dimension(m));
  if (k > 6) throw ConfigError("boundary invasion reports enumerate faces for at most 6 species");

  InvasionTable table;
  table.species = k;
  const bool simplex = state_space(m) == StateSpace::Simplex;
  if (m.as<model::RpsLottery>()) {
    for (std::size_t j = 0; j < k; ++j)
      table.rows.push_back(dirac_row(m, env, {j}, "vertex_dirac", options.dirac_draws, cfg.seed));
  } else {
    if (!simplex) table.rows.push_back(dirac_row(m, env, {}, "origin_dirac", options.dirac_draws, cfg.seed));
    for (std::size_t size = 1; size < k; ++size) {
      for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
        std::vector<std::size_t> support;
        for (std::size_t i = 0; i < k; ++i)
          if (mask & (std::size_t{1} << i)) support.push_back(i);
        if (simplex && size == 1)
          table.rows.push_back(dirac_row(m, env, support, "vertex_dirac", options.dirac_draws, cfg.seed));
        else
          table.rows.push_back(simulated_row(m, env, cfg, support));
      }
    }
    for (const auto& x0 : options.alternative_starts) {
      if (x0.size() != dimension(m)) throw ConfigError("alternative start has the wrong dimension");
      const auto support = support_of(x0);
      if (support.empty() || support.size() == k) throw ConfigError("alternative starts must lie on a proper face");
      SimConfig c = cfg;
      c.initial_state = x0;
      FaceRow row = simulated_row(m, env, c, support);
      row.note = row.note.empty() ? "alternative start" : "alternative start; " + row.note;
      table.rows.push_back(std::move(row));
    }
  }

  bool all_pass = true, any_blocked = false;
  for (const auto& row : table.rows) {
    if (row.degenerate) continue;
    bool pass = false, blocked = true;
    for (std::size_t i = 0; i < k; ++i) {
      if (in_support(row.support, i)) continue;
      pass = pass || row.rates[i].significantly_positive(kDecisionSigmas);
      blocked = blocked && row.rates[i].significantly_negative(kDecisionSigmas);
    }
    all_pass = all_pass && pass;
    any_blocked = any_blocked || blocked;
  }
  table.verdict = any_blocked  ? PermanenceVerdict::NotPermanent
                  : all_pass   ? PermanenceVerdict::Persistent
                               : PermanenceVerdict::Inconclusive;
  return table;
}

double weights_margin(const InvasionTable& table, const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != table.species) throw ConfigError("weight vector has the wrong length");
  double worst = HUGE_VAL;
  for (const auto& row : table.rows) {
    if (row.degenerate) continue;
    double sum = 0.0, var = 0.0;
    for (std::size_t i = 0; i < table.species; ++i) {
      if (in_support(row.support, i)) continue;
      const double w = p[static_cast<Eigen::Index>(i)];
      if (w == 0.0) continue;
      sum += w * row.rates[i].mean;
      var += w * w * row.rates[i].std_error * row.rates[i].std_error;
    }
    worst = std::min(worst, sum - kDecisionSigmas * std::sqrt(var));
  }
  return worst;
}

WeightsResult find_persistence_weights(const InvasionTable& table) {
  const auto k = static_cast<long>(table.species);
  if (k < 1) throw ConfigError("empty invasion table");
  WeightsResult best;
  if (k == 1) {
    best.p = Eigen::VectorXd::Ones(1);
    best.margin = weights_margin(table, best.p);
    best.feasible = best.margin > 0.0;
    return best;
  }
  const long n = k <= 3 ? 200 : k == 4 ? 100 : k == 5 ? 40 : 25;
  for_each_composition(n, k, [&](const Eigen::VectorXd& p) {
    const double v = weights_margin(table, p);
    if (v > best.margin) {
      best.margin = v;
      best.p = p;
    }
  });

  // coordinate-pair moves keep the sum at one
  double h = 0.5 / static_cast<double>(n);
  while (h > 1e-10) {
    bool moved = false;
    for (long i = 0; i < k && !moved; ++i) {
      for (long j = 0; j < k && !moved; ++j) {
        if (i == j || best.p[j] - h <= 0.0) continue;
        Eigen::VectorXd q = best.p;
        q[i] += h;
        q[j] -= h;
        const double v = weights_margin(table, q);
        if (v > best.margin) {
          best.margin = v;
          best.p = q;
          moved = true;
        }
      }
    }
    if (!moved) h *= 0.5;
  }
  best.feasible = best.margin > 0.0;
  return best;
}

Verdict scalar_classify(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                        const ClassifyOptions& options) {
  validate(env);
  validate(m, env);
  if (!is_scalar(m)) throw ConfigError("scalar_classify needs a one-dimensional multiplicative model");
  Verdict out;
  const RateEstimate at_zero = mean_percapita_growth_at(m, env, Eigen::VectorXd::Zero(1), 0, options.draws, cfg.seed);

  std::optional<RateEstimate> at_infinity;
  if (const auto* h = m.as<model::Hassell>()) {
    if (is_zero(h->b))
      at_infinity = at_zero;
    else if (strictly_positive(h->b, env))
      at_infinity = minus_infinity();
  } else if (const auto* r = m.as<model::Ricker>()) {
    if (is_zero(r->a))
      at_infinity = at_zero;
    else if (strictly_positive(r->a, env))
      at_infinity = minus_infinity();
  } else if (const auto* bh = m.as<model::BevertonHolt>()) {
    if (strictly_positive(bh->a, env)) at_infinity = bh->s > 0.0 ? exact_estimate(std::log(bh->s)) : minus_infinity();
  }
  if (!at_infinity) {
    at_infinity = mean_percapita_growth_at(m, env, Eigen::VectorXd::Constant(1, options.x_max), 0, options.draws,
                                           cfg.seed);
    out.notes.push_back("lambda(inf) estimated at x = " + std::to_string(options.x_max) +
                        "; no closed-form limit for this wiring");
  }
  out.evidence["lambda(0)"] = at_zero;
  out.evidence["lambda(inf)"] = *at_infinity;

  const double k = kDecisionSigmas;
  if (at_zero.significantly_negative(k)) {
    out.kind = VerdictKind::Extinction;
    out.decision_margin = at_zero.z();
  } else if (at_infinity->significantly_positive(k)) {
    out.kind = VerdictKind::Explosion;
    out.decision_margin = at_infinity->z();
  } else if (at_zero.significantly_positive(k) && at_infinity->significantly_negative(k)) {
    out.kind = VerdictKind::Persistent;
    out.decision_margin = std::min(at_zero.z(), at_infinity->z());
  } else {
    out.kind = VerdictKind::Inconclusive;
    out.decision_margin = std::min(at_zero.z(), at_infinity->z());
    out.notes.push_back("an invasion rate lies within 3 SE of zero");
  }

  if (!options.run_simulation) return out;
  const double eta = cfg.eta_grid.empty() ? 0.01 : cfg.eta_grid.front();
  try {
    const auto sim = simulate(m, env, cfg);
    const long reps = static_cast<long>(sim.replicates.size());
    long extinct = 0, near_zero = 0, beyond = 0;
    Eigen::ArrayXd occ(reps);
    const std::string label = SetDescriptor::extinction_neighborhood(eta).label();
    for (long r = 0; r < reps; ++r) {
      const auto& rep = sim.replicates[static_cast<std::size_t>(r)];
      extinct += rep.extinct;
      near_zero += rep.extinct || rep.terminal_state[0] <= eta;
      beyond += rep.terminal_state[0] > cfg.bound_radius;
      occ[r] = rep.occupation.at(label);
    }
    out.evidence["extinct_fraction"] = proportion(extinct, reps);
    out.evidence["occupation " + label] = iid_estimate(occ);
    switch (out.kind) {
      case VerdictKind::Extinction:
        out.simulation_agrees = near_zero == reps;
        break;
      case VerdictKind::Explosion:
        out.simulation_agrees = beyond == reps;
        break;
      case VerdictKind::Persistent:
        out.simulation_agrees = extinct == 0 && occ.mean() < 0.05;
        break;
      case VerdictKind::Inconclusive:
        break;
    }
  } catch (const NumericError& e) {
    out.notes.push_back(std::string("simulation: ") + e.what() + " at step " + std::to_string(e.step()));
    out.simulation_agrees = out.kind == VerdictKind::Explosion;
  }
  return out;
}

StateFunction named_lyapunov(const std::string& name) {
  if (name == "sum" || name == "identity") return [](const Eigen::VectorXd& x) { return x.sum(); };
  if (name == "max") return [](const Eigen::VectorXd& x) { return x.cwiseAbs().maxCoeff(); };
  throw ConfigError("unknown Lyapunov function '" + name + "' (expected sum, identity or max)");
}

double choose_drift_threshold(const ModelSpec& m, const EnvSpec& env, double eps, std::uint64_t seed) {
  if (!is_scalar(m)) throw ConfigError("drift threshold search needs a scalar model");
  if (!(eps > 0.0)) throw ConfigError("drift threshold search needs eps > 0");
  double M = 1.0;
  for (int j = 0; j < 64; ++j, M *= 2.0) {
    const auto e = mean_percapita_growth_at(m, env, Eigen::VectorXd::Constant(1, M), 0, 10000, seed);
    if (e.mean + kDecisionSigmas * e.std_error <= -eps) return M;
  }
  throw NumericError("no threshold M <= 2^63 with E[log f(M, xi)] <= -eps");
}

DriftConstruction scalar_drift_construction(const ModelSpec& m, double threshold) {
  if (!is_scalar(m)) throw ConfigError("scalar drift construction needs a scalar model");
  if (!(threshold > 0.0)) throw ConfigError("drift threshold must be positive");
  const Eigen::VectorXd at_m = Eigen::VectorXd::Constant(1, threshold);
  const Eigen::VectorXd at_zero = Eigen::VectorXd::Zero(1);
  DriftConstruction c;
  c.name = "scalar(M=" + std::to_string(threshold) + ")";
  c.lyapunov = [](const Eigen::VectorXd& x) { return x[0]; };
  c.alpha = [m, at_m](const Eigen::VectorXd& w) { return percapita_growth(m, at_m, w, 0); };
  c.beta = [m, at_zero, threshold](const Eigen::VectorXd& w) { return percapita_growth(m, at_zero, w, 0) * threshold; };
  return c;
}

DriftConstruction ricker_competition_drift_construction(const ModelSpec& m) {
  const auto* rc = m.as<model::RickerCompetition>();
  if (!rc) throw ConfigError("construction needs the Ricker competition model");
  if (rc->alpha[0] < 0.0 || rc->alpha[1] < 0.0) throw ConfigError("competition coefficients must be non-negative");
  const auto r = rc->r;
  DriftConstruction c;
  c.name = "ricker_competition";
  c.lyapunov = [](const Eigen::VectorXd& x) { return x.sum(); };
  c.alpha = [](const Eigen::VectorXd&) { return 0.5; };
  c.beta = [r](const Eigen::VectorXd& w) { return std::exp(r[0](w) - 1.0) + std::exp(r[1](w) - 1.0); };
  return c;
}

DriftConstruction affine_drift_construction(const ModelSpec& m) {
  const auto* a = m.as<model::AffineScalar>();
  if (!a) throw ConfigError("construction needs the affine model");
  const auto alpha = a->alpha, beta = a->beta;
  DriftConstruction c;
  c.name = "affine";
  c.lyapunov = [](const Eigen::VectorXd& x) { return x[0]; };
  c.alpha = [alpha](const Eigen::VectorXd& w) { return alpha(w); };
  c.beta = [beta](const Eigen::VectorXd& w) { return beta(w); };
  return c;
}

Eigen::VectorXd StateSampler::draw(const ModelSpec& m, Stream& stream) const {
  const Eigen::Index k = dimension(m);
  Eigen::VectorXd x(k);
  if (state_space(m) == StateSpace::Simplex) {
    for (Eigen::Index i = 0; i < k; ++i) x[i] = -std::log(stream.uniform_open());
    return x / x.sum();
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double u = stream.uniform_open();
    const double v = stream.uniform_open();
    x[i] = u < zero_fraction ? 0.0 : std::exp(llo + (lhi - llo) * v);
  }
  return x;
}

DriftBoundedReport drift_bounded_check(const ModelSpec& m, const EnvSpec& env, const DriftConstruction& c, long n,
                                       std::uint64_t seed, const StateSampler& sampler) {
  validate(env);
  validate(m, env);
  if (n < 1) throw ConfigError("drift audit needs n >= 1");
  DriftBoundedReport out;
  out.construction = c.name;
  Stream states(seed, 1), draws(seed, 2);
  Eigen::VectorXd omega(env.dim());
  for (long j = 0; j < n; ++j) {
    const Eigen::VectorXd x = sampler.draw(m, states);
    sample_into(env, states, omega);
    const double lhs = c.lyapunov(step(m, x, omega));
    const double rhs = c.alpha(omega) * c.lyapunov(x) + c.beta(omega);
    ++out.audited;
    if (lhs > rhs + 1e-9 * std::max(1.0, std::fabs(rhs))) {
      if (!out.violations) {
        out.counterexample_state = x;
        out.counterexample_env = omega;
      }
      ++out.violations;
    }
  }

  const long draws_n = env.deterministic() ? 1 : std::max(n, 10000L);
  Eigen::ArrayXd la(draws_n), lpa(draws_n), lpb(draws_n);
  for (long j = 0; j < draws_n; ++j) {
    sample_into(env, draws, omega);
    const double a = c.alpha(omega), b = c.beta(omega);
    la[j] = std::log(a);
    lpa[j] = std::max(0.0, std::log(a));
    lpb[j] = std::max(0.0, std::log(b));
  }
  out.log_alpha = iid_estimate(la);
  out.log_plus_alpha = iid_estimate(lpa);
  out.log_plus_beta = iid_estimate(lpb);
  out.hypotheses_hold = out.violations == 0 && out.log_alpha.significantly_negative(kDecisionSigmas) &&
                        std::isfinite(out.log_plus_alpha.mean) && std::isfinite(out.log_plus_beta.mean);
  return out;
}

DriftErgodicReport drift_ergodic_check(const ModelSpec& m, const EnvSpec& env, const StateFunction& lyapunov,
                                       const SetDescriptor& small_set, double beta, long n, long inner_draws,
                                       std::uint64_t seed, const StateSampler& sampler) {
  validate(env);
  validate(m, env);
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("drift condition needs beta in (0, 1]");
  if (n < 1 || inner_draws < 2) throw ConfigError("drift audit needs n >= 1 and at least 2 inner draws");
  DriftErgodicReport out;
  Stream states(seed, 3), draws(seed, 4);
  const long inner = env.deterministic() ? 1 : inner_draws;
  // common random numbers across audit points
  Eigen::MatrixXd omegas(env.dim(), inner);
  for (long s = 0; s < inner; ++s) omegas.col(s) = sample(env, draws);
  Eigen::ArrayXd values(inner);
  for (long j = 0; j < n; ++j) {
    const Eigen::VectorXd x = sampler.draw(m, states);
    for (long s = 0; s < inner; ++s) values[s] = lyapunov(step(m, x, omegas.col(s)));
    const RateEstimate e = iid_estimate(values);
    const double rhs = (1.0 - beta) * lyapunov(x) + (small_set.contains(x, m) ? 1.0 : 0.0);
    const double slack = rhs - e.mean;
    ++out.audited;
    if (slack < -kDecisionSigmas * e.std_error - 1e-12 * std::max(1.0, std::fabs(rhs))) ++out.violations;
    if (slack < out.worst_slack) {
      out.worst_slack = slack;
      out.worst_state = x;
    }
  }
  out.holds = out.violations == 0;
  return out;
}

RpsConditionReport rps_condition(const ModelSpec& m, const EnvSpec& env, long n, std::uint64_t seed) {
  const auto* rps = m.as<model::RpsLottery>();
  if (!rps) throw ConfigError("rps_condition needs the rps_lottery model");
  validate(env);
  validate(m, env);
  if (n < 1) throw ConfigError("rps_condition needs n >= 1");
  const double d = rps->d;
  const long count = env.deterministic() ? 1 : n;
  Stream stream(seed, 0);
  Eigen::VectorXd omega(env.dim());
  Eigen::ArrayXd exact(count), small(count);
  for (long j = 0; j < count; ++j) {
    sample_into(env, stream, omega);
    const double a = rps->alpha(omega), b = rps->beta(omega), g = rps->gamma(omega);
    if (!(a > b && b > g && g > 0.0)) throw ConfigError("rps payoffs must satisfy alpha > beta > gamma > 0 in every draw");
    exact[j] = std::log1p(d * (a / b - 1.0)) + std::log1p(d * (g / b - 1.0));
    small[j] = a / b + g / b - 2.0;
  }
  RpsConditionReport out;
  out.d = d;
  out.exact_lhs = iid_estimate(exact);
  out.small_d_lhs = iid_estimate(small);
  if (count == 1) {
    out.exact_lhs.n = n;
    out.small_d_lhs.n = n;
  }
  out.exact = condition_verdict(out.exact_lhs);
  out.small_d = condition_verdict(out.small_d_lhs);
  return out;
}

TaylorRate lottery_taylor_rate(const ModelSpec& m, const EnvSpec& env, const std::vector<Eigen::VectorXd>& face_samples,
                               std::size_t invader, long inner_draws, std::uint64_t seed, long batches) {
  const auto* lot = m.as<model::Lottery>();
  if (!lot) throw ConfigError("lottery_taylor_rate needs the lottery model");
  validate(env);
  validate(m, env);
  if (face_samples.empty()) throw ConfigError("lottery_taylor_rate needs boundary samples");
  if (invader >= lot->fecundity.size()) throw ConfigError("invader index out of range");
  if (inner_draws < 1) throw ConfigError("inner_draws must be positive");
  TaylorRate out;
  const double d = lot->d;
  if (d > 0.2) out.warnings.push_back("first-order approximation in d; d > 0.2");
  const long inner = env.deterministic() ? 1 : inner_draws;
  Stream stream(seed, 0);
  Eigen::VectorXd omega(env.dim());
  const auto k = static_cast<Eigen::Index>(lot->fecundity.size());
  Eigen::ArrayXd series(static_cast<Eigen::Index>(face_samples.size()));
  bool off_face = false;
  for (std::size_t s = 0; s < face_samples.size(); ++s) {
    const auto& x = face_samples[s];
    if (x.size() != k) throw ConfigError("boundary sample has the wrong dimension");
    off_face = off_face || x[static_cast<Eigen::Index>(invader)] > 0.0;
    double acc = 0.0;
    for (long j = 0; j < inner; ++j) {
      sample_into(env, stream, omega);
      double denom = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) denom += x[i] * lot->fecundity[static_cast<std::size_t>(i)](omega);
      acc += lot->fecundity[invader](omega) / denom;
    }
    series[static_cast<Eigen::Index>(s)] = acc / static_cast<double>(inner);
  }
  if (off_face) out.warnings.push_back("some samples give the invader positive density");
  const RateEstimate e = batch_means(series, batches);
  out.estimate = e;
  out.estimate.mean = -d + d * e.mean;
  out.estimate.std_error = d * e.std_error;
  return out;
}

}  // namespace stochpersist
