#include "stochpersist/engine.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <thread>

#include "stochpersist/errors.hpp"
#include "stochpersist/numfmt.hpp"

namespace stochpersist {

namespace {

const double kLogMax = std::log(std::numeric_limits<double>::max());

/// Advances one trajectory, applying the extinction floor. Scalar
/// multiplicative models run in log-state.
class Trajectory {
 public:
  Trajectory(const ModelSpec& m, Eigen::VectorXd x0)
      : model_(m),
        s0_(extinction_set(m)),
        log_scalar_(is_multiplicative(m) && dimension(m) == 1),
        x_(std::move(x0)),
        frozen_(static_cast<std::size_t>(x_.size()), 0) {
    if (log_scalar_ && x_[0] > 0.0) log_x_ = std::log(x_[0]);
    check_floor(0);
  }

  const Eigen::VectorXd& state() const { return x_; }
  bool extinct() const { return extinct_; }
  long extinction_step() const { return extinction_step_; }

  void advance(const Eigen::VectorXd& omega, long t) {
    if (extinct_ && (log_scalar_ || s0_ == ExtinctionSet::Origin)) return;
    if (log_scalar_) {
      if (x_[0] == 0.0) return;
      log_x_ += log_percapita_growth(model_, x_, omega, 0);
      if (log_x_ > kLogMax) throw NumericError("numeric overflow: state exceeded the double range", x_, t + 1);
      x_[0] = std::exp(std::max(log_x_, kLogExtinctionFloor));
      check_floor(t + 1);
      return;
    }
    try {
      x_ = step(model_, x_, omega);
    } catch (const FaceDegenerateError&) {
      throw;
    } catch (const NumericError& e) {
      throw NumericError(e.what(), e.state(), t + 1);
    }
    check_floor(t + 1);
  }

 private:
  void mark_extinct(long t) {
    if (!extinct_) extinction_step_ = t;
    extinct_ = true;
  }

  void check_floor(long t) {
    switch (s0_) {
      case ExtinctionSet::None:
        return;
      case ExtinctionSet::Origin:
        if (x_.maxCoeff() < kExtinctionFloor) mark_extinct(t);
        return;
      case ExtinctionSet::CoordinateUnion:
        for (Eigen::Index j = 0; j < x_.size(); ++j) {
          auto& frozen = frozen_[static_cast<std::size_t>(j)];
          if (frozen) {
            x_[j] = kExtinctionFloor;
          } else if (x_[j] > 0.0 && x_[j] <= kExtinctionFloor) {
            frozen = 1;
            x_[j] = kExtinctionFloor;
            if (log_scalar_) log_x_ = kLogExtinctionFloor;
            mark_extinct(t);
          }
        }
        return;
    }
  }

  const ModelSpec& model_;
  ExtinctionSet s0_;
  bool log_scalar_;
  Eigen::VectorXd x_;
  std::vector<char> frozen_;
  double log_x_ = 0.0;
  bool extinct_ = false;
  long extinction_step_ = -1;
};

void check_initial(const ModelSpec& m, const Eigen::VectorXd& x) {
  if (x.size() != dimension(m)) throw ConfigError("initial_state dimension does not match " + model_name(m));
  if (!x.allFinite() || (x.array() < 0.0).any()) throw ConfigError("initial_state must be finite and non-negative");
  if (state_space(m) == StateSpace::Simplex && std::fabs(x.sum() - 1.0) > 1e-12)
    throw ConfigError("initial_state must sum to 1 for simplex models");
}

std::vector<SetDescriptor> tracked_sets(const SimConfig& cfg) {
  std::vector<SetDescriptor> sets;
  auto add = [&sets](const SetDescriptor& s) {
    const auto label = s.label();
    if (std::none_of(sets.begin(), sets.end(), [&](const auto& o) { return o.label() == label; })) sets.push_back(s);
  };
  for (double eta : cfg.eta_grid) {
    add(SetDescriptor::extinction_neighborhood(eta));
    add(SetDescriptor::extinction_neighborhood(eta).complemented());
  }
  add(SetDescriptor::outside_ball(cfg.bound_radius));
  add(SetDescriptor::outside_ball(cfg.bound_radius).complemented());
  for (const auto& s : cfg.sets) {
    add(s);
    add(s.complemented());
  }
  return sets;
}

std::vector<Functional> tracked_functionals(const ModelSpec& m, const SimConfig& cfg) {
  if (!cfg.functionals.empty()) return cfg.functionals;
  std::vector<Functional> out;
  for (Eigen::Index i = 0; i < dimension(m); ++i) out.push_back(Functional::coordinate(static_cast<std::size_t>(i)));
  return out;
}

EmpiricalSummary run_replicate(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg, std::size_t rep,
                               const std::vector<SetDescriptor>& sets, const std::vector<Functional>& functionals) {
  Stream stream(cfg.seed, rep);
  Trajectory traj(m, initial_state(m, cfg, stream));
  const long window = cfg.horizon - cfg.burn_in;
  std::vector<long> hits(sets.size(), 0);
  std::vector<Eigen::ArrayXd> values(functionals.size(), Eigen::ArrayXd(window));
  EmpiricalSummary out;
  out.replicate = rep;
  Eigen::VectorXd omega(env.dim());
  for (const auto& h : functionals) {
    if (h.kind == Functional::Kind::Coordinate || h.kind == Functional::Kind::LogPerCapita)
      if (static_cast<Eigen::Index>(h.index) >= dimension(m))
        throw ConfigError("functional " + h.label() + " refers to a missing species");
  }

  for (long t = 0; t < cfg.horizon; ++t) {
    const Eigen::VectorXd& x = traj.state();
    const bool record = t >= cfg.burn_in;
    const long s = t - cfg.burn_in;
    if (record) {
      for (std::size_t j = 0; j < sets.size(); ++j) hits[j] += sets[j].contains(x, m);
      if (cfg.max_samples > 0 && s % cfg.thinning == 0 && out.thinned_samples.size() < cfg.max_samples)
        out.thinned_samples.push_back(x);
    }
    sample_into(env, stream, omega);
    if (record) {
      for (std::size_t j = 0; j < functionals.size(); ++j) {
        const auto& h = functionals[j];
        double v = 0.0;
        switch (h.kind) {
          case Functional::Kind::Coordinate:
            v = x[static_cast<Eigen::Index>(h.index)];
            break;
          case Functional::Kind::LogPerCapita:
            v = log_percapita_growth(m, x, omega, h.index);
            break;
          case Functional::Kind::Indicator:
            v = h.set.contains(x, m) ? 1.0 : 0.0;
            break;
          case Functional::Kind::LogNorm:
            v = std::log(x.cwiseAbs().sum());
            break;
        }
        values[j][s] = v;
      }
    }
    traj.advance(omega, t);
  }

  const double denom = static_cast<double>(window);
  for (std::size_t j = 0; j < sets.size(); ++j) out.occupation[sets[j].label()] = static_cast<double>(hits[j]) / denom;
  for (std::size_t j = 0; j < functionals.size(); ++j)
    out.functional_averages[functionals[j].label()] = batch_means(values[j], cfg.batches);
  out.terminal_state = traj.state();
  out.extinct = traj.extinct();
  out.extinction_step = traj.extinction_step();
  return out;
}

}  // namespace

SetDescriptor SetDescriptor::extinction_neighborhood(double eta) {
  if (!(eta > 0.0)) throw ConfigError("extinction neighbourhood needs eta > 0");
  SetDescriptor s;
  s.kind = Kind::ExtinctionNeighborhood;
  s.radius = eta;
  return s;
}

SetDescriptor SetDescriptor::outside_ball(double a) {
  if (!(a > 0.0)) throw ConfigError("outside_ball needs a positive radius");
  SetDescriptor s;
  s.kind = Kind::OutsideBall;
  s.radius = a;
  return s;
}

SetDescriptor SetDescriptor::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
  if (lo.size() != hi.size() || lo.size() == 0) throw ConfigError("box bounds must be non-empty and of equal length");
  if ((lo.array() > hi.array()).any()) throw ConfigError("box needs lo <= hi");
  SetDescriptor s;
  s.kind = Kind::Box;
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}

SetDescriptor SetDescriptor::complemented() const {
  SetDescriptor s = *this;
  s.complement = !complement;
  return s;
}

std::string SetDescriptor::label() const {
  std::string base;
  switch (kind) {
    case Kind::ExtinctionNeighborhood:
      base = "S_eta(" + format_double(radius) + ")";
      break;
    case Kind::OutsideBall:
      base = "outside_ball(" + format_double(radius) + ")";
      break;
    case Kind::Box:
      base = "box[";
      for (Eigen::Index i = 0; i < lo.size(); ++i) {
        if (i) base += "x";
        base += "(" + format_double(lo[i]) + "," + format_double(hi[i]) + ")";
      }
      base += "]";
      break;
  }
  return complement ? "not " + base : base;
}

bool SetDescriptor::contains(const Eigen::Ref<const Eigen::VectorXd>& x, ExtinctionSet s0) const {
  bool in = false;
  switch (kind) {
    case Kind::ExtinctionNeighborhood: {
      double dist = std::numeric_limits<double>::infinity();
      if (s0 == ExtinctionSet::CoordinateUnion) dist = x.minCoeff();
      if (s0 == ExtinctionSet::Origin) dist = x.cwiseAbs().maxCoeff();
      in = dist <= radius;
      break;
    }
    case Kind::OutsideBall:
      in = x.cwiseAbs().maxCoeff() > radius;
      break;
    case Kind::Box:
      if (lo.size() != x.size()) throw ConfigError("box dimension does not match the state");
      in = (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
      break;
  }
  return in != complement;
}

bool SetDescriptor::contains(const Eigen::Ref<const Eigen::VectorXd>& x, const ModelSpec& m) const {
  return contains(x, extinction_set(m));
}

std::string Functional::label() const {
  switch (kind) {
    case Kind::Coordinate:
      return "X[" + std::to_string(index + 1) + "]";
    case Kind::LogPerCapita:
      return "log_f[" + std::to_string(index + 1) + "]";
    case Kind::Indicator:
      return "1{" + set.label() + "}";
    case Kind::LogNorm:
      return "log_norm";
  }
  return {};
}

void validate(const SimConfig& cfg) {
  if (cfg.replicates < 1) throw ConfigError("replicates must be positive");
  if (cfg.horizon < 1) throw ConfigError("horizon must be positive");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.horizon) throw ConfigError("burn_in must satisfy 0 <= B < T");
  if (cfg.thinning < 1) throw ConfigError("thinning must be positive");
  if (cfg.batches < 2) throw ConfigError("at least two batches are required");
  if (!(cfg.bound_radius > 0.0)) throw ConfigError("bound_radius must be positive");
  for (double eta : cfg.eta_grid)
    if (!(eta > 0.0)) throw ConfigError("eta_grid entries must be positive");
}

Eigen::VectorXd random_interior(const ModelSpec& m, Stream& stream) {
  const Eigen::Index k = dimension(m);
  Eigen::VectorXd x(k);
  if (state_space(m) == StateSpace::Simplex) {
    for (Eigen::Index i = 0; i < k; ++i) x[i] = -std::log(stream.uniform_open());
    x /= x.sum();
    x = (0.01 + (1.0 - 0.01 * static_cast<double>(k)) * x.array()).matrix();
    x /= x.sum();
  } else {
    for (Eigen::Index i = 0; i < k; ++i) x[i] = 0.1 + 0.9 * stream.uniform_open();
  }
  return x;
}

Eigen::VectorXd initial_state(const ModelSpec& m, const SimConfig& cfg, Stream& stream) {
  if (cfg.initial_state) {
    check_initial(m, *cfg.initial_state);
    return *cfg.initial_state;
  }
  if (cfg.face_support.empty()) return random_interior(m, stream);
  const ModelSpec face = restrict_to_face(m, cfg.face_support);
  std::vector<std::size_t> sorted = cfg.face_support;
  std::sort(sorted.begin(), sorted.end());
  return embed_face(random_interior(face, stream), sorted, dimension(m));
}

void for_each_replicate(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t r = 0; r < n; ++r) {
      try {
        fn(r);
      } catch (...) {
        errors[r] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t r = next++; r < n; r = next++) {
          try {
            fn(r);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

SimulationResult simulate(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg) {
  validate(cfg);
  validate(env);
  validate(m, env);
  const auto sets = tracked_sets(cfg);
  const auto functionals = tracked_functionals(m, cfg);

  SimulationResult result;
  result.replicates.resize(cfg.replicates);
  for_each_replicate(cfg.replicates, cfg.threads, [&](std::size_t r) {
    result.replicates[r] = run_replicate(m, env, cfg, r, sets, functionals);
  });

  auto& pooled = result.pooled;
  const auto reps = static_cast<double>(cfg.replicates);
  long extinct = 0;
  // pool hit counts, not fractions, so pooled occupations stay in [0, 1]
  const double window = static_cast<double>(cfg.horizon - cfg.burn_in);
  std::map<std::string, double> hits;
  for (const auto& rep : result.replicates) {
    for (const auto& [label, frac] : rep.occupation) hits[label] += std::round(frac * window);
    pooled.thinned_samples.insert(pooled.thinned_samples.end(), rep.thinned_samples.begin(),
                                  rep.thinned_samples.end());
    extinct += rep.extinct;
  }
  for (const auto& [label, count] : hits) pooled.occupation[label] = count / (window * reps);
  for (const auto& h : functionals) {
    std::vector<RateEstimate> parts;
    for (const auto& rep : result.replicates) parts.push_back(rep.functional_averages.at(h.label()));
    pooled.functional_averages[h.label()] = pool(parts);
  }
  pooled.terminal_state = result.replicates.back().terminal_state;
  pooled.extinct = extinct == static_cast<long>(cfg.replicates);
  result.extinct_fraction = static_cast<double>(extinct) / reps;
  return result;
}

RateEstimate ergodic_average(const ModelSpec& m, const EnvSpec& env, SimConfig cfg, const Functional& h) {
  if (cfg.horizon - cfg.burn_in < 2) throw ConfigError("horizon too short for two batches");
  cfg.functionals = {h};
  cfg.max_samples = 0;
  const auto result = simulate(m, env, cfg);
  return result.pooled.functional_averages.at(h.label());
}

RateEstimate ensemble_hit_probability(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                      const SetDescriptor& set, long t) {
  validate(cfg);
  validate(m, env);
  if (t < 0 || t > cfg.horizon) throw ConfigError("ensemble_hit_probability: t must lie in [0, T]");
  std::vector<char> inside(cfg.replicates, 0);
  for_each_replicate(cfg.replicates, cfg.threads, [&](std::size_t r) {
    Stream stream(cfg.seed, r);
    Trajectory traj(m, initial_state(m, cfg, stream));
    Eigen::VectorXd omega(env.dim());
    for (long s = 0; s < t; ++s) {
      sample_into(env, stream, omega);
      traj.advance(omega, s);
    }
    inside[r] = set.contains(traj.state(), m);
  });
  long hits = 0;
  for (char c : inside) hits += c;
  return proportion(hits, static_cast<long>(cfg.replicates));
}

AffineChainResult auxiliary_affine_chain(const Coef& alpha, const Coef& beta, const EnvSpec& env,
                                         const SimConfig& cfg) {
  validate(cfg);
  validate(env);
  const model::AffineScalar chain{alpha, beta};
  if (required_env_dim(chain) > env.coords.size()) throw ConfigError("affine chain wiring exceeds the environment");
  Stream stream(cfg.seed, 0);
  double log_z = cfg.initial_state ? std::log((*cfg.initial_state)[0]) : 0.0;
  const long window = cfg.horizon - cfg.burn_in;
  Eigen::ArrayXd log_path(window), z_path(window);
  std::vector<SetDescriptor> sets;
  for (const auto& s : cfg.sets) {
    sets.push_back(s);
    sets.push_back(s.complemented());
  }
  sets.push_back(SetDescriptor::outside_ball(cfg.bound_radius));
  sets.push_back(SetDescriptor::outside_ball(cfg.bound_radius).complemented());
  std::vector<long> hits(sets.size(), 0);

  AffineChainResult out;
  Eigen::VectorXd omega(env.dim());
  Eigen::VectorXd z(1);
  for (long t = 0; t < cfg.horizon; ++t) {
    if (t >= cfg.burn_in) {
      const long s = t - cfg.burn_in;
      z[0] = std::exp(log_z);
      log_path[s] = log_z;
      z_path[s] = z[0];
      for (std::size_t j = 0; j < sets.size(); ++j) hits[j] += sets[j].contains(z, ExtinctionSet::None);
      if (cfg.max_samples > 0 && s % cfg.thinning == 0 && out.summary.thinned_samples.size() < cfg.max_samples)
        out.summary.thinned_samples.push_back(z);
    }
    sample_into(env, stream, omega);
    const double a = alpha(omega), b = beta(omega);
    if (a < 0.0 || b < 0.0) throw ConfigError("affine chain coefficients must be non-negative");
    // log(a e^{log z} + b) without overflow
    const double u = a > 0.0 ? std::log(a) + log_z : -HUGE_VAL;
    const double v = b > 0.0 ? std::log(b) : -HUGE_VAL;
    const double hi = std::max(u, v), lo = std::min(u, v);
    log_z = hi == -HUGE_VAL ? -HUGE_VAL : hi + std::log1p(std::exp(lo - hi));
  }

  for (std::size_t j = 0; j < sets.size(); ++j)
    out.summary.occupation[sets[j].label()] = static_cast<double>(hits[j]) / static_cast<double>(window);
  out.summary.functional_averages["Z"] = batch_means(z_path, cfg.batches);
  out.summary.functional_averages["log_Z"] = batch_means(log_path, cfg.batches);
  out.summary.terminal_state = Eigen::VectorXd::Constant(1, std::exp(log_z));

  constexpr long kWindows = 10;
  if (window >= kWindows) {
    const long size = window / kWindows;
    bool increasing = true;
    for (long w = 0; w < kWindows; ++w) {
      out.window_log_means.push_back(log_path.segment(w * size, size).mean());
      if (w > 0 && !(out.window_log_means[w] > out.window_log_means[w - 1] + 0.1)) increasing = false;
    }
    out.diverged = increasing;
  }
  if (!std::isfinite(log_z)) out.diverged = out.diverged || log_z > 0.0;
  return out;
}

DominanceReport coupled_dominance(const ModelSpec& m, const EnvSpec& env, const SimConfig& cfg,
                                  const std::function<double(const Eigen::VectorXd&)>& lyapunov,
                                  const std::function<double(const Eigen::VectorXd&)>& alpha,
                                  const std::function<double(const Eigen::VectorXd&)>& beta) {
  validate(cfg);
  validate(m, env);
  DominanceReport report;
  std::vector<DominanceReport> parts(cfg.replicates);
  for_each_replicate(cfg.replicates, cfg.threads, [&](std::size_t r) {
    Stream stream(cfg.seed, r);
    Eigen::VectorXd x = initial_state(m, cfg, stream);
    double z = lyapunov(x);
    Eigen::VectorXd omega(env.dim());
    auto& part = parts[r];
    for (long t = 0; t < cfg.horizon; ++t) {
      sample_into(env, stream, omega);
      x = step(m, x, omega);
      z = alpha(omega) * z + beta(omega);
      const double excess = lyapunov(x) - z;
      part.max_excess = std::max(part.max_excess, excess);
      part.violations += excess > 1e-12 * std::max(1.0, std::fabs(z));
      ++part.steps;
    }
  });
  for (const auto& p : parts) {
    report.steps += p.steps;
    report.violations += p.violations;
    report.max_excess = std::max(report.max_excess, p.max_excess);
  }
  return report;
}

}  // namespace stochpersist
