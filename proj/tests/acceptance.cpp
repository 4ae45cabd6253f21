#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "stochpersist/cli.hpp"
#include "stochpersist/errors.hpp"
#include "stochpersist/lyap.hpp"
#include "stochpersist/persist.hpp"

using namespace stochpersist;
using Eigen::VectorXd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const unsigned kThreads = std::max(2u, std::thread::hardware_concurrency());

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string fmt(const RateEstimate& e) { return fmt(e.mean) + " +/- " + fmt(e.std_error, 2); }

bool within(const RateEstimate& e, double target, double k = kDecisionSigmas) {
  return std::fabs(e.mean - target) <= k * e.std_error;
}

SimConfig config(long horizon, std::size_t replicates, long burn_in = 0) {
  SimConfig cfg;
  cfg.horizon = horizon;
  cfg.replicates = replicates;
  cfg.burn_in = burn_in;
  cfg.threads = kThreads;
  cfg.max_samples = 0;
  return cfg;
}

ModelSpec hassell(EnvSpec& env, double log_mean) {
  env.add(dist::LogNormal{log_mean, 0.3});
  return model::Hassell{Coef::env(0), Coef::constant(1.0)};
}

void scalar_trichotomy(Outcome& out) {
  const auto start = std::chrono::steady_clock::now();
  ClassifyOptions opts;
  {
    EnvSpec env;
    const ModelSpec m = hassell(env, -0.2);
    const Verdict v = scalar_classify(m, env, config(5000, 50), opts);
    const RateEstimate hit = v.evidence.at("extinct_fraction");
    out.require(v.kind == VerdictKind::Extinction, "verdict extinction");
    out.require(hit.mean == 1.0, "50/50 replicates extinct");
    out.detail << "mu=-0.2: " << to_string(v.kind) << ", extinct " << fmt(hit.mean * 50) << "/50; ";
  }
  {
    EnvSpec env;
    const ModelSpec m = hassell(env, 0.3);
    const Verdict v = scalar_classify(m, env, config(100000, 10, 10000), opts);
    const std::string key = "occupation " + SetDescriptor::extinction_neighborhood(0.01).label();
    const RateEstimate occ = v.evidence.at(key);
    out.require(v.kind == VerdictKind::Persistent, "verdict persistent");
    out.require(occ.mean <= 0.05, "occupation of S_0.01 <= 0.05");
    out.require(v.simulation_agrees, "simulation agrees");
    out.detail << "mu=+0.3: " << to_string(v.kind) << ", Pi(S_0.01)=" << fmt(occ.mean) << "; ";
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.require(seconds <= 30.0, "runtime <= 30 s");
  out.detail << "runtime " << fmt(seconds, 3) << " s";
}

void ricker_identity(Outcome& out) {
  for (double r : {0.5, 1.0, 1.5}) {
    EnvSpec env;
    env.add(dist::Normal{r, 0.3});
    const ModelSpec m = model::Ricker{Coef::env(0), Coef::constant(1.0)};
    const RateEstimate e = ergodic_average(m, env, config(100000, 4, 1000), Functional::coordinate(0));
    out.require(within(e, r), "E[X] = r for r=" + fmt(r));
    out.detail << "r=" << fmt(r) << ": " << fmt(e) << "; ";
  }
}

void competition_invasion(Outcome& out) {
  // alpha_j multiplies X^j; the second order reproduces 0.52 and 0.3
  const std::vector<std::array<double, 2>> orders{{0.6, 0.5}, {0.5, 0.6}};
  for (const auto& alpha : orders) {
    EnvSpec env;
    env.add(dist::Normal{1.0, 0.3});
    env.add(dist::Normal{0.8, 0.3});
    const ModelSpec m = model::RickerCompetition{{Coef::env(0), Coef::env(1)}, alpha};
    const double l1 = 1.0 - alpha[1] * 0.8, l2 = 0.8 - alpha[0] * 1.0;
    const RateEstimate e1 = invasion_rate(m, env, config(100000, 4, 1000), 0, {1});
    const RateEstimate e2 = invasion_rate(m, env, config(100000, 4, 1000), 1, {0});
    out.require(within(e1, l1) && within(e2, l2), "invasion rates for alpha=(" + fmt(alpha[0]) + "," + fmt(alpha[1]) + ")");

    SimConfig cfg = config(100000, 50);
    cfg.functionals = {Functional::coordinate(0), Functional::coordinate(1)};
    const auto sim = simulate(m, env, cfg);
    long both = 0;
    for (const auto& rep : sim.replicates)
      both += rep.functional_averages.at("X[1]").mean >= 0.05 && rep.functional_averages.at("X[2]").mean >= 0.05;
    out.require(both >= 45, "coexistence in >= 45/50 replicates");
    out.detail << "alpha=(" << fmt(alpha[0]) << "," << fmt(alpha[1]) << "): lambda1=" << fmt(e1) << " (" << fmt(l1)
               << "), lambda2=" << fmt(e2) << " (" << fmt(l2) << "), coexist " << both << "/50; ";
  }
}

ModelSpec lottery(EnvSpec& env, double d) {
  model::Lottery lot;
  lot.d = d;
  for (int i = 0; i < 3; ++i) lot.fecundity.push_back(Coef::env(env.add(dist::LogNormal{1.0, 0.3})));
  return lot;
}

void lottery_coexistence(Outcome& out) {
  {
    EnvSpec env;
    const ModelSpec m = lottery(env, 0.1);
    const InvasionTable t = boundary_invasion_report(m, env, config(100000, 4, 1000));
    double smallest_z = HUGE_VAL;
    bool all_positive = true;
    for (const auto& row : t.rows) {
      all_positive = all_positive && !row.degenerate;
      for (std::size_t i = 0; i < 3; ++i) {
        if (std::find(row.support.begin(), row.support.end(), i) != row.support.end()) continue;
        all_positive = all_positive && row.rates[i].significantly_positive(kDecisionSigmas);
        smallest_z = std::min(smallest_z, row.rates[i].z());
      }
    }
    out.require(all_positive, "all boundary invasion rates positive");
    out.detail << t.rows.size() << " faces, smallest z=" << fmt(smallest_z, 3) << "; ";

    SimConfig cfg = config(100000, 4);
    cfg.eta_grid = {0.001};
    const auto sim = simulate(m, env, cfg);
    const double occ = sim.pooled.occupation.at(SetDescriptor::extinction_neighborhood(0.001).label());
    out.require(occ <= 0.01, "interior occupation of S_0.001 <= 0.01");
    out.detail << "Pi(S_0.001)=" << fmt(occ) << "; ";
  }
  for (double d : {0.02, 0.05}) {
    EnvSpec env;
    const ModelSpec m = lottery(env, d);
    double worst = 0.0;
    for (std::size_t invader = 0; invader < 3; ++invader) {
      std::vector<std::size_t> face;
      for (std::size_t i = 0; i < 3; ++i)
        if (i != invader) face.push_back(i);
      SimConfig cfg = config(100000, 4, 1000);
      cfg.thinning = 10;
      cfg.max_samples = 100000;
      const FaceRates fr = face_growth_rates(m, env, cfg, face);
      const TaylorRate tr = lottery_taylor_rate(m, env, fr.samples, invader);
      const RateEstimate& full = fr.rates[invader];
      const double slack = std::max(kDecisionSigmas * std::hypot(tr.estimate.std_error, full.std_error), 0.25 * d * d);
      const double gap = std::fabs(tr.estimate.mean - full.mean);
      worst = std::max(worst, gap / slack);
      out.require(gap <= slack, "taylor vs invasion rate, d=" + fmt(d) + ", invader " + std::to_string(invader + 1));
    }
    out.detail << "d=" << fmt(d) << ": worst gap/slack " << fmt(worst, 3) << "; ";
  }
}

ModelSpec rps(double a, double b, double g, double d) {
  return model::RpsLottery{d, Coef::constant(a), Coef::constant(b), Coef::constant(g)};
}

void rps_condition_check(Outcome& out) {
  const SimConfig cfg = config(1000, 1);
  const ModelSpec good = rps(3.2, 2.0, 1.0, 0.1);
  const RpsConditionReport a = rps_condition(good, EnvSpec{}, 100000);
  const InvasionTable ta = boundary_invasion_report(good, EnvSpec{}, cfg);
  out.require(std::fabs(a.exact_lhs.mean - (std::log(1.06) + std::log(0.95))) <= 1e-15, "exact_lhs = 0.00698");
  out.require(a.exact == ConditionVerdict::Holds && ta.verdict == PermanenceVerdict::Persistent, "persistent");
  out.detail << "(3.2,2,1,0.1): " << fmt(a.exact_lhs.mean) << " " << to_string(ta.verdict) << "; ";

  const RpsConditionReport b = rps_condition(rps(3.0, 2.0, 1.0, 0.5), EnvSpec{}, 100000);
  out.require(std::fabs(b.exact_lhs.mean - (-0.06454)) <= 5e-6, "exact_lhs = -0.06454");
  out.require(b.exact == ConditionVerdict::Fails, "condition fails");
  out.detail << "(3,2,1,0.5): " << fmt(b.exact_lhs.mean) << " " << to_string(b.exact) << "; ";

  int agree = 0, total = 0, feasible = 0;
  for (double alpha : {2.2, 2.6, 3.0, 3.4, 4.0})
    for (double d : {0.1, 0.3, 0.5, 0.8}) {
      const ModelSpec m = rps(alpha, 2.0, 1.0, d);
      const RpsConditionReport c = rps_condition(m, EnvSpec{}, 1000);
      const WeightsResult w = find_persistence_weights(boundary_invasion_report(m, EnvSpec{}, cfg));
      agree += w.feasible == (c.exact == ConditionVerdict::Holds);
      feasible += w.feasible;
      ++total;
    }
  out.require(total >= 20 && agree == total, "weights feasibility matches exact_lhs sign on the sweep");
  out.detail << "sweep " << agree << "/" << total << " agree (" << feasible << " feasible)";
}

void lyapunov_exponents(Outcome& out) {
  Eigen::MatrixXd a(3, 3);
  a << 0.2, 1.5, 0.7, 0.4, 0.1, 0.0, 0.0, 0.6, 0.3;
  model::LinearMatrix lm;
  lm.k = 3;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) lm.entries.push_back(Coef::constant(a(i, j)));
  SimConfig cfg = config(10000, 1, 200);
  const double matrix_gap = std::fabs(lyapunov_mc(lm, EnvSpec{}, cfg).mean - std::log(oracle::spectral_radius(a)));
  out.require(matrix_gap <= 1e-8, "primitive matrix within 1e-8");
  out.detail << "matrix gap " << fmt(matrix_gap, 2) << "; ";

  EnvSpec genv;
  genv.add(dist::Gamma{1.0, 2.0});
  const RateEstimate p0 = lyapunov_mc(model::Biennial{0.0, 0.5, 1.0, 1.0, Coef::env(0)}, genv, config(10000, 1, 1));
  GammaClosedFormInput in;
  in.a = 0.5;
  in.theta = 2.0;
  in.k = 1.0;
  in.p = 0.0;
  out.require(p0.mean == std::log(0.5) && roerdink_gamma(in).gamma == std::log(0.5), "p=0 gives ln 0.5 exactly");

  for (double p : {0.3, 0.5, 0.7}) {
    in.p = p;
    const double closed = roerdink_gamma(in).gamma;
    EnvSpec env;
    const ModelSpec m = biennial_with_gamma_yield(in, env);
    const RateEstimate mc = lyapunov_mc(m, env, config(1000000, 1, 100));
    const double ref = oracle::roerdink_reference(p, in.a, in.theta, in.k);
    const double rel = std::fabs(closed - ref) / std::fabs(ref);
    out.require(within(mc, closed), "closed form vs MC at p=" + fmt(p));
    out.require(rel <= 1e-6, "closed form vs reference quadrature at p=" + fmt(p));
    out.detail << "p=" << fmt(p) << ": " << fmt(closed, 8) << " mc " << fmt(mc) << " rel " << fmt(rel, 2) << "; ";
  }
  in.p = 1e-6;
  const double small = roerdink_gamma(in).gamma;
  out.require(std::fabs(small - std::log(0.5)) <= 1e-4, "p=1e-6 within 1e-4 of ln a");
  out.detail << "p=1e-6: " << fmt(small, 8);
}

void drift_checks(Outcome& out) {
  for (double mu : {0.3, -0.2}) {
    EnvSpec env;
    const ModelSpec m = hassell(env, mu);
    const double M = choose_drift_threshold(m, env);
    const DriftConstruction c = scalar_drift_construction(m, M);
    const DriftBoundedReport r = drift_bounded_check(m, env, c, 100000);
    out.require(r.audited == 100000 && r.violations == 0, "no audit violations");
    out.require(r.log_alpha.significantly_negative(kDecisionSigmas), "E[log alpha] < 0");
    long steps = 0, violations = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      SimConfig cfg = config(10000, 1);
      cfg.seed = seed;
      const DominanceReport d = coupled_dominance(m, env, cfg, c.lyapunov, c.alpha, c.beta);
      steps += d.steps;
      violations += d.violations;
    }
    out.require(violations == 0, "affine chain dominates");
    out.detail << "mu=" << fmt(mu) << ": M=" << fmt(M) << " E[log alpha]=" << fmt(r.log_alpha) << " audit "
               << r.violations << "/" << r.audited << ", coupled " << violations << "/" << steps << "; ";
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void reproducibility(Outcome& out) {
  const fs::path dir = fs::temp_directory_path() / ("stochpersist_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const json normal1 = {{"dist", "normal"}, {"mean", 1.0}, {"sd", 0.3}};
  const json normal2 = {{"dist", "normal"}, {"mean", 0.8}, {"sd", 0.3}};
  const json fec = {{"dist", "lognormal"}, {"log_mean", 1.0}, {"log_sd", 0.3}};
  const std::vector<std::pair<std::string, json>> configs{
      {"classify",
       {{"task", "classify"},
        {"model", {{"model", "hassell"}, {"lambda", {{"dist", "lognormal"}, {"log_mean", -0.2}, {"log_sd", 0.3}}}}},
        {"sim", {{"replicates", 50}, {"horizon", 5000}}}}},
      {"simulate",
       {{"task", "simulate"},
        {"model", {{"model", "ricker_competition"}, {"r", {normal1, normal2}}, {"alpha", {0.6, 0.5}}}},
        {"sim", {{"replicates", 8}, {"horizon", 20000}, {"burn_in", 100}, {"thinning", 100},
                 {"functionals", {{{"type", "coordinate"}, {"species", 1}}, {{"type", "coordinate"}, {"species", 2}}}}}},
        {"task_params", {{"samples", true}}}}},
      {"permanence",
       {{"task", "permanence"},
        {"model", {{"model", "lottery"}, {"d", 0.1}, {"fecundity", {fec, fec, fec}}}},
        {"sim", {{"replicates", 4}, {"horizon", 20000}, {"burn_in", 1000}}}}},
      {"rps",
       {{"task", "rps"}, {"model", {{"model", "rps_lottery"}, {"d", 0.1}, {"alpha", 3.2}, {"beta", 2}, {"gamma", 1}}}}},
      {"gamma",
       {{"task", "gamma"},
        {"sim", {{"horizon", 200000}, {"replicates", 4}}},
        {"task_params", {{"p", 0.3}, {"a", 0.5}, {"theta", 2}, {"monte_carlo", true}}}}},
      {"drift",
       {{"task", "drift"},
        {"model", {{"model", "hassell"}, {"lambda", {{"dist", "lognormal"}, {"log_mean", 0.3}, {"log_sd", 0.3}}}}},
        {"sim", {{"replicates", 4}, {"horizon", 10000}}},
        {"task_params", {{"audit_points", 20000}}}}}};
  int identical = 0;
  for (const auto& [name, cfg] : configs) {
    const fs::path path = dir / (name + ".json");
    std::ofstream(path) << cfg.dump(2);
    std::vector<std::string> outputs;
    for (unsigned threads : {1u, 4u, 1u, kThreads}) {
      cli::RunOptions opt;
      opt.config_path = path.string();
      const fs::path target = dir / (name + "_" + std::to_string(outputs.size()));
      opt.out_dir = target.string();
      opt.threads = threads;
      std::ostringstream err;
      const int code = cli::run(opt, err);
      out.require(code == cli::kExitOk, name + " exit " + std::to_string(code) + " " + err.str());
      outputs.push_back(slurp(target / "results.json") + slurp(target / "results.csv"));
    }
    bool same = !outputs[0].empty();
    for (const auto& o : outputs) same = same && o == outputs[0];
    out.require(same, name + " byte-identical");
    identical += same;
  }
  fs::remove_all(dir);
  out.detail << identical << "/" << configs.size() << " configs byte-identical over threads {1,4,1," << kThreads << "}";
}

void biennial_extinction(Outcome& out) {
  GammaClosedFormInput in;
  in.p = 0.3;
  in.a = 0.5;
  in.theta = 2.0;
  in.k = 1.0;
  const double gamma = roerdink_gamma(in).gamma;
  EnvSpec env;
  const ModelSpec m = biennial_with_gamma_yield(in, env);
  const RateEstimate mc = lyapunov_mc(m, env, config(200000, 1, 100));
  out.require(gamma < 0.0 && mc.significantly_negative(kDecisionSigmas), "gamma < 0");
  const auto sim = simulate(m, env, config(10000, 50));
  long extinct = 0;
  for (const auto& rep : sim.replicates) extinct += rep.extinct;
  out.require(extinct == 50, "50/50 replicates extinct by T=1e4");
  out.detail << "gamma=" << fmt(gamma) << " mc " << fmt(mc) << ", extinct " << extinct << "/50";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"scalar trichotomy", scalar_trichotomy},
      {"Ricker stationarity identity", ricker_identity},
      {"Ricker competition invasion", competition_invasion},
      {"lottery coexistence", lottery_coexistence},
      {"RPS condition", rps_condition_check},
      {"Lyapunov exponents", lyapunov_exponents},
      {"drift checks", drift_checks},
      {"reproducibility", reproducibility},
      {"biennial extinction", biennial_extinction}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "[exception: " << e.what() << "]";
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !out.pass;
    std::printf("%s %zu %s (%.1f s): %s\n", out.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), seconds,
                out.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
