#include "stochpersist/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "stochpersist/errors.hpp"
#include "stochpersist/lyap.hpp"
#include "stochpersist/numfmt.hpp"
#include "stochpersist/persist.hpp"

#ifndef STOCHPERSIST_VERSION
#define STOCHPERSIST_VERSION "0.0.0"
#endif

namespace stochpersist::cli {

using nlohmann::json;

namespace {

const std::set<std::string> kTasks{"simulate", "permanence", "classify", "invade", "drift", "rps", "gamma", "lyapunov"};

/// Reads an object and remembers which keys were consumed so leftovers can
/// be rejected.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  const json& req(const std::string& key) {
    const json* v = find(key);
    if (!v) throw ConfigError(at(key) + " is required");
    return *v;
  }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  double num(const std::string& key) { return number(req(key), at(key)); }
  double num(const std::string& key, double def) {
    const json* v = find(key);
    return v ? number(*v, at(key)) : def;
  }
  std::string str(const std::string& key) {
    const json& v = req(key);
    if (!v.is_string()) throw ConfigError(at(key) + " must be a string");
    return v.get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + at(it.key()));
  }

  static double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + " must be a number");
    return v.get<double>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

long integer(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
  return v.get<long>();
}

/// 1-based index in the file, 0-based in memory.
std::size_t index(const json& v, const std::string& path) {
  const long i = integer(v, path);
  if (i < 1) throw ConfigError(path + " is a 1-based index");
  return static_cast<std::size_t>(i - 1);
}

Eigen::VectorXd vector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path + " must be a non-empty array of numbers");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = Obj::number(v[i], path);
  return out;
}

std::vector<std::size_t> index_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + " must be an array of 1-based indices");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(index(e, path));
  return out;
}

ScalarDist parse_dist(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string kind = o.str("dist");
  ScalarDist d = dist::Constant{0.0};
  if (kind == "constant") {
    d = dist::Constant{o.num("value")};
  } else if (kind == "normal") {
    d = dist::Normal{o.num("mean"), o.num("sd")};
  } else if (kind == "lognormal") {
    d = dist::LogNormal{o.num("log_mean"), o.num("log_sd")};
  } else if (kind == "gamma") {
    d = dist::Gamma{o.num("shape"), o.num("scale")};
  } else if (kind == "uniform") {
    d = dist::Uniform{o.num("lo"), o.num("hi")};
  } else if (kind == "discrete") {
    const Eigen::VectorXd values = vector(o.req("values"), o.at("values"));
    const Eigen::VectorXd probs = vector(o.req("probs"), o.at("probs"));
    d = dist::Discrete{{values.begin(), values.end()}, {probs.begin(), probs.end()}};
  } else {
    throw ConfigError(path + ": unknown distribution '" + kind + "'");
  }
  o.finish();
  try {
    validate(d);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return d;
}

/// A number, {"coord": i} or an inline distribution appended to `env`.
Coef parse_coef(const json& j, const std::string& path, EnvSpec& env) {
  if (j.is_number()) return Coef::constant(j.get<double>());
  if (j.is_object() && j.contains("coord")) {
    Obj o(j, path);
    const std::size_t i = index(o.req("coord"), o.at("coord"));
    o.finish();
    return Coef::env(i);
  }
  if (j.is_object() && j.contains("dist")) return Coef::env(env.add(parse_dist(j, path)));
  throw ConfigError(path + " must be a number, {\"coord\": i} or a distribution");
}

Coef parse_coef_or(Obj& o, const std::string& key, double def, EnvSpec& env) {
  const json* v = o.find(key);
  return v ? parse_coef(*v, o.at(key), env) : Coef::constant(def);
}

std::vector<Coef> parse_coef_list(const json& j, const std::string& path, EnvSpec& env) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + " must be a non-empty array");
  std::vector<Coef> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_coef(j[i], path + "[" + std::to_string(i) + "]", env));
  return out;
}

ModelSpec parse_model(const json& j, EnvSpec& env) {
  Obj o(j, "model");
  const std::string name = o.str("model");
  auto build = [&]() -> ModelSpec {
    if (name == "hassell")
      return model::Hassell{parse_coef(o.req("lambda"), o.at("lambda"), env), parse_coef_or(o, "b", 1.0, env)};
    if (name == "ricker") return model::Ricker{parse_coef(o.req("r"), o.at("r"), env), parse_coef_or(o, "a", 1.0, env)};
    if (name == "beverton_holt")
      return model::BevertonHolt{parse_coef(o.req("lambda"), o.at("lambda"), env), parse_coef_or(o, "a", 1.0, env),
                                 o.num("s", 0.0)};
    if (name == "ricker_competition") {
      const auto r = parse_coef_list(o.req("r"), o.at("r"), env);
      const Eigen::VectorXd alpha = vector(o.req("alpha"), o.at("alpha"));
      if (r.size() != 2 || alpha.size() != 2) throw ConfigError("model: ricker_competition needs two r and two alpha");
      return model::RickerCompetition{{r[0], r[1]}, {alpha[0], alpha[1]}};
    }
    if (name == "lottery")
      return model::Lottery{o.num("d"), parse_coef_list(o.req("fecundity"), o.at("fecundity"), env)};
    if (name == "rps_lottery")
      return model::RpsLottery{o.num("d"), parse_coef(o.req("alpha"), o.at("alpha"), env),
                               parse_coef(o.req("beta"), o.at("beta"), env),
                               parse_coef(o.req("gamma"), o.at("gamma"), env)};
    if (name == "biennial")
      return model::Biennial{o.num("p"), o.num("a"), o.num("b1", 1.0), o.num("b2", 1.0),
                             parse_coef(o.req("xi"), o.at("xi"), env)};
    if (name == "linear_matrix") {
      const json& rows = o.req("entries");
      if (!rows.is_array() || rows.empty()) throw ConfigError("model.entries must be an array of rows");
      model::LinearMatrix lm;
      lm.k = static_cast<Eigen::Index>(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto row = parse_coef_list(rows[r], "model.entries[" + std::to_string(r) + "]", env);
        if (static_cast<Eigen::Index>(row.size()) != lm.k) throw ConfigError("model.entries must be square");
        lm.entries.insert(lm.entries.end(), row.begin(), row.end());
      }
      return lm;
    }
    if (name == "affine_scalar")
      return model::AffineScalar{parse_coef(o.req("alpha"), o.at("alpha"), env),
                                 parse_coef(o.req("beta"), o.at("beta"), env)};
    throw ConfigError("model: unknown model '" + name + "' (see list-models)");
  };
  ModelSpec m = build();
  o.finish();
  return m;
}

SetDescriptor parse_set(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string type = o.str("type");
  SetDescriptor s;
  if (type == "extinction_neighborhood")
    s = SetDescriptor::extinction_neighborhood(o.num("eta"));
  else if (type == "outside_ball")
    s = SetDescriptor::outside_ball(o.num("radius"));
  else if (type == "box")
    s = SetDescriptor::box(vector(o.req("lo"), o.at("lo")), vector(o.req("hi"), o.at("hi")));
  else
    throw ConfigError(path + ": unknown set type '" + type + "'");
  if (const json* c = o.find("complement")) {
    if (!c->is_boolean()) throw ConfigError(o.at("complement") + " must be a boolean");
    if (c->get<bool>()) s = s.complemented();
  }
  o.finish();
  return s;
}

Functional parse_functional(const json& j, const std::string& path) {
  Obj o(j, path);
  const std::string type = o.str("type");
  Functional h;
  if (type == "coordinate")
    h = Functional::coordinate(index(o.req("species"), o.at("species")));
  else if (type == "log_percapita")
    h = Functional::log_percapita(index(o.req("species"), o.at("species")));
  else if (type == "indicator")
    h = Functional::indicator(parse_set(o.req("set"), o.at("set")));
  else if (type == "log_norm")
    h = Functional::log_norm();
  else
    throw ConfigError(path + ": unknown functional type '" + type + "'");
  o.finish();
  return h;
}

json sim_defaults() {
  return {{"seed", 1},       {"replicates", 1},     {"burn_in", 0},        {"horizon", 1000},
          {"thinning", 1},   {"face_support", json::array()}, {"eta_grid", {0.01}},  {"bound_radius", 1000.0},
          {"sets", json::array()}, {"functionals", json::array()}, {"batches", 20}, {"max_samples", 100000}};
}

SimConfig parse_sim(const json& j) {
  Obj o(j, "sim");
  SimConfig c;
  const json& seed = o.req("seed");
  if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0)) throw ConfigError("sim.seed must be a non-negative integer");
  c.seed = seed.get<std::uint64_t>();
  const long reps = integer(o.req("replicates"), "sim.replicates");
  if (reps < 1) throw ConfigError("sim.replicates must be positive");
  c.replicates = static_cast<std::size_t>(reps);
  c.burn_in = integer(o.req("burn_in"), "sim.burn_in");
  c.horizon = integer(o.req("horizon"), "sim.horizon");
  c.thinning = integer(o.req("thinning"), "sim.thinning");
  if (const json* x = o.find("initial_state")) c.initial_state = vector(*x, "sim.initial_state");
  c.face_support = index_list(o.req("face_support"), "sim.face_support");
  const json& eta = o.req("eta_grid");
  if (!eta.is_array()) throw ConfigError("sim.eta_grid must be an array");
  c.eta_grid.clear();
  for (const auto& e : eta) c.eta_grid.push_back(Obj::number(e, "sim.eta_grid"));
  c.bound_radius = o.num("bound_radius");
  const json& sets = o.req("sets");
  if (!sets.is_array()) throw ConfigError("sim.sets must be an array");
  for (std::size_t i = 0; i < sets.size(); ++i) c.sets.push_back(parse_set(sets[i], "sim.sets[" + std::to_string(i) + "]"));
  const json& fs = o.req("functionals");
  if (!fs.is_array()) throw ConfigError("sim.functionals must be an array");
  for (std::size_t i = 0; i < fs.size(); ++i)
    c.functionals.push_back(parse_functional(fs[i], "sim.functionals[" + std::to_string(i) + "]"));
  c.batches = integer(o.req("batches"), "sim.batches");
  const long ms = integer(o.req("max_samples"), "sim.max_samples");
  if (ms < 0) throw ConfigError("sim.max_samples must be non-negative");
  c.max_samples = static_cast<std::size_t>(ms);
  o.finish();
  validate(c);
  return c;
}

/// Task parameters with defaults; null marks a required key.
json task_defaults(const std::string& task) {
  if (task == "simulate") return {{"samples", false}};
  if (task == "classify") return {{"draws", 100000}, {"x_max", 1e6}, {"simulate", true}};
  if (task == "invade") return {{"invader", nullptr}, {"face", nullptr}, {"taylor", false}, {"inner_draws", 100}};
  if (task == "permanence") return {{"dirac_draws", 100000}, {"alternative_starts", json::array()}};
  if (task == "drift")
    return {{"construction", "auto"}, {"eps", 0.1},      {"threshold", 0.0},
            {"audit_points", 100000}, {"coupled", true}, {"ergodic", json::object()}};
  if (task == "rps") return {{"draws", 100000}, {"weights", true}, {"dirac_draws", 100000}};
  if (task == "gamma")
    return {{"p", nullptr},       {"a", nullptr},         {"theta", 1.0},     {"k", 1.0},  {"rel_tol", 1e-10},
            {"p1_report", false}, {"monte_carlo", false}, {"b1", 1.0},        {"b2", 1.0}};
  if (task == "lyapunov") return {{"norm", "l1"}};
  return json::object();
}

json resolve_params(const std::string& task, const json& given) {
  json out = task_defaults(task);
  if (!given.is_object()) throw ConfigError("task_params must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!out.contains(it.key())) throw ConfigError("unknown key task_params." + it.key() + " for task " + task);
    const json& def = out[it.key()];
    const bool ok = def.is_null() || (def.is_boolean() && it->is_boolean()) ||
                    (def.is_number() && it->is_number()) || (def.is_string() && it->is_string()) ||
                    (def.is_array() && it->is_array()) || (def.is_object() && it->is_object());
    if (!ok) throw ConfigError("task_params." + it.key() + " has the wrong type");
    out[it.key()] = *it;
  }
  for (auto it = out.begin(); it != out.end(); ++it)
    if (it->is_null()) throw ConfigError("task_params." + it.key() + " is required for task " + task);
  for (const char* key : {"draws", "inner_draws", "dirac_draws", "audit_points"})
    if (out.contains(key) && !out[key].is_number_integer()) throw ConfigError(std::string("task_params.") + key + " must be an integer");
  if (out.contains("invader")) index(out["invader"], "task_params.invader");
  if (out.contains("face")) index_list(out["face"], "task_params.face");
  return out;
}

// ---------------------------------------------------------------- output

struct Row {
  std::string quantity;
  std::optional<std::size_t> species;
  std::string face;
  RateEstimate est;
  std::string verdict;
};

json num(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

std::string face_label(const std::vector<std::size_t>& support) {
  std::string s = "{";
  for (std::size_t i = 0; i < support.size(); ++i) s += (i ? "," : "") + std::to_string(support[i] + 1);
  return s + "}";
}

json estimate_json(const RateEstimate& e) {
  return {{"mean", num(e.mean)}, {"std_error", num(e.std_error)}, {"n", e.n}, {"batches", e.batches}};
}

json vector_json(const Eigen::VectorXd& x) {
  json a = json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) a.push_back(num(x[i]));
  return a;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(double v) {
  if (std::isfinite(v)) return format_double(v);
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

std::string sign_verdict(const RateEstimate& e) {
  if (e.significantly_positive(kDecisionSigmas)) return "positive";
  if (e.significantly_negative(kDecisionSigmas)) return "negative";
  return "inconclusive";
}

RateEstimate exact_count(double value, long n) {
  RateEstimate e = exact_estimate(value);
  e.n = n;
  return e;
}

struct Builder {
  std::vector<Row> rows;
  json report = json::object();
  std::vector<std::pair<std::string, std::string>> extra;

  void add(std::string quantity, const RateEstimate& e, std::string verdict = {},
           std::optional<std::size_t> species = std::nullopt, std::string face = {}) {
    rows.push_back({std::move(quantity), species, std::move(face), e, std::move(verdict)});
  }
};

// ---------------------------------------------------------------- tasks

void task_simulate(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const ModelSpec& m = *exp.model;
  const auto res = simulate(m, exp.env, cfg);
  const long reps = static_cast<long>(res.replicates.size());
  const long window = cfg.horizon - cfg.burn_in;

  std::ostringstream summary;
  summary << "replicate,set_name,occupation,functional,mean,std_error,extinct\n";
  json replicates = json::array();
  for (const auto& rep : res.replicates) {
    json r{{"replicate", rep.replicate},
           {"extinct", rep.extinct},
           {"extinction_step", rep.extinction_step},
           {"terminal_state", vector_json(rep.terminal_state)}};
    for (const auto& [label, frac] : rep.occupation) {
      r["occupation"][label] = num(frac);
      summary << rep.replicate << "," << csv_field(label) << "," << csv_number(frac) << ",,,," << rep.extinct << "\n";
    }
    for (const auto& [label, e] : rep.functional_averages) {
      r["functionals"][label] = estimate_json(e);
      summary << rep.replicate << ",,," << csv_field(label) << "," << csv_number(e.mean) << ","
              << csv_number(e.std_error) << "," << rep.extinct << "\n";
    }
    replicates.push_back(std::move(r));
  }

  for (const auto& [label, frac] : res.pooled.occupation) {
    Eigen::ArrayXd occ(reps);
    for (long r = 0; r < reps; ++r) occ[r] = res.replicates[static_cast<std::size_t>(r)].occupation.at(label);
    RateEstimate e = iid_estimate(occ);
    e.mean = frac;
    e.n = reps * window;
    b.add("occupation " + label, e);
    summary << "pooled," << csv_field(label) << "," << csv_number(frac) << ",,,,\n";
  }
  for (const auto& [label, e] : res.pooled.functional_averages) {
    b.add("time_average " + label, e);
    summary << "pooled,,," << csv_field(label) << "," << csv_number(e.mean) << "," << csv_number(e.std_error) << ",\n";
  }
  long extinct = 0;
  for (const auto& rep : res.replicates) extinct += rep.extinct;
  b.add("extinct_fraction", proportion(extinct, reps));

  b.report["replicates"] = std::move(replicates);
  b.extra.emplace_back("summary.csv", summary.str());
  if (exp.task_params.at("samples").get<bool>()) {
    std::ostringstream s;
    const Eigen::Index k = dimension(m);
    for (Eigen::Index i = 0; i < k; ++i) s << (i ? "," : "") << "x" << i + 1;
    s << "\n";
    for (const auto& x : res.pooled.thinned_samples) {
      for (Eigen::Index i = 0; i < k; ++i) s << (i ? "," : "") << csv_number(x[i]);
      s << "\n";
    }
    b.extra.emplace_back("samples.csv", s.str());
  }
}

void task_classify(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  ClassifyOptions opt;
  opt.draws = p.at("draws").get<long>();
  opt.x_max = p.at("x_max").get<double>();
  opt.run_simulation = p.at("simulate").get<bool>();
  const Verdict v = scalar_classify(*exp.model, exp.env, cfg, opt);
  const std::string verdict = to_string(v.kind);
  for (const auto& [label, e] : v.evidence) {
    const bool rate = label.rfind("lambda", 0) == 0;
    b.add(label, e, rate ? verdict : std::string{}, rate ? std::optional<std::size_t>{0} : std::nullopt);
  }
  b.report["verdict"] = verdict;
  b.report["decision_margin"] = num(v.decision_margin);
  b.report["simulation_agrees"] = v.simulation_agrees;
  b.report["notes"] = v.notes;
}

void task_invade(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  const ModelSpec& m = *exp.model;
  const std::size_t invader = index(p.at("invader"), "task_params.invader");
  const auto face = index_list(p.at("face"), "task_params.face");
  const bool taylor = p.at("taylor").get<bool>();
  const long inner = p.at("inner_draws").get<long>();
  if (static_cast<Eigen::Index>(invader) >= dimension(m)) throw ConfigError("task_params.invader out of range");
  if (std::find(face.begin(), face.end(), invader) != face.end())
    throw ConfigError("task_params.invader must not belong to the resident face");
  if (taylor && !m.as<model::Lottery>()) throw ConfigError("task_params.taylor applies to the lottery model only");

  const FaceRates fr = face_growth_rates(m, exp.env, cfg, face);
  if (fr.degenerate) throw FaceDegenerateError("face degenerate: " + fr.note);
  const std::string fl = face_label(fr.support);
  const RateEstimate& rate = fr.rates[invader];
  b.add("invasion_rate", rate, sign_verdict(rate), invader, fl);
  for (auto i : fr.support) b.add("resident_rate", fr.rates[i], {}, i, fl);
  b.report["invasion_rate"] = estimate_json(rate);
  if (taylor) {
    const TaylorRate t = lottery_taylor_rate(m, exp.env, fr.samples, invader, inner, cfg.seed, cfg.batches);
    b.add("taylor_rate", t.estimate, sign_verdict(t.estimate), invader, fl);
    b.report["taylor_rate"] = estimate_json(t.estimate);
    b.report["warnings"] = t.warnings;
  }
}

json table_json(const InvasionTable& table, Builder& b) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    const std::string fl = face_label(row.support);
    json r{{"face", fl}, {"source", row.source}, {"degenerate", row.degenerate}, {"note", row.note}};
    for (std::size_t i = 0; i < row.rates.size(); ++i) {
      json e = estimate_json(row.rates[i]);
      e["species"] = i + 1;
      e["analytic_measure"] = static_cast<bool>(row.analytic[i]);
      r["rates"].push_back(e);
      if (std::find(row.support.begin(), row.support.end(), i) == row.support.end())
        b.add("invasion_rate", row.rates[i], row.degenerate ? "degenerate" : sign_verdict(row.rates[i]), i, fl);
    }
    rows.push_back(std::move(r));
  }
  return {{"verdict", to_string(table.verdict)}, {"measure_note", table.measure_note}, {"rows", rows}};
}

void weights_json(const InvasionTable& table, Builder& b) {
  const WeightsResult w = find_persistence_weights(table);
  b.add("persistence_weights_margin", exact_estimate(w.margin), w.feasible ? "feasible" : "infeasible");
  b.report["weights"] = {{"feasible", w.feasible}, {"margin", num(w.margin)}, {"p", vector_json(w.p)}};
}

void task_permanence(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  ReportOptions opt;
  opt.dirac_draws = p.at("dirac_draws").get<long>();
  for (const auto& x : p.at("alternative_starts")) opt.alternative_starts.push_back(vector(x, "task_params.alternative_starts"));
  const InvasionTable table = boundary_invasion_report(*exp.model, exp.env, cfg, opt);
  b.report["table"] = table_json(table, b);
  weights_json(table, b);
}

void task_drift(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  const ModelSpec& m = *exp.model;
  std::string kind = p.at("construction").get<std::string>();
  const long points = p.at("audit_points").get<long>();
  if (kind == "auto") {
    if (is_scalar(m))
      kind = "scalar";
    else if (m.as<model::RickerCompetition>())
      kind = "ricker_competition";
    else if (m.as<model::AffineScalar>())
      kind = "affine";
    else
      throw ConfigError("no drift construction ships for " + model_name(m));
  }
  // validate the ergodic block before any sampling
  std::optional<SetDescriptor> small_set;
  StateFunction lyap;
  double beta = 0.0;
  long erg_points = 0, erg_inner = 0;
  const json& erg = p.at("ergodic");
  if (!erg.empty()) {
    Obj o(erg, "task_params.ergodic");
    lyap = named_lyapunov(o.find("lyapunov") ? o.str("lyapunov") : "sum");
    beta = o.num("beta");
    small_set = parse_set(o.req("set"), o.at("set"));
    erg_points = o.find("points") ? integer(*o.find("points"), o.at("points")) : 1000;
    erg_inner = o.find("inner") ? integer(*o.find("inner"), o.at("inner")) : 1000;
    o.finish();
  }

  DriftConstruction c;
  if (kind == "scalar") {
    double threshold = p.at("threshold").get<double>();
    if (threshold <= 0.0) threshold = choose_drift_threshold(m, exp.env, p.at("eps").get<double>(), cfg.seed);
    c = scalar_drift_construction(m, threshold);
    b.report["threshold"] = num(threshold);
  } else if (kind == "ricker_competition") {
    c = ricker_competition_drift_construction(m);
  } else if (kind == "affine") {
    c = affine_drift_construction(m);
  } else {
    throw ConfigError("task_params.construction must be auto, scalar, ricker_competition or affine");
  }

  const DriftBoundedReport r = drift_bounded_check(m, exp.env, c, points, cfg.seed);
  const std::string hv = r.hypotheses_hold ? "holds" : "fails";
  b.add("E_log_alpha", r.log_alpha, sign_verdict(r.log_alpha));
  b.add("E_log_plus_alpha", r.log_plus_alpha);
  b.add("E_log_plus_beta", r.log_plus_beta);
  b.add("audit_violations", exact_count(static_cast<double>(r.violations), r.audited), hv);
  b.report["construction"] = r.construction;
  b.report["bounded_hypotheses"] = hv;
  if (r.counterexample_state) {
    b.report["counterexample"] = {{"state", vector_json(*r.counterexample_state)},
                                  {"env", vector_json(*r.counterexample_env)}};
  }
  if (p.at("coupled").get<bool>()) {
    const DominanceReport d = coupled_dominance(m, exp.env, cfg, c.lyapunov, c.alpha, c.beta);
    b.add("dominance_violations", exact_count(static_cast<double>(d.violations), d.steps),
          d.violations == 0 ? "dominates" : "fails");
    b.report["dominance_max_excess"] = num(d.max_excess);
  }
  if (small_set) {
    const DriftErgodicReport e = drift_ergodic_check(m, exp.env, lyap, *small_set, beta, erg_points, erg_inner, cfg.seed);
    const std::string ev = e.holds ? "holds" : "fails";
    b.add("ergodic_worst_slack", exact_count(e.worst_slack, e.audited), ev);
    b.add("ergodic_violations", exact_count(static_cast<double>(e.violations), e.audited), ev);
    b.report["ergodic"] = {{"verdict", ev}, {"worst_state", vector_json(e.worst_state)}, {"advisory", true}};
  }
}

void task_rps(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  const RpsConditionReport r = rps_condition(*exp.model, exp.env, p.at("draws").get<long>(), cfg.seed);
  b.add("exact_lhs", r.exact_lhs, to_string(r.exact));
  b.add("small_d_lhs", r.small_d_lhs, to_string(r.small_d));
  b.report["d"] = num(r.d);
  if (p.at("weights").get<bool>()) {
    ReportOptions opt;
    opt.dirac_draws = p.at("dirac_draws").get<long>();
    const InvasionTable table = boundary_invasion_report(*exp.model, exp.env, cfg, opt);
    b.report["table"] = table_json(table, b);
    weights_json(table, b);
  }
}

void task_gamma(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const auto& p = exp.task_params;
  GammaClosedFormInput in;
  in.p = Obj::number(p.at("p"), "task_params.p");
  in.a = Obj::number(p.at("a"), "task_params.a");
  in.theta = p.at("theta").get<double>();
  in.k = p.at("k").get<double>();
  in.rel_tol = p.at("rel_tol").get<double>();
  validate(in);
  const RoerdinkResult r = roerdink_gamma(in);
  RateEstimate g = exact_estimate(r.gamma);
  g.std_error = r.error;
  g.n = r.evaluations;
  b.add("gamma_closed_form", g);
  b.report["branch"] = r.branch;
  b.report["z"] = num(r.z);
  b.report["z_a_equals_1_form"] = num(roerdink_z_as_printed(in));
  b.report["p_used"] = num(r.p_used);
  if (p.at("p1_report").get<bool>()) {
    const RoerdinkP1Report rep = roerdink_p1_report(in);
    b.add("p1_at_cap", exact_estimate(rep.at_cap));
    b.add("p1_extrapolated_limit", exact_estimate(rep.extrapolated_limit));
    b.add("p1_candidate_psi_a", exact_estimate(rep.candidate_psi_a));
    b.add("p1_candidate_psi_k", exact_estimate(rep.candidate_psi_k));
    b.report["p1"] = {{"discrepancy_psi_a", num(rep.discrepancy_psi_a)}, {"discrepancy_psi_k", num(rep.discrepancy_psi_k)}};
  }
  if (p.at("monte_carlo").get<bool>()) {
    EnvSpec env = exp.env;
    const ModelSpec m = biennial_with_gamma_yield(in, env, p.at("b1").get<double>(), p.at("b2").get<double>());
    const RateEstimate mc = lyapunov_mc(m, env, cfg);
    const double diff = mc.mean - r.gamma;
    b.add("lyapunov_mc", mc, std::fabs(diff) <= kDecisionSigmas * mc.std_error ? "agrees" : "disagrees");
  }
}

void task_lyapunov(const Experiment& exp, const SimConfig& cfg, Builder& b) {
  const std::string n = exp.task_params.at("norm").get<std::string>();
  if (n != "l1" && n != "max") throw ConfigError("task_params.norm must be l1 or max");
  const ModelSpec& m = *exp.model;
  const RateEstimate e = lyapunov_mc(m, exp.env, cfg, n == "l1" ? NormKind::L1 : NormKind::Max);
  b.add("lyapunov_exponent", e, sign_verdict(e));
  if (exp.env.deterministic()) {
    Stream s(cfg.seed, 0);
    const Eigen::MatrixXd a = linearization_at_zero(m, sample(exp.env, s));
    const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
    b.add("log_spectral_radius", exact_estimate(std::log(rho)));
  }
}

/// Raw statistics for open questions: no thresholds, no verdicts.
json explore_block(const Experiment& exp, const SimConfig& cfg) {
  if (!exp.model) return {{"skipped", "no model"}};
  const ModelSpec& m = *exp.model;
  SimConfig c = cfg;
  c.max_samples = 0;
  const auto res = simulate(m, exp.env, c);
  json out;
  for (const auto& [label, frac] : res.pooled.occupation) out["occupation"][label] = num(frac);
  for (const auto& [label, e] : res.pooled.functional_averages) out["time_average"][label] = estimate_json(e);
  out["extinct_fraction"] = num(res.extinct_fraction);
  for (double eta : cfg.eta_grid) {
    const auto s = SetDescriptor::extinction_neighborhood(eta);
    out["hit_probability_at_horizon"][s.label()] = estimate_json(ensemble_hit_probability(m, exp.env, c, s, c.horizon));
  }
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << contents;
  out.close();
  if (!out) throw NumericError("failed to write " + path.string());
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &config;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const bool last = i + 1 == path.size();
    if (node->is_array()) {
      std::size_t pos = 0;
      try {
        pos = std::stoul(path[i]);
      } catch (const std::exception&) {
        throw ConfigError("--set: '" + path[i] + "' is not an array index");
      }
      if (pos >= node->size()) throw ConfigError("--set: index " + path[i] + " out of range");
      node = &(*node)[pos];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("--set: cannot descend into '" + path[i] + "'");
      node = &(*node)[path[i]];
    }
    if (last) *node = value;
  }
}

Experiment parse_experiment(const json& config) {
  Obj top(config, "config");
  Experiment exp{std::nullopt, {}, {}, {}, {}, {}};
  const std::string task = top.str("task");
  if (!kTasks.count(task)) throw ConfigError("unknown task '" + task + "'");
  exp.task = task;

  json resolved = json::object();
  resolved["task"] = task;
  if (const json* env = top.find("env")) {
    Obj o(*env, "env");
    const json& coords = o.req("coords");
    if (!coords.is_array()) throw ConfigError("env.coords must be an array of distributions");
    for (std::size_t i = 0; i < coords.size(); ++i)
      exp.env.add(parse_dist(coords[i], "env.coords[" + std::to_string(i) + "]"));
    o.finish();
    resolved["env"] = *env;
  } else {
    resolved["env"] = {{"coords", json::array()}};
  }
  if (const json* m = top.find("model")) {
    exp.model = parse_model(*m, exp.env);
    validate(*exp.model, exp.env);
    resolved["model"] = *m;
  } else if (task != "gamma") {
    throw ConfigError("config.model is required for task " + task);
  }

  json sim = sim_defaults();
  if (const json* s = top.find("sim")) {
    if (!s->is_object()) throw ConfigError("sim must be an object");
    for (auto it = s->begin(); it != s->end(); ++it) sim[it.key()] = *it;
  }
  exp.sim = parse_sim(sim);
  resolved["sim"] = sim;

  const json* tp = top.find("task_params");
  exp.task_params = resolve_params(task, tp ? *tp : json::object());
  resolved["task_params"] = exp.task_params;

  if (const json* out = top.find("output_dir"))
    if (!out->is_string()) throw ConfigError("output_dir must be a string");
  top.finish();
  exp.resolved = std::move(resolved);
  return exp;
}

TaskOutput execute(const Experiment& exp, unsigned threads, bool explore) {
  SimConfig cfg = exp.sim;
  cfg.threads = threads;
  Builder b;
  if (exp.task == "simulate")
    task_simulate(exp, cfg, b);
  else if (exp.task == "classify")
    task_classify(exp, cfg, b);
  else if (exp.task == "invade")
    task_invade(exp, cfg, b);
  else if (exp.task == "permanence")
    task_permanence(exp, cfg, b);
  else if (exp.task == "drift")
    task_drift(exp, cfg, b);
  else if (exp.task == "rps")
    task_rps(exp, cfg, b);
  else if (exp.task == "gamma")
    task_gamma(exp, cfg, b);
  else if (exp.task == "lyapunov")
    task_lyapunov(exp, cfg, b);

  const std::string config_text = exp.resolved.dump();
  json env_names = json::array();
  for (const auto& d : exp.env.coords) env_names.push_back(name(d));
  TaskOutput out;
  out.results["provenance"] = {{"artifact", "stochpersist"},
                               {"version", STOCHPERSIST_VERSION},
                               {"config_hash", "fnv1a64:" + fnv1a_hex(config_text)},
                               {"seed", exp.sim.seed},
                               {"environment", env_names},
                               {"config", exp.resolved}};
  out.results["task"] = exp.task;
  if (exp.model) out.results["model"] = model_name(*exp.model);
  json estimates = json::array();
  std::ostringstream csv;
  csv << "task,quantity,species,face,mean,std_error,n,verdict\n";
  for (const auto& r : b.rows) {
    estimates.push_back({{"quantity", r.quantity},
                         {"species", r.species ? json(*r.species + 1) : json(nullptr)},
                         {"face", r.face},
                         {"mean", num(r.est.mean)},
                         {"std_error", num(r.est.std_error)},
                         {"n", r.est.n},
                         {"batches", r.est.batches},
                         {"verdict", r.verdict}});
    csv << exp.task << "," << csv_field(r.quantity) << "," << (r.species ? std::to_string(*r.species + 1) : "") << ","
        << csv_field(r.face) << "," << csv_number(r.est.mean) << "," << csv_number(r.est.std_error) << "," << r.est.n
        << "," << r.verdict << "\n";
  }
  out.results["estimates"] = std::move(estimates);
  out.results["report"] = std::move(b.report);
  if (explore) out.results["explore"] = explore_block(exp, cfg);
  out.results["provenance"]["explore"] = explore;
  out.csv = csv.str();
  out.extra_files = std::move(b.extra);
  return out;
}

int run(const RunOptions& options, std::ostream& err) {
  namespace fs = std::filesystem;
  std::optional<fs::path> out_dir;
  std::vector<std::string> names{"results.json", "results.csv", "summary.csv", "samples.csv"};
  auto cleanup = [&] {
    if (!out_dir) return;
    std::error_code ec;
    for (const auto& n : names) {
      fs::remove(*out_dir / n, ec);
      fs::remove(*out_dir / (n + ".tmp"), ec);
    }
  };
  try {
    json config = read_json_file(options.config_path);
    if (!config.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& s : options.overrides) apply_override(config, s);
    if (options.seed) config["sim"]["seed"] = *options.seed;
    if (options.out_dir)
      out_dir = fs::path(*options.out_dir);
    else if (config.contains("output_dir") && config["output_dir"].is_string())
      out_dir = fs::path(config["output_dir"].get<std::string>());
    const Experiment exp = parse_experiment(config);
    if (!out_dir) throw ConfigError("no output directory: set output_dir or pass --out");

    const TaskOutput result = execute(exp, std::max(1u, options.threads), options.explore);
    std::vector<std::pair<std::string, std::string>> files{{"results.json", result.results.dump(2) + "\n"},
                                                           {"results.csv", result.csv}};
    files.insert(files.end(), result.extra_files.begin(), result.extra_files.end());
    fs::create_directories(*out_dir);
    for (const auto& [n, contents] : files) write_file(*out_dir / (n + ".tmp"), contents);
    for (const auto& [n, contents] : files) fs::rename(*out_dir / (n + ".tmp"), *out_dir / n);
    return kExitOk;
  } catch (const ConfigError& e) {
    cleanup();
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    cleanup();
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    cleanup();
    err << "numeric error: " << e.what();
    if (e.step() >= 0) err << " (step " << e.step() << ")";
    if (e.state().size() > 0) {
      err << " state [";
      for (Eigen::Index i = 0; i < e.state().size(); ++i) err << (i ? ", " : "") << format_double(e.state()[i]);
      err << "]";
    }
    err << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    cleanup();
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

std::string list_models() {
  std::ostringstream out;
  for (const auto& e : catalog())
    out << e.name << "\t" << e.parameters << "\t" << e.env_wiring << "\t" << e.state_space << "\n";
  return out.str();
}

}  // namespace stochpersist::cli
