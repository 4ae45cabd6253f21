#include "stochpersist/models.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "stochpersist/errors.hpp"

namespace stochpersist {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_index(std::size_t i, Eigen::Index k) {
  if (static_cast<Eigen::Index>(i) >= k) {
    std::ostringstream os;
    os << "species index " << i << " out of range for a " << k << "-species model";
    throw ConfigError(os.str());
  }
}

double finite_log(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream os;
    os << what << ": per-capita factor must be strictly positive and finite, got " << v;
    throw NumericError(os.str());
  }
  return std::log(v);
}

struct RpsDraw {
  double alpha, beta, gamma;
};

RpsDraw rps_draw(const model::RpsLottery& m, const Eigen::Ref<const Eigen::VectorXd>& w) {
  RpsDraw r{m.alpha(w), m.beta(w), m.gamma(w)};
  if (!(r.alpha > r.beta && r.beta > r.gamma && r.gamma > 0.0)) {
    std::ostringstream os;
    os << "rps_lottery: environment draw violates alpha > beta > gamma > 0 (alpha=" << r.alpha << ", beta=" << r.beta
       << ", gamma=" << r.gamma << ")";
    throw ConfigError(os.str());
  }
  return r;
}

Eigen::Vector3d rps_rates(const RpsDraw& r, const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::Matrix3d payoff;
  payoff << r.beta, r.alpha, r.gamma,  //
      r.gamma, r.beta, r.alpha,        //
      r.alpha, r.gamma, r.beta;
  return payoff * x;
}

double lottery_denominator(const model::Lottery& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& w) {
  double s = 0.0;
  for (std::size_t j = 0; j < m.fecundity.size(); ++j) s += x[static_cast<Eigen::Index>(j)] * m.fecundity[j](w);
  return s;
}

void check_finite(const Eigen::VectorXd& out, const Eigen::Ref<const Eigen::VectorXd>& x, const ModelSpec& m) {
  if (!out.allFinite()) throw NumericError("numeric overflow stepping " + model_name(m), Eigen::VectorXd(x));
}

void renormalize(Eigen::VectorXd& x) {
  const double s = x.sum();
  if (!(s > 0.0)) throw NumericError("simplex state has non-positive mass", x);
  x /= s;
}

std::size_t max_coord(const Coef& c) { return c.coord ? *c.coord + 1 : 0; }

}  // namespace

std::string model_name(const ModelSpec& m) {
  return std::visit(overloaded{
                        [](const model::Hassell&) -> std::string { return "hassell"; },
                        [](const model::Ricker&) -> std::string { return "ricker"; },
                        [](const model::BevertonHolt&) -> std::string { return "beverton_holt"; },
                        [](const model::RickerCompetition&) -> std::string { return "ricker_competition"; },
                        [](const model::Lottery&) -> std::string { return "lottery"; },
                        [](const model::RpsLottery&) -> std::string { return "rps_lottery"; },
                        [](const model::Biennial&) -> std::string { return "biennial"; },
                        [](const model::LinearMatrix&) -> std::string { return "linear_matrix"; },
                        [](const model::AffineScalar&) -> std::string { return "affine_scalar"; },
                        [](const model::Face& f) -> std::string { return "face(" + model_name(*f.parent) + ")"; },
                    },
                    m.v);
}

Eigen::Index dimension(const ModelSpec& m) {
  return std::visit(overloaded{
                        [](const model::RickerCompetition&) -> Eigen::Index { return 2; },
                        [](const model::Lottery& l) -> Eigen::Index {
                          return static_cast<Eigen::Index>(l.fecundity.size());
                        },
                        [](const model::RpsLottery&) -> Eigen::Index { return 3; },
                        [](const model::Biennial&) -> Eigen::Index { return 2; },
                        [](const model::LinearMatrix& l) -> Eigen::Index { return l.k; },
                        [](const model::Face& f) -> Eigen::Index { return static_cast<Eigen::Index>(f.support.size()); },
                        [](const auto&) -> Eigen::Index { return 1; },
                    },
                    m.v);
}

StateSpace state_space(const ModelSpec& m) {
  return std::visit(overloaded{
                        [](const model::Lottery&) { return StateSpace::Simplex; },
                        [](const model::RpsLottery&) { return StateSpace::Simplex; },
                        [](const model::Face& f) { return state_space(*f.parent); },
                        [](const auto&) { return StateSpace::Orthant; },
                    },
                    m.v);
}

ExtinctionSet extinction_set(const ModelSpec& m) {
  return std::visit(overloaded{
                        [](const model::Biennial&) { return ExtinctionSet::Origin; },
                        [](const model::LinearMatrix&) { return ExtinctionSet::Origin; },
                        [](const model::AffineScalar&) { return ExtinctionSet::None; },
                        [](const auto&) { return ExtinctionSet::CoordinateUnion; },
                    },
                    m.v);
}

bool is_multiplicative(const ModelSpec& m) {
  return !std::holds_alternative<model::Biennial>(m.v) && !std::holds_alternative<model::LinearMatrix>(m.v) &&
         !std::holds_alternative<model::AffineScalar>(m.v);
}

bool is_scalar(const ModelSpec& m) {
  return std::holds_alternative<model::Hassell>(m.v) || std::holds_alternative<model::Ricker>(m.v) ||
         std::holds_alternative<model::BevertonHolt>(m.v);
}

bool is_structured(const ModelSpec& m) {
  return std::holds_alternative<model::Biennial>(m.v) || std::holds_alternative<model::LinearMatrix>(m.v);
}

std::size_t required_env_dim(const ModelSpec& m) {
  return std::visit(overloaded{
                        [](const model::Hassell& h) { return std::max(max_coord(h.lambda), max_coord(h.b)); },
                        [](const model::Ricker& r) { return std::max(max_coord(r.r), max_coord(r.a)); },
                        [](const model::BevertonHolt& b) { return std::max(max_coord(b.lambda), max_coord(b.a)); },
                        [](const model::RickerCompetition& r) { return std::max(max_coord(r.r[0]), max_coord(r.r[1])); },
                        [](const model::Lottery& l) {
                          std::size_t n = 0;
                          for (const auto& c : l.fecundity) n = std::max(n, max_coord(c));
                          return n;
                        },
                        [](const model::RpsLottery& r) {
                          return std::max({max_coord(r.alpha), max_coord(r.beta), max_coord(r.gamma)});
                        },
                        [](const model::Biennial& b) { return max_coord(b.xi); },
                        [](const model::LinearMatrix& l) {
                          std::size_t n = 0;
                          for (const auto& c : l.entries) n = std::max(n, max_coord(c));
                          return n;
                        },
                        [](const model::AffineScalar& a) { return std::max(max_coord(a.alpha), max_coord(a.beta)); },
                        [](const model::Face& f) { return required_env_dim(*f.parent); },
                    },
                    m.v);
}

void validate(const ModelSpec& m, const EnvSpec& env) {
  if (required_env_dim(m) > env.coords.size()) {
    std::ostringstream os;
    os << model_name(m) << " references environment coordinate " << required_env_dim(m) - 1 << " but the environment has "
       << env.coords.size() << " coordinates";
    throw ConfigError(os.str());
  }
  std::visit(overloaded{
                 [](const model::BevertonHolt& b) {
                   if (!(b.s >= 0.0 && b.s < 1.0)) throw ConfigError("beverton_holt: survivorship s must lie in [0,1)");
                 },
                 [](const model::RickerCompetition& r) {
                   if (!(r.alpha[0] > 0.0 && r.alpha[1] > 0.0))
                     throw ConfigError("ricker_competition: alpha coefficients must be positive");
                 },
                 [](const model::Lottery& l) {
                   if (!(l.d > 0.0 && l.d <= 1.0)) throw ConfigError("lottery: d must lie in (0,1]");
                   if (l.fecundity.empty()) throw ConfigError("lottery: needs at least one species");
                 },
                 [](const model::RpsLottery& r) {
                   if (!(r.d > 0.0 && r.d <= 1.0)) throw ConfigError("rps_lottery: d must lie in (0,1]");
                 },
                 [](const model::Biennial& b) {
                   if (!(b.p >= 0.0 && b.p <= 1.0)) throw ConfigError("biennial: p must lie in [0,1]");
                   if (!(b.a > 0.0 && b.a < 1.0)) throw ConfigError("biennial: a must lie in (0,1)");
                   if (!(b.b1 > 0.0 && b.b2 > 0.0)) throw ConfigError("biennial: b1 and b2 must be positive");
                 },
                 [](const model::LinearMatrix& l) {
                   if (l.k < 1 || static_cast<Eigen::Index>(l.entries.size()) != l.k * l.k)
                     throw ConfigError("linear_matrix: entries must form a k x k matrix");
                 },
                 [&env](const model::Face& f) {
                   if (!f.parent) throw ConfigError("face: missing parent model");
                   validate(*f.parent, env);
                 },
                 [](const auto&) {},
             },
             m.v);
}

double log_percapita_growth(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& w, std::size_t i) {
  check_index(i, dimension(m));
  if (x.size() != dimension(m)) throw ConfigError("state dimension does not match " + model_name(m));
  return std::visit(
      overloaded{
          [&](const model::Hassell& h) { return finite_log(h.lambda(w), "hassell") - h.b(w) * std::log1p(x[0]); },
          [&](const model::Ricker& r) { return r.r(w) - r.a(w) * x[0]; },
          [&](const model::BevertonHolt& b) {
            return finite_log(b.lambda(w) / (1.0 + b.a(w) * x[0]) + b.s, "beverton_holt");
          },
          [&](const model::RickerCompetition& r) {
            const auto j = static_cast<Eigen::Index>(1 - i);
            const auto ii = static_cast<Eigen::Index>(i);
            return r.r[i](w) - x[ii] - r.alpha[static_cast<std::size_t>(j)] * x[j];
          },
          [&](const model::Lottery& l) {
            const double denom = lottery_denominator(l, x, w);
            return finite_log((1.0 - l.d) + l.d * l.fecundity[i](w) / denom, "lottery");
          },
          [&](const model::RpsLottery& r) {
            const Eigen::Vector3d b = rps_rates(rps_draw(r, w), x);
            return finite_log((1.0 - r.d) + r.d * b[static_cast<Eigen::Index>(i)] / x.dot(b), "rps_lottery");
          },
          [&](const model::Face& f) {
            const Eigen::VectorXd full = embed_face(x, f.support, dimension(*f.parent));
            return log_percapita_growth(*f.parent, full, w, f.support[i]);
          },
          [&](const auto&) -> double {
            throw ConfigError(model_name(m) + " is not of multiplicative form; per-capita growth is undefined");
          },
      },
      m.v);
}

double percapita_growth(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                        const Eigen::Ref<const Eigen::VectorXd>& w, std::size_t i) {
  if (const auto* h = m.as<model::Hassell>()) {
    check_index(i, 1);
    return h->lambda(w) / std::pow(1.0 + x[0], h->b(w));
  }
  return std::exp(log_percapita_growth(m, x, w, i));
}

Eigen::VectorXd step(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& w) {
  if (x.size() != dimension(m)) throw ConfigError("state dimension does not match " + model_name(m));
  if (static_cast<std::size_t>(w.size()) < required_env_dim(m))
    throw ConfigError("environment dimension does not match the wiring of " + model_name(m));
  Eigen::VectorXd out(x.size());
  std::visit(overloaded{
                 [&](const model::Biennial&) { out.noalias() = projection_matrix(m, x, w) * x; },
                 [&](const model::LinearMatrix&) { out.noalias() = projection_matrix(m, x, w) * x; },
                 [&](const model::AffineScalar& a) { out[0] = a.alpha(w) * x[0] + a.beta(w); },
                 [&](const model::Face& f) {
                   const Eigen::VectorXd full = step(*f.parent, embed_face(x, f.support, dimension(*f.parent)), w);
                   for (std::size_t j = 0; j < f.support.size(); ++j)
                     out[static_cast<Eigen::Index>(j)] = full[static_cast<Eigen::Index>(f.support[j])];
                 },
                 [&](const model::Lottery& l) {
                   const double denom = lottery_denominator(l, x, w);
                   for (Eigen::Index j = 0; j < x.size(); ++j)
                     out[j] = x[j] == 0.0 ? 0.0
                                          : (1.0 - l.d) * x[j] +
                                                l.d * x[j] * l.fecundity[static_cast<std::size_t>(j)](w) / denom;
                 },
                 [&](const model::RpsLottery& r) {
                   const Eigen::Vector3d b = rps_rates(rps_draw(r, w), x);
                   const double denom = x.dot(b);
                   for (Eigen::Index j = 0; j < 3; ++j)
                     out[j] = x[j] == 0.0 ? 0.0 : (1.0 - r.d) * x[j] + r.d * x[j] * b[j] / denom;
                 },
                 [&](const auto&) {
                   for (Eigen::Index j = 0; j < x.size(); ++j) {
                     if (x[j] < 0.0) throw ConfigError("orthant state has a negative coordinate");
                     out[j] = x[j] == 0.0 ? 0.0 : x[j] * percapita_growth(m, x, w, static_cast<std::size_t>(j));
                   }
                 },
             },
             m.v);
  check_finite(out, x, m);
  if (state_space(m) == StateSpace::Simplex) renormalize(out);
  return out;
}

Eigen::VectorXd embed_face(const Eigen::Ref<const Eigen::VectorXd>& face_state, const std::vector<std::size_t>& support,
                           Eigen::Index full_dim) {
  if (static_cast<std::size_t>(face_state.size()) != support.size())
    throw ConfigError("face state dimension does not match support size");
  Eigen::VectorXd full = Eigen::VectorXd::Zero(full_dim);
  for (std::size_t j = 0; j < support.size(); ++j) {
    check_index(support[j], full_dim);
    full[static_cast<Eigen::Index>(support[j])] = face_state[static_cast<Eigen::Index>(j)];
  }
  return full;
}

ModelSpec restrict_to_face(const ModelSpec& m, const std::vector<std::size_t>& support) {
  if (support.empty()) throw ConfigError("restrict_to_face: support must be non-empty");
  if (!is_multiplicative(m)) throw ConfigError("restrict_to_face: faces are defined for multiplicative models only");
  const Eigen::Index k = dimension(m);
  std::vector<std::size_t> sorted = support;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("restrict_to_face: duplicate species in support");
  for (std::size_t i : sorted) check_index(i, k);
  if (static_cast<Eigen::Index>(sorted.size()) == k) return m;

  if (const auto* r = m.as<model::RickerCompetition>()) return model::Ricker{r->r[sorted[0]], Coef::constant(1.0)};
  if (const auto* l = m.as<model::Lottery>()) {
    model::Lottery face{l->d, {}};
    for (std::size_t i : sorted) face.fecundity.push_back(l->fecundity[i]);
    return face;
  }
  if (const auto* f = m.as<model::Face>()) {
    std::vector<std::size_t> mapped;
    for (std::size_t i : sorted) mapped.push_back(f->support[i]);
    return restrict_to_face(*f->parent, mapped);
  }
  return model::Face{std::make_shared<const ModelSpec>(m), sorted};
}

Eigen::MatrixXd projection_matrix(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const Eigen::Ref<const Eigen::VectorXd>& w) {
  if (const auto* b = m.as<model::Biennial>()) {
    const double total = x.sum();
    const double s1 = 1.0 / (1.0 + b->b1 * total);
    const double s2 = b->a / (1.0 + b->b2 * total);
    Eigen::MatrixXd a(2, 2);
    a << 0.0, b->p * b->xi(w) * s1,  //
        s2, (1.0 - b->p) * s2;
    return a;
  }
  if (const auto* l = m.as<model::LinearMatrix>()) {
    Eigen::MatrixXd a(l->k, l->k);
    for (Eigen::Index r = 0; r < l->k; ++r)
      for (Eigen::Index c = 0; c < l->k; ++c) a(r, c) = l->entries[static_cast<std::size_t>(r * l->k + c)](w);
    if ((a.array() < 0.0).any()) throw ConfigError("linear_matrix: drawn matrix has a negative entry");
    return a;
  }
  throw ConfigError(model_name(m) + " is not a structured model");
}

Eigen::MatrixXd linearization_at_zero(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& w) {
  return projection_matrix(m, Eigen::VectorXd::Zero(dimension(m)), w);
}

double distance_to_extinction(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x) {
  switch (extinction_set(m)) {
    case ExtinctionSet::Origin:
      return x.cwiseAbs().maxCoeff();
    case ExtinctionSet::CoordinateUnion:
      return x.minCoeff();
    case ExtinctionSet::None:
      break;
  }
  return std::numeric_limits<double>::infinity();
}

std::vector<CatalogEntry> catalog() {
  std::vector<CatalogEntry> out{
      {"affine_scalar", "alpha, beta", "alpha: coef, beta: coef", "orthant(1), no extinction set"},
      {"beverton_holt", "lambda, a, s in [0,1)", "lambda: coef, a: coef", "orthant(1), S0={0}"},
      {"biennial", "p in [0,1], a in (0,1), b1 > 0, b2 > 0, xi", "xi: coef (seed yield)", "orthant(2), S0={0}"},
      {"hassell", "lambda, b", "lambda: coef, b: coef", "orthant(1), S0={0}"},
      {"linear_matrix", "entries k x k", "entries: coef per entry", "orthant(k), S0={0}"},
      {"lottery", "d in (0,1], fecundity[k]", "fecundity: coef per species", "simplex(k), S0=union{x_i=0}"},
      {"ricker", "r, a", "r: coef, a: coef", "orthant(1), S0={0}"},
      {"ricker_competition", "r[2], alpha[2] > 0", "r: coef per species", "orthant(2), S0=union{x_i=0}"},
      {"rps_lottery", "d in (0,1], alpha > beta > gamma > 0", "alpha, beta, gamma: coef",
       "simplex(3), S0=union{x_i=0}"},
  };
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

}  // namespace stochpersist
