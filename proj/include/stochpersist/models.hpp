#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "stochpersist/env.hpp"

namespace stochpersist {

/// A model parameter that is either a fixed number or a coordinate of the
/// environment vector drawn each step.
struct Coef {
  std::optional<std::size_t> coord;
  double value = 0.0;

  static Coef constant(double v) { return Coef{std::nullopt, v}; }
  static Coef env(std::size_t i) { return Coef{i, 0.0}; }

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& omega) const {
    return coord ? omega[static_cast<Eigen::Index>(*coord)] : value;
  }
};

enum class StateSpace { Orthant, Simplex };

/// Extinction set S_0. Origin: {0}. CoordinateUnion: {x : some x_i = 0}.
/// None: the model has no invariant extinction set (affine toy model).
enum class ExtinctionSet { Origin, CoordinateUnion, None };

struct ModelSpec;

namespace model {

/// f(x) = lambda / (1 + x)^b
struct Hassell {
  Coef lambda;
  Coef b;
};

/// X' = X exp(r - a X)
struct Ricker {
  Coef r;
  Coef a;
};

/// X' = lambda X / (1 + a X) + s X
struct BevertonHolt {
  Coef lambda;
  Coef a;
  double s = 0.0;
};

/// X^i' = X^i exp(xi^i - X^i - alpha_j X^j), j != i. alpha[j] scales the
/// competitive effect of species j on the other species.
struct RickerCompetition {
  std::array<Coef, 2> r;
  std::array<double, 2> alpha{};
};

/// Chesson-Warner lottery on the simplex.
struct Lottery {
  double d = 0.5;
  std::vector<Coef> fecundity;
};

/// Rock-paper-scissors lottery; per-capita reproduction b_i(x) = sum_j M_ij x_j with
/// M = [[beta, alpha, gamma], [gamma, beta, alpha], [alpha, gamma, beta]].
struct RpsLottery {
  double d = 0.5;
  Coef alpha;
  Coef beta;
  Coef gamma;
};

/// Density-dependent delayed-flowering biennial:
/// A(x) = [[0, p xi s1(x)], [s2(x), (1-p) s2(x)]], s1 = 1/(1+b1 |x|), s2 = a/(1+b2 |x|).
struct Biennial {
  double p = 0.5;
  double a = 0.5;
  double b1 = 1.0;
  double b2 = 1.0;
  Coef xi;
};

/// X' = A(omega) X with entry-wise coefficients (row-major, k*k).
struct LinearMatrix {
  Eigen::Index k = 1;
  std::vector<Coef> entries;
};

/// X' = alpha X + beta. Used for drift-condition checks; no extinction set.
struct AffineScalar {
  Coef alpha;
  Coef beta;
};

/// Dynamics of `parent` restricted to the coordinates in `support`; the
/// other coordinates are pinned to zero.
struct Face {
  std::shared_ptr<const ModelSpec> parent;
  std::vector<std::size_t> support;
};

}  // namespace model

struct ModelSpec {
  using Variant = std::variant<model::Hassell, model::Ricker, model::BevertonHolt, model::RickerCompetition,
                               model::Lottery, model::RpsLottery, model::Biennial, model::LinearMatrix,
                               model::AffineScalar, model::Face>;
  Variant v;

  template <class T>
  ModelSpec(T m) : v(std::move(m)) {}  // NOLINT(google-explicit-constructor)

  template <class T>
  const T* as() const {
    return std::get_if<T>(&v);
  }
};

/// Floor below which a coordinate counts as numerically extinct (e^-700).
inline const double kLogExtinctionFloor = -700.0;
inline const double kExtinctionFloor = std::exp(-700.0);

std::string model_name(const ModelSpec& m);
Eigen::Index dimension(const ModelSpec& m);
StateSpace state_space(const ModelSpec& m);
ExtinctionSet extinction_set(const ModelSpec& m);

/// Models with X^i' = f_i(X, omega) X^i.
bool is_multiplicative(const ModelSpec& m);
/// One-dimensional multiplicative models: Hassell, Ricker, Beverton-Holt.
bool is_scalar(const ModelSpec& m);
/// X' = A(X, omega) X with a linearization at the origin.
bool is_structured(const ModelSpec& m);

/// Smallest environment dimension the wiring needs.
std::size_t required_env_dim(const ModelSpec& m);
/// Parameter ranges and env wiring; throws ConfigError.
void validate(const ModelSpec& m, const EnvSpec& env);

/// One step of X_{t+1} = F(X_t, xi_{t+1}). Zero coordinates of multiplicative
/// models stay exactly zero; simplex states are renormalized.
Eigen::VectorXd step(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& omega);

/// log f_i(x, omega), computed directly in log form where the model allows.
double log_percapita_growth(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                            const Eigen::Ref<const Eigen::VectorXd>& omega, std::size_t species);

double percapita_growth(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                        const Eigen::Ref<const Eigen::VectorXd>& omega, std::size_t species);

/// Model on the face spanned by `support` (0-based). Uses a catalog variant
/// when one exists (Ricker competition -> Ricker, lottery -> smaller lottery).
ModelSpec restrict_to_face(const ModelSpec& m, const std::vector<std::size_t>& support);

/// Inserts face coordinates into a full-dimension vector with zeros elsewhere.
Eigen::VectorXd embed_face(const Eigen::Ref<const Eigen::VectorXd>& face_state,
                           const std::vector<std::size_t>& support, Eigen::Index full_dim);

/// A(x, omega) for structured models.
Eigen::MatrixXd projection_matrix(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const Eigen::Ref<const Eigen::VectorXd>& omega);

/// A(0, omega).
Eigen::MatrixXd linearization_at_zero(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& omega);

/// d(x, S_0): min coordinate for CoordinateUnion, max coordinate for Origin,
/// +inf when the model has no extinction set.
double distance_to_extinction(const ModelSpec& m, const Eigen::Ref<const Eigen::VectorXd>& x);

struct CatalogEntry {
  std::string name;
  std::string parameters;
  std::string env_wiring;
  std::string state_space;
};

/// Sorted by name.
std::vector<CatalogEntry> catalog();

}  // namespace stochpersist
