#include "stochpersist/env.hpp"

#include <cmath>
#include <numeric>

#include "stochpersist/errors.hpp"

namespace stochpersist {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

template <std::size_t N>
double horner(const double (&c)[N], double x) {
  double acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = acc * x + c[i];
  return acc;
}

}  // namespace

std::array<std::uint32_t, 4> Stream::philox(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

Stream::Stream(std::uint64_t seed, std::uint64_t replicate_id) : seed_(seed), replicate_(replicate_id) {}

Stream::result_type Stream::operator()() {
  if (cached_) {
    cached_ = false;
    return spare_;
  }
  const std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                                         static_cast<std::uint32_t>(replicate_),
                                         static_cast<std::uint32_t>(replicate_ >> 32)};
  const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
  const auto out = philox(ctr, key);
  ++block_;
  spare_ = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
  cached_ = true;
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

double Stream::uniform_open() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

Stream make_stream(std::uint64_t seed, std::uint64_t replicate_id) { return Stream(seed, replicate_id); }

double normal_quantile(double p) {
  static constexpr double a[] = {3.3871328727963666080e0, 1.3314166789178437745e+2, 1.9715909503065514427e+3,
                                 1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
                                 3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static constexpr double b[] = {1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
                                 5.3941960214247511077e+3, 2.1213794301586595867e+4, 3.9307895800092710610e+4,
                                 2.8729085735721942674e+4, 5.2264952788528545610e+3};
  static constexpr double c[] = {1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                                 3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                                 2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[] = {1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
                                 6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
                                 5.47593808499534494600e-4, 1.05075007164441684324e-9};
  static constexpr double e[] = {6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                                 2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                                 2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[] = {1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
                                 1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
                                 1.42151175831644588870e-7, 2.04426310338993978564e-15};

  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -HUGE_VAL;
    if (p == 1.0) return HUGE_VAL;
    throw NumericError("normal_quantile: probability outside [0,1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(a, r) / horner(b, r);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = horner(c, r) / horner(d, r);
  } else {
    r -= 5.0;
    val = horner(e, r) / horner(f, r);
  }
  return q < 0.0 ? -val : val;
}

double draw_standard_normal(Stream& stream) { return normal_quantile(stream.uniform_open()); }

double draw_gamma(Stream& stream, double shape, double scale) {
  if (shape < 1.0) {
    const double g = draw_gamma(stream, shape + 1.0, 1.0);
    return scale * g * std::pow(stream.uniform_open(), 1.0 / shape);
  }
  const double dd = shape - 1.0 / 3.0;
  const double cc = 1.0 / std::sqrt(9.0 * dd);
  for (;;) {
    const double x = draw_standard_normal(stream);
    double v = 1.0 + cc * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = stream.uniform_open();
    if (std::log(u) < 0.5 * x * x + dd - dd * v + dd * std::log(v)) return scale * dd * v;
  }
}

void validate(const ScalarDist& d) {
  std::visit(
      [](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, dist::Constant>) {
          if (!std::isfinite(x.value)) throw ConfigError("constant: value must be finite");
        } else if constexpr (std::is_same_v<T, dist::Normal>) {
          if (!std::isfinite(x.mean) || !(x.sd > 0.0) || !std::isfinite(x.sd))
            throw ConfigError("normal: sd must be strictly positive");
        } else if constexpr (std::is_same_v<T, dist::LogNormal>) {
          if (!std::isfinite(x.log_mean) || !(x.log_sd > 0.0) || !std::isfinite(x.log_sd))
            throw ConfigError("lognormal: log_sd must be strictly positive");
        } else if constexpr (std::is_same_v<T, dist::Gamma>) {
          if (!(x.shape > 0.0) || !(x.scale > 0.0) || !std::isfinite(x.shape) || !std::isfinite(x.scale))
            throw ConfigError("gamma: shape and scale must be strictly positive");
        } else if constexpr (std::is_same_v<T, dist::Uniform>) {
          if (!std::isfinite(x.lo) || !std::isfinite(x.hi) || !(x.lo < x.hi))
            throw ConfigError("uniform: requires lo < hi");
        } else {
          if (x.values.empty() || x.values.size() != x.probs.size())
            throw ConfigError("discrete: values and probs must be non-empty and of equal length");
          double total = 0.0;
          for (double p : x.probs) {
            if (!(p >= 0.0)) throw ConfigError("discrete: probabilities must be non-negative");
            total += p;
          }
          if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("discrete: probabilities must sum to 1");
          for (double v : x.values)
            if (!std::isfinite(v)) throw ConfigError("discrete: values must be finite");
        }
      },
      d);
}

double draw(const ScalarDist& d, Stream& stream) {
  return std::visit(
      [&stream](const auto& x) -> double {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, dist::Constant>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, dist::Normal>) {
          return x.mean + x.sd * draw_standard_normal(stream);
        } else if constexpr (std::is_same_v<T, dist::LogNormal>) {
          return std::exp(x.log_mean + x.log_sd * draw_standard_normal(stream));
        } else if constexpr (std::is_same_v<T, dist::Gamma>) {
          return draw_gamma(stream, x.shape, x.scale);
        } else if constexpr (std::is_same_v<T, dist::Uniform>) {
          return x.lo + (x.hi - x.lo) * stream.uniform_open();
        } else {
          const double u = stream.uniform_open();
          double acc = 0.0;
          for (std::size_t i = 0; i + 1 < x.probs.size(); ++i) {
            acc += x.probs[i];
            if (u < acc) return x.values[i];
          }
          return x.values.back();
        }
      },
      d);
}

double mean(const ScalarDist& d) {
  return std::visit(
      [](const auto& x) -> double {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, dist::Constant>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, dist::Normal>) {
          return x.mean;
        } else if constexpr (std::is_same_v<T, dist::LogNormal>) {
          return std::exp(x.log_mean + 0.5 * x.log_sd * x.log_sd);
        } else if constexpr (std::is_same_v<T, dist::Gamma>) {
          return x.shape * x.scale;
        } else if constexpr (std::is_same_v<T, dist::Uniform>) {
          return 0.5 * (x.lo + x.hi);
        } else {
          return std::inner_product(x.values.begin(), x.values.end(), x.probs.begin(), 0.0);
        }
      },
      d);
}

double variance(const ScalarDist& d) {
  return std::visit(
      [](const auto& x) -> double {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, dist::Constant>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, dist::Normal>) {
          return x.sd * x.sd;
        } else if constexpr (std::is_same_v<T, dist::LogNormal>) {
          const double s2 = x.log_sd * x.log_sd;
          return std::expm1(s2) * std::exp(2.0 * x.log_mean + s2);
        } else if constexpr (std::is_same_v<T, dist::Gamma>) {
          return x.shape * x.scale * x.scale;
        } else if constexpr (std::is_same_v<T, dist::Uniform>) {
          return (x.hi - x.lo) * (x.hi - x.lo) / 12.0;
        } else {
          double m = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < x.values.size(); ++i) {
            m += x.probs[i] * x.values[i];
            m2 += x.probs[i] * x.values[i] * x.values[i];
          }
          return m2 - m * m;
        }
      },
      d);
}

bool is_degenerate(const ScalarDist& d) {
  if (std::holds_alternative<dist::Constant>(d)) return true;
  if (const auto* disc = std::get_if<dist::Discrete>(&d)) {
    int support = 0;
    for (double p : disc->probs) support += p > 0.0;
    return support <= 1;
  }
  return false;
}

std::string name(const ScalarDist& d) {
  static constexpr const char* names[] = {"constant", "normal", "lognormal", "gamma", "uniform", "discrete"};
  return names[d.index()];
}

bool EnvSpec::deterministic() const {
  for (const auto& c : coords)
    if (!is_degenerate(c)) return false;
  return true;
}

void validate(const EnvSpec& spec) {
  for (const auto& c : spec.coords) validate(c);
}

void sample_into(const EnvSpec& spec, Stream& stream, Eigen::Ref<Eigen::VectorXd> out) {
  for (Eigen::Index i = 0; i < spec.dim(); ++i) out[i] = draw(spec.coords[static_cast<std::size_t>(i)], stream);
}

Eigen::VectorXd sample(const EnvSpec& spec, Stream& stream) {
  Eigen::VectorXd out(spec.dim());
  sample_into(spec, stream, out);
  return out;
}

}  // namespace stochpersist
