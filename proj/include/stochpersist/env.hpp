#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace stochpersist {

/// Counter-based random stream (Philox4x32-10). The key is the 64-bit seed,
/// the upper half of the 128-bit counter holds the replicate id and the lower
/// half the block index, so two replicates can never share a block.
///
/// Satisfies UniformRandomBitGenerator, but the samplers below do not rely on
/// std:: distributions, whose algorithms are implementation-defined.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t seed, std::uint64_t replicate_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  /// Uniform on the open interval (0, 1), 53 bits of resolution.
  double uniform_open();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t replicate_id() const { return replicate_; }
  /// Number of 64-bit words consumed so far.
  std::uint64_t position() const { return block_ * 2 + (cached_ ? 1 : 0); }

  /// Raw Philox4x32-10 block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                             std::array<std::uint32_t, 2> key);

 private:
  std::uint64_t seed_;
  std::uint64_t replicate_;
  std::uint64_t block_ = 0;
  std::uint64_t spare_ = 0;
  bool cached_ = false;
};

Stream make_stream(std::uint64_t seed, std::uint64_t replicate_id);

/// Standard normal quantile (Wichura AS241, PPND16), relative accuracy ~1e-16.
double normal_quantile(double p);

double draw_standard_normal(Stream& stream);

/// Marsaglia-Tsang, with the U^(1/k) boost for shape < 1.
double draw_gamma(Stream& stream, double shape, double scale);

namespace dist {
struct Constant {
  double value;
};
struct Normal {
  double mean;
  double sd;
};
struct LogNormal {
  double log_mean;
  double log_sd;
};
struct Gamma {
  double shape;
  double scale;
};
struct Uniform {
  double lo;
  double hi;
};
struct Discrete {
  std::vector<double> values;
  std::vector<double> probs;
};
}  // namespace dist

using ScalarDist =
    std::variant<dist::Constant, dist::Normal, dist::LogNormal, dist::Gamma, dist::Uniform, dist::Discrete>;

/// Throws ConfigError if the parameters break the distribution's invariants.
void validate(const ScalarDist& d);
double draw(const ScalarDist& d, Stream& stream);
double mean(const ScalarDist& d);
double variance(const ScalarDist& d);
bool is_degenerate(const ScalarDist& d);
std::string name(const ScalarDist& d);

/// Law of the i.i.d. environment; coordinates are mutually independent.
struct EnvSpec {
  std::vector<ScalarDist> coords;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(coords.size()); }
  /// Index of the appended coordinate.
  std::size_t add(ScalarDist d) {
    coords.push_back(std::move(d));
    return coords.size() - 1;
  }
  bool deterministic() const;
};

void validate(const EnvSpec& spec);

/// One draw of the environment vector; advances the stream.
Eigen::VectorXd sample(const EnvSpec& spec, Stream& stream);
void sample_into(const EnvSpec& spec, Stream& stream, Eigen::Ref<Eigen::VectorXd> out);

}  // namespace stochpersist
