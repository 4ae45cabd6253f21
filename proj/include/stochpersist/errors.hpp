#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace stochpersist {

/// Invalid model/environment/config wiring. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite arithmetic, failed quadrature and similar. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, Eigen::VectorXd state = {}, long step = -1)
      : std::runtime_error(what), state_(std::move(state)), step_(step) {}

  const Eigen::VectorXd& state() const { return state_; }
  long step() const { return step_; }

 private:
  Eigen::VectorXd state_;
  long step_;
};

/// Raised when the residents of a boundary face do not persist, so an
/// invasion rate against that face has no well-defined resident measure.
class FaceDegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace stochpersist
