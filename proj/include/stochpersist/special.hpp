#pragma once

#include <cmath>
#include <concepts>

#include "stochpersist/errors.hpp"

namespace stochpersist {

/// Digamma psi(x) for x > 0: recurrence up to x >= 10, then the asymptotic
/// series through the B_12 term (truncation error below 1e-15).
template <std::floating_point T>
T digamma(T x) {
  if (!(x > T(0)) || !std::isfinite(x)) throw ConfigError("digamma: argument must be positive and finite");
  T shift = 0;
  while (x < T(10)) {
    shift -= T(1) / x;
    x += T(1);
  }
  const T inv = T(1) / x;
  const T inv2 = inv * inv;
  // B2/2, B4/4, ... B12/12
  const T series =
      inv2 * (T(1) / 12 - inv2 * (T(1) / 120 - inv2 * (T(1) / 252 - inv2 * (T(1) / 240 - inv2 * (T(1) / 132 -
                                                                                                 inv2 * T(691) / 32760)))));
  return shift + std::log(x) - T(0.5) * inv - series;
}

}  // namespace stochpersist
