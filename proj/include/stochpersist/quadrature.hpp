#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "stochpersist/errors.hpp"

namespace stochpersist {

template <class Scalar>
struct QuadratureResult {
  Scalar value{};
  Scalar error{};
  long evaluations = 0;
};

namespace detail {

template <class Scalar, class F>
struct SimpsonState {
  F& f;
  Scalar abs_tol;
  int max_depth;
  long evaluations = 0;
  Scalar error{};
  bool exhausted = false;
  Scalar worst_a{}, worst_b{};

  Scalar eval(Scalar x) {
    ++evaluations;
    return f(x);
  }

  Scalar recurse(Scalar a, Scalar b, Scalar fa, Scalar fm, Scalar fb, Scalar whole, Scalar tol, int depth) {
    const Scalar m = (a + b) / 2, h = b - a;
    const Scalar lm = (a + m) / 2, rm = (m + b) / 2;
    const Scalar flm = eval(lm), frm = eval(rm);
    const Scalar left = h / 12 * (fa + 4 * flm + fm);
    const Scalar right = h / 12 * (fm + 4 * frm + fb);
    const Scalar delta = left + right - whole;
    if (std::fabs(delta) <= 15 * tol || depth >= max_depth || h < Scalar(64) * std::numeric_limits<Scalar>::epsilon() * std::fabs(m)) {
      if (std::fabs(delta) > 15 * tol) {
        exhausted = true;
        worst_a = a;
        worst_b = b;
      }
      error += std::fabs(delta) / 15;
      return left + right + delta / 15;  // Richardson extrapolation
    }
    return recurse(a, m, fa, flm, fm, left, tol / 2, depth + 1) + recurse(m, b, fm, frm, fb, right, tol / 2, depth + 1);
  }
};

}  // namespace detail

/// Adaptive Simpson quadrature with a Richardson-corrected estimate. The
/// interval is first cut into `panels` equal pieces so that narrow features
/// are not missed by the initial five-point sample. Throws NumericError when
/// the refinement limit is reached before the tolerance is met.
template <class Scalar, class F>
QuadratureResult<Scalar> adaptive_simpson(F&& f, Scalar a, Scalar b, Scalar rel_tol, int panels = 16,
                                          int max_depth = 48) {
  QuadratureResult<Scalar> out;
  if (!(b > a)) return out;
  // Rough magnitude pass to turn the relative tolerance into an absolute one.
  Scalar rough = 0;
  const int n = 64 * panels;
  const Scalar h = (b - a) / n;
  for (int i = 0; i <= n; ++i) {
    const Scalar w = (i == 0 || i == n) ? Scalar(1) : (i % 2 ? Scalar(4) : Scalar(2));
    rough += w * f(a + h * i);
  }
  rough = std::fabs(rough * h / 3);
  const Scalar abs_tol = rel_tol * (rough > 0 ? rough : Scalar(1));

  detail::SimpsonState<Scalar, F> state{f, abs_tol, max_depth};
  state.evaluations = n + 1;
  const Scalar width = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const Scalar lo = a + width * p;
    const Scalar hi = p + 1 == panels ? b : lo + width;
    const Scalar fa = state.eval(lo), fm = state.eval((lo + hi) / 2), fb = state.eval(hi);
    const Scalar whole = (hi - lo) / 6 * (fa + 4 * fm + fb);
    out.value += state.recurse(lo, hi, fa, fm, fb, whole, abs_tol / panels, 0);
  }
  out.error = state.error;
  out.evaluations = state.evaluations;
  if (state.exhausted || !std::isfinite(out.value)) {
    std::ostringstream os;
    os << "adaptive_simpson: no convergence to rel_tol=" << rel_tol << " on [" << a << ", " << b
       << "]; worst subinterval [" << state.worst_a << ", " << state.worst_b << "], estimate " << out.value
       << " +/- " << out.error << " after " << out.evaluations << " evaluations";
    throw NumericError(os.str());
  }
  return out;
}

}  // namespace stochpersist
