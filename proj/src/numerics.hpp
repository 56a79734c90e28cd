#pragma once

#include <cmath>
#include <limits>

#include "iontrap/errors.hpp"

namespace iontrap::detail {

// Brent's method on a bracketing interval [a, b]. Tolerances follow the
// usual convention: stop when the interval is below 2*rtol*|x| + xtol/2.
template <class F>
double brent_root(F &&f, double a, double b, double xtol, double rtol,
                  int maxiter = 300) {
  double fa = f(a), fb = f(b);
  if (fa == 0)
    return a;
  if (fb == 0)
    return b;
  if ((fa > 0) == (fb > 0))
    throw NumericalError("brent_root: endpoints do not bracket a root");
  double c = a, fc = fa;
  double d = b - a, e = d;
  for (int iter = 0; iter < maxiter; ++iter) {
    if ((fb > 0) == (fc > 0)) {
      c = a;
      fc = fa;
      d = b - a;
      e = d;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol = 2.0 * rtol * std::abs(b) + 0.5 * xtol;
    const double m = 0.5 * (c - b);
    if (std::abs(m) <= tol || fb == 0)
      return b;
    if (std::abs(e) < tol || std::abs(fa) <= std::abs(fb)) {
      d = m;
      e = m;
    } else {
      double p, q;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc, r = fb / fc;
        p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0)
        q = -q;
      else
        p = -p;
      if (2.0 * p < std::min(3.0 * m * q - std::abs(tol * q),
                             std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = m;
      }
    }
    a = b;
    fa = fb;
    if (std::abs(d) > tol)
      b += d;
    else
      b += (m > 0 ? tol : -tol);
    fb = f(b);
  }
  return b;
}

} // namespace iontrap::detail
