#ifndef USENS_QUADRATURE_HPP
#define USENS_QUADRATURE_HPP

#include <cmath>
#include <functional>

#include "usens/errors.hpp"

namespace usens {

namespace detail {

template <class F>
double simpson_step(const F& f, double a, double b, double fa, double fm, double fb, double whole, double tol,
                    int depth, int& evals) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  evals += 2;
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals);
}

}  // namespace detail

/// Adaptive composite Simpson with per-interval error control. The interval
/// is first cut into `pieces` panels so that localized features narrower than
/// the whole range are not skipped by the initial 3-point estimate.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double abs_tol, int pieces = 64, int max_depth = 48) {
  if (!(b >= a)) throw PreconditionError("adaptive_simpson: need a <= b");
  if (a == b) return 0.0;
  double total = 0.0;
  int evals = 0;
  const double h = (b - a) / pieces;
  for (int k = 0; k < pieces; ++k) {
    const double lo = a + k * h, hi = (k + 1 == pieces) ? b : a + (k + 1) * h;
    const double flo = f(lo), fmid = f(0.5 * (lo + hi)), fhi = f(hi);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += detail::simpson_step(f, lo, hi, flo, fmid, fhi, whole, abs_tol / pieces, max_depth, evals);
  }
  return total;
}

}  // namespace usens

#endif  // USENS_QUADRATURE_HPP
