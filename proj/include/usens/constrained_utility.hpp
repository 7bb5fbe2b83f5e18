#ifndef USENS_CONSTRAINED_UTILITY_HPP
#define USENS_CONSTRAINED_UTILITY_HPP

// Utilities built from constraints rather than a closed form:
//
//  * anchors U'(x_i) = m_i, interpolated by a piecewise constant relative risk
//    aversion baseline (U' is a power between consecutive anchors);
//  * curvature targets U''(c) = -s_c realized by one-sided spikes of a given
//    width (they add curvature and raise U' to their left);
//  * at most one linear moment condition sum_i w_i U''(p_i) = target, met by
//    zero-integral hats at the p_i whose common relative amplitude theta is
//    found by bracketed root-finding. Hats integrate to zero on each side of
//    their center, so anchored values of U' are untouched.
//
// U', U'' and U are assembled in closed form from the bump antiderivatives;
// adaptive quadrature of U'' and U' is used as an independent check.

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "usens/bump.hpp"
#include "usens/quadrature.hpp"
#include "usens/utility.hpp"

namespace usens {

struct Anchor {
  double x = 1.0;
  double u1 = 1.0;  ///< prescribed U'(x)
};

struct CurvatureTarget {
  double x = 1.0;
  double u2 = -1.0;  ///< prescribed U''(x), negative
  double width = 0.1;
};

struct MomentCondition {
  std::vector<double> points;
  std::vector<double> weights;
  double target = 0.0;
};

struct ConstraintSet {
  std::string name = "constrained";
  std::vector<Anchor> anchors;
  double baseline_gamma = 1.0;  ///< used when fewer than two anchors are given
  std::vector<CurvatureTarget> spikes;
  std::optional<MomentCondition> moment;
  /// When absent, the corridor is read off the scan as (0.9 min A, 1.1 max A).
  std::optional<Corridor> corridor;
  std::optional<Domain> domain;
};

namespace detail {

inline double pow_integral(double x, double gamma) {
  // integral_1^x t^-gamma dt, continuous through gamma = 1
  const double e = 1.0 - gamma;
  if (e == 0.0) return std::log(x);
  return std::expm1(e * std::log(x)) / e;
}

class CurvatureProfile {
 public:
  CurvatureProfile(const std::vector<Anchor>& anchors, double baseline_gamma) {
    auto a = anchors;
    std::sort(a.begin(), a.end(), [](const Anchor& l, const Anchor& r) { return l.x < r.x; });
    if (a.empty()) a.push_back({1.0, 1.0});
    for (const auto& an : a)
      if (!(an.x > 0.0) || !(an.u1 > 0.0)) throw UtilityError("anchors need positive x and U'");
    for (std::size_t i = 0; i < a.size(); ++i) {
      knots_.push_back(a[i].x);
      if (i + 1 < a.size()) {
        if (!(a[i + 1].x > a[i].x)) throw UtilityError("anchors must have distinct x");
        if (!(a[i + 1].u1 < a[i].u1)) throw UtilityError("anchored U' values are not strictly decreasing");
        gammas_.push_back(std::log(a[i].u1 / a[i + 1].u1) / std::log(a[i + 1].x / a[i].x));
      }
    }
    if (gammas_.empty()) gammas_.push_back(baseline_gamma);
    // segment i covers [knots_[i], knots_[i+1]); U' = K_i x^-gamma_i there
    const std::size_t ns = gammas_.size();
    coef_.resize(ns);
    offset_.resize(ns);
    for (std::size_t i = 0; i < ns; ++i) coef_[i] = a[i].u1 * std::pow(a[i].x, gammas_[i]);
    offset_[0] = 0.0;
    for (std::size_t i = 1; i < ns; ++i) {
      const double xi = knots_[i];
      const double left = offset_[i - 1] + coef_[i - 1] * pow_integral(xi, gammas_[i - 1]);
      offset_[i] = left - coef_[i] * pow_integral(xi, gammas_[i]);
    }
  }

  double base_u(double x) const {
    const auto i = segment(x);
    return offset_[i] + coef_[i] * pow_integral(x, gammas_[i]);
  }
  double base_u1(double x) const {
    const auto i = segment(x);
    return coef_[i] * std::pow(x, -gammas_[i]);
  }
  double base_u2(double x) const {
    const auto i = segment(x);
    return -gammas_[i] * coef_[i] * std::pow(x, -gammas_[i] - 1.0);
  }

  double u(double x) const {
    double v = base_u(x);
    for (const auto& s : spikes_) v += s.d0(x);
    for (const auto& h : hats_) v += h.d0(x);
    return v;
  }
  double u1(double x) const {
    double v = base_u1(x);
    for (const auto& s : spikes_) v += s.d1(x);
    for (const auto& h : hats_) v += h.d1(x);
    return v;
  }
  double u2(double x) const {
    double v = base_u2(x);
    for (const auto& s : spikes_) v += s.d2(x);
    for (const auto& h : hats_) v += h.d2(x);
    return v;
  }

  std::vector<bump::Spike> spikes_;
  std::vector<bump::Hat> hats_;

 private:
  std::size_t segment(double x) const {
    // first and last segments extend to 0 and infinity
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    std::size_t k = static_cast<std::size_t>(it - knots_.begin());
    if (k == 0) return 0;
    return std::min(k - 1, gammas_.size() - 1);
  }

  std::vector<double> knots_;
  std::vector<double> gammas_;
  std::vector<double> coef_;
  std::vector<double> offset_;
};

}  // namespace detail

struct ConstrainedUtility {
  UtilitySpec spec;
  double theta = 0.0;  ///< relative hat amplitude solving the moment condition
  double moment_residual = 0.0;
  double max_anchor_residual = 0.0;  ///< max relative |U'(x_i) - m_i|
  CorridorScan scan;
  std::vector<double> scan_grid;
  bool corridor_ok() const { return scan.ok(); }
};

/// Dense grid for corridor scans: log-spaced over the feature range plus
/// points across every spike and hat support.
inline std::vector<double> feature_grid(const detail::CurvatureProfile& prof, double lo, double hi, int n = 400) {
  auto g = log_grid(lo, hi, n);
  auto add_local = [&](double c, double w) {
    for (int k = -16; k <= 16; ++k) {
      const double x = c + w * k / 16.0;
      if (x > 0.0) g.push_back(x);
    }
  };
  for (const auto& s : prof.spikes_) add_local(s.center, s.width);
  for (const auto& h : prof.hats_) {
    add_local(h.center, h.narrow);
    add_local(h.center, h.broad);
  }
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

inline ConstrainedUtility build_constrained_utility(const ConstraintSet& cs) {
  auto prof = std::make_shared<detail::CurvatureProfile>(cs.anchors, cs.baseline_gamma);

  std::vector<double> features;
  for (const auto& a : cs.anchors) features.push_back(a.x);
  for (const auto& s : cs.spikes) {
    if (!(s.x > 0.0) || !(s.width > 0.0)) throw UtilityError("curvature targets need positive location and width");
    const double base = prof->u2(s.x);
    const double height = base - s.u2;  // extra curvature needed at s.x
    if (!(height >= 0.0))
      throw UtilityError("curvature target at " + detail::fmt_num(s.x) + " is flatter than the baseline");
    prof->spikes_.push_back({s.x, s.width, height});
    features.push_back(s.x);
  }
  if (cs.moment) {
    for (double p : cs.moment->points) features.push_back(p);
  }
  std::sort(features.begin(), features.end());
  features.erase(std::unique(features.begin(), features.end()), features.end());

  double theta = 0.0;
  double moment_residual = 0.0;
  if (cs.moment) {
    const auto& mc = *cs.moment;
    if (mc.points.size() != mc.weights.size()) throw UtilityError("moment points/weights length mismatch");
    std::vector<double> base_u2(mc.points.size());
    std::vector<bump::Hat> hats;  // amplitudes at theta = 1
    for (std::size_t i = 0; i < mc.points.size(); ++i) {
      const double p = mc.points[i];
      base_u2[i] = prof->u2(p);
      if (mc.weights[i] == 0.0) continue;
      double gap = p;
      for (double f : features)
        if (f != p) gap = std::min(gap, std::abs(f - p));
      for (const auto& s : prof->spikes_)
        if (s.center != p) gap = std::min(gap, std::abs(s.center - p) - s.width);
      if (!(gap > 0.0)) throw UtilityError("moment point " + detail::fmt_num(p) + " collides with another feature");
      bump::Hat h;
      h.center = p;
      // half the gap keeps neighbouring hats disjoint; narrow = broad / 2
      // minimizes the third derivative for a given center shift
      h.broad = 0.5 * gap;
      h.narrow = 0.5 * h.broad;
      // theta = 1 moves U''(p) by |U''(p)| in the direction that raises the moment
      const double shift = (mc.weights[i] > 0.0 ? 1.0 : -1.0) * std::abs(base_u2[i]);
      h.amplitude = shift / (1.0 - h.narrow / h.broad);
      hats.push_back(h);
    }
    auto moment_at = [&](double th) {
      prof->hats_ = hats;
      for (auto& h : prof->hats_) h.amplitude *= th;
      double m = -mc.target;
      for (std::size_t i = 0; i < mc.points.size(); ++i) m += mc.weights[i] * prof->u2(mc.points[i]);
      return m;
    };
    const double lo = -0.95, hi = 0.95;
    const double flo = moment_at(lo), fhi = moment_at(hi);
    if (flo * fhi > 0.0) {
      throw UtilityError("moment condition root not bracketed for relative amplitude in [-0.95, 0.95] (values " +
                         detail::fmt_num(flo) + ", " + detail::fmt_num(fhi) + ")");
    }
    std::uintmax_t iters = 200;
    auto tol = [](double a, double b) { return std::abs(a - b) <= 4e-16 * std::max(1.0, std::abs(a)); };
    auto root = boost::math::tools::toms748_solve(moment_at, lo, hi, flo, fhi, tol, iters);
    theta = std::abs(moment_at(root.first)) <= std::abs(moment_at(root.second)) ? root.first : root.second;
    moment_residual = moment_at(theta);
  }

  double max_anchor = 0.0;
  for (const auto& a : cs.anchors)
    max_anchor = std::max(max_anchor, std::abs(prof->u1(a.x) - a.u1) / a.u1);

  const double fmin = features.empty() ? 1.0 : std::min(features.front(), 1.0);
  const double fmax = features.empty() ? 1.0 : std::max(features.back(), 1.0);
  Domain dom = cs.domain.value_or(Domain{fmin * 1e-12, fmax * 1e12});

  std::shared_ptr<const detail::CurvatureProfile> cp = prof;
  auto make = [&](Corridor c) {
    return UtilitySpec(
        cs.name, [cp](double x) { return cp->u(x); }, [cp](double x) { return cp->u1(x); },
        [cp](double x) { return cp->u2(x); }, c, dom);
  };
  const auto grid = feature_grid(*prof, std::max(dom.lo, fmin / 8.0), std::min(dom.hi, fmax * 8.0));
  Corridor corridor;
  if (cs.corridor) {
    corridor = *cs.corridor;
  } else {
    const auto probe = corridor_scan(make(Corridor{1e-300, std::numeric_limits<double>::infinity()}), grid);
    corridor = Corridor{0.9 * probe.min_rra, 1.1 * probe.max_rra};
  }

  ConstrainedUtility out{make(corridor), theta, moment_residual, max_anchor, {}, grid};
  out.scan = corridor_scan(out.spec, out.scan_grid);
  return out;
}

}  // namespace usens

#endif  // USENS_CONSTRAINED_UTILITY_HPP
