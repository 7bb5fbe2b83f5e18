#ifndef USENS_UTILITY_HPP
#define USENS_UTILITY_HPP

#include <Eigen/Dense>

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usens/errors.hpp"
#include "usens/market_tree.hpp"

namespace usens {

/// Declared bounds 0 < c1 < A(x) < c2 on relative risk aversion.
struct Corridor {
  double c1 = 0.0;
  double c2 = std::numeric_limits<double>::infinity();
  bool contains(double a) const { return c1 < a && a < c2; }
};

/// Range of capitals on which the evaluators are trusted.
struct Domain {
  double lo = std::numeric_limits<double>::min();
  double hi = std::numeric_limits<double>::max();
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// A utility on (0, inf) given by evaluators for U, U', U''. Immutable.
class UtilitySpec {
 public:
  using Fn = std::function<double(double)>;

  UtilitySpec(std::string name, Fn u, Fn u1, Fn u2, Corridor corridor, Domain domain = {})
      : name_(std::move(name)),
        u_(std::move(u)),
        u1_(std::move(u1)),
        u2_(std::move(u2)),
        corridor_(corridor),
        domain_(domain) {
    if (!(corridor_.c1 > 0.0 && corridor_.c1 < corridor_.c2))
      throw UtilityError("corridor must satisfy 0 < c1 < c2");
  }

  const std::string& name() const { return name_; }
  const Corridor& corridor() const { return corridor_; }
  const Domain& domain() const { return domain_; }
  bool in_domain(double x) const { return domain_.contains(x); }

  double U(double x) const { return u_(checked(x)); }
  double U1(double x) const { return u1_(checked(x)); }
  double U2(double x) const { return u2_(checked(x)); }

  /// Relative risk aversion -x U''(x) / U'(x).
  double A(double x) const { return -x * U2(x) / U1(x); }

 private:
  double checked(double x) const {
    if (!domain_.contains(x))
      throw UtilityError(name_ + ": capital " + detail::fmt_num(x) + " outside trusted domain [" +
                         detail::fmt_num(domain_.lo) + ", " + detail::fmt_num(domain_.hi) + "]");
    return x;
  }

  std::string name_;
  Fn u_, u1_, u2_;
  Corridor corridor_;
  Domain domain_;
};

// ---------------------------------------------------------------------------
// families

/// x^(1-g)/(1-g), or log x for g == 1. Default corridor (0.9 g, 1.1 g).
inline UtilitySpec power_utility(double gamma, std::optional<Corridor> corridor = std::nullopt) {
  if (!(gamma > 0.0)) throw UtilityError("power utility needs gamma > 0");
  Corridor c = corridor.value_or(Corridor{0.9 * gamma, 1.1 * gamma});
  if (gamma == 1.0) {
    return UtilitySpec(
        "log", [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; },
        [](double x) { return -1.0 / (x * x); }, c);
  }
  return UtilitySpec(
      "power(" + detail::fmt_num(gamma) + ")",
      [gamma](double x) { return std::pow(x, 1.0 - gamma) / (1.0 - gamma); },
      [gamma](double x) { return std::pow(x, -gamma); },
      [gamma](double x) { return -gamma * std::pow(x, -gamma - 1.0); }, c);
}

inline UtilitySpec log_utility(std::optional<Corridor> corridor = std::nullopt) {
  return power_utility(1.0, corridor);
}

struct BlendComponent {
  double weight = 1.0;
  double gamma = 1.0;
};

/// Positive combination of power utilities. Its risk aversion lies strictly
/// between the smallest and largest component gamma.
inline UtilitySpec blend_utility(std::vector<BlendComponent> parts, std::optional<Corridor> corridor = std::nullopt) {
  if (parts.empty()) throw UtilityError("blend utility needs at least one component");
  double gmin = parts.front().gamma, gmax = parts.front().gamma;
  std::string name = "blend(";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (!(p.weight > 0.0) || !(p.gamma > 0.0)) throw UtilityError("blend components need positive weight and gamma");
    gmin = std::min(gmin, p.gamma);
    gmax = std::max(gmax, p.gamma);
    name += (i ? "," : "") + detail::fmt_num(p.weight) + "*" + detail::fmt_num(p.gamma);
  }
  name += ")";
  auto shared = std::make_shared<const std::vector<BlendComponent>>(std::move(parts));
  auto u = [shared](double x) {
    double s = 0.0;
    for (const auto& p : *shared)
      s += p.weight * (p.gamma == 1.0 ? std::log(x) : std::pow(x, 1.0 - p.gamma) / (1.0 - p.gamma));
    return s;
  };
  auto u1 = [shared](double x) {
    double s = 0.0;
    for (const auto& p : *shared) s += p.weight * std::pow(x, -p.gamma);
    return s;
  };
  auto u2 = [shared](double x) {
    double s = 0.0;
    for (const auto& p : *shared) s -= p.weight * p.gamma * std::pow(x, -p.gamma - 1.0);
    return s;
  };
  return UtilitySpec(name, u, u1, u2, corridor.value_or(Corridor{0.9 * gmin, 1.1 * gmax}));
}

inline std::vector<double> log_grid(double lo, double hi, int n) {
  if (n < 1 || !(lo > 0.0) || !(hi >= lo)) throw PreconditionError("log_grid: need n >= 1 and 0 < lo <= hi");
  std::vector<double> g(static_cast<std::size_t>(n));
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (n - 1));
  return g;
}

// ---------------------------------------------------------------------------
// operations

inline double rra(const UtilitySpec& u, double x) {
  if (!(x > 0.0)) throw PreconditionError("rra: x must be positive");
  return u.A(x);
}

/// V(y) = sup_x {U(x) - x y} and its derivatives at y, with the maximizer.
struct ConjugatePoint {
  double y = 0.0;
  double V = 0.0, V1 = 0.0, V2 = 0.0;
  double x_star = 0.0;
  /// Relative risk tolerance -y V''(y) / V'(y).
  double B() const { return -y * V2 / V1; }
};

/// Inverts U' by safeguarded Newton/bisection in log-capital.
inline ConjugatePoint conjugate(const UtilitySpec& u, double y) {
  if (!(y > 0.0)) throw PreconditionError("conjugate: y must be positive");
  const double zlo_dom = std::log(u.domain().lo), zhi_dom = std::log(u.domain().hi);
  const double ly = std::log(y);
  auto f = [&](double z) { return std::log(u.U1(std::exp(z))) - ly; };
  // bracket: f is strictly decreasing in z
  double z0 = std::clamp(0.0, zlo_dom, zhi_dom);
  double lo = z0, hi = z0;
  double step = 1.0;
  if (f(z0) > 0.0) {
    while (f(hi) > 0.0) {
      lo = hi;
      if (hi >= zhi_dom) throw UtilityError("conjugate: y = " + detail::fmt_num(y) + " below U' on the trusted domain");
      hi = std::min(hi + step, zhi_dom);
      step *= 2.0;
    }
  } else {
    while (f(lo) < 0.0) {
      hi = lo;
      if (lo <= zlo_dom) throw UtilityError("conjugate: y = " + detail::fmt_num(y) + " above U' on the trusted domain");
      lo = std::max(lo - step, zlo_dom);
      step *= 2.0;
    }
  }
  auto fd = [&](double z) {
    const double x = std::exp(z);
    return std::make_pair(f(z), -u.A(x));
  };
  std::uintmax_t iters = 200;
  const double z = lo == hi ? lo
                            : boost::math::tools::newton_raphson_iterate(
                                  fd, 0.5 * (lo + hi), lo, hi, std::numeric_limits<double>::digits - 4, iters);
  ConjugatePoint cp;
  cp.y = y;
  cp.x_star = std::exp(z);
  cp.V = u.U(cp.x_star) - cp.x_star * y;
  cp.V1 = -cp.x_star;
  cp.V2 = -1.0 / u.U2(cp.x_star);
  return cp;
}

struct CorridorScan {
  double min_rra = std::numeric_limits<double>::infinity();
  double max_rra = -std::numeric_limits<double>::infinity();
  double argmin = 0.0, argmax = 0.0;
  std::vector<std::pair<double, double>> violations;  ///< (x, A(x)) outside (c1, c2)
  bool ok() const { return violations.empty(); }
};

inline CorridorScan corridor_scan(const UtilitySpec& u, const std::vector<double>& grid) {
  if (grid.empty()) throw PreconditionError("corridor_scan: empty grid");
  CorridorScan s;
  for (double x : grid) {
    const double a = u.A(x);
    if (a < s.min_rra) {
      s.min_rra = a;
      s.argmin = x;
    }
    if (a > s.max_rra) {
      s.max_rra = a;
      s.argmax = x;
    }
    if (!u.corridor().contains(a) || !(u.U1(x) > 0.0) || !(u.U2(x) < 0.0)) s.violations.emplace_back(x, a);
  }
  return s;
}

/// Two-sided bounds b1 U'(x) < U'(a x) < b2 U'(x) with
/// b1 = 1 - c2 ln a and b2 = 1 / (1 + c1 ln a).
struct MarginalRatioReport {
  double a = 0.0, b1 = 0.0, b2 = 0.0;
  double min_lower_slack = std::numeric_limits<double>::infinity();  ///< min of ratio - b1
  double min_upper_slack = std::numeric_limits<double>::infinity();  ///< min of b2 - ratio
  std::vector<double> failures;
  bool ok() const { return failures.empty(); }
};

inline MarginalRatioReport marginal_ratio_check(const UtilitySpec& u, double a, const std::vector<double>& grid) {
  const auto& c = u.corridor();
  if (!(a > 1.0)) throw PreconditionError("marginal_ratio_check: a must exceed 1");
  if (!(1.0 - c.c2 * std::log(a) > 0.0))
    throw PreconditionError("marginal_ratio_check: 1 - c2 ln a must be positive");
  MarginalRatioReport r;
  r.a = a;
  r.b1 = 1.0 - c.c2 * std::log(a);
  r.b2 = 1.0 / (1.0 + c.c1 * std::log(a));
  for (double x : grid) {
    const double ratio = u.U1(a * x) / u.U1(x);
    r.min_lower_slack = std::min(r.min_lower_slack, ratio - r.b1);
    r.min_upper_slack = std::min(r.min_upper_slack, r.b2 - ratio);
    if (!(r.b1 < ratio && ratio < r.b2)) r.failures.push_back(x);
  }
  return r;
}

struct ElasticityProbe {
  bool trivially_satisfied = false;  ///< U <= 0 on the whole probe grid
  std::vector<std::pair<double, double>> ratios;  ///< (x, x U'(x) / U(x)) where U(x) > 0
  bool flagged = false;  ///< some ratio on the largest decade exceeds 1 - 1e-6
};

inline ElasticityProbe elasticity_probe(const UtilitySpec& u, const std::vector<double>& grid) {
  ElasticityProbe p;
  if (grid.empty()) return p;
  const double top = *std::max_element(grid.begin(), grid.end());
  for (double x : grid) {
    const double ux = u.U(x);
    if (ux > 0.0) {
      const double r = x * u.U1(x) / ux;
      p.ratios.emplace_back(x, r);
      if (x >= top / 10.0 && r > 1.0 - 1e-6) p.flagged = true;
    }
  }
  p.trivially_satisfied = p.ratios.empty();
  return p;
}

/// w(s) = E[U(zeta + s eta)] with the analytic w', w'' and central
/// differences of w with step h.
struct ExpansionSample {
  double s = 0.0;
  double w = 0.0, w1 = 0.0, w2 = 0.0;
  double fd1 = 0.0, fd2 = 0.0;
};

struct ExpansionProbe {
  double K = 0.0;  ///< max |eta| / zeta
  double h = 0.0;
  std::vector<ExpansionSample> samples;
};

inline ExpansionProbe expansion_probe(const UtilitySpec& u, const OutcomeVector& zeta, const OutcomeVector& eta,
                                      const Measure& P, const std::vector<double>& s_grid, double h = 1e-4) {
  if (zeta.size() != eta.size() || zeta.size() != P.leaf_prob.size())
    throw PreconditionError("expansion_probe: size mismatch");
  if (!(zeta.minCoeff() > 0.0)) throw PreconditionError("expansion_probe: zeta must be strictly positive");
  ExpansionProbe out;
  out.K = (eta.array().abs() / zeta.array()).maxCoeff();
  out.h = h;
  auto w_at = [&](double s, int order) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < zeta.size(); ++i) {
      const double v = zeta[i] + s * eta[i];
      const double t = order == 0 ? u.U(v) : order == 1 ? u.U1(v) * eta[i] : u.U2(v) * eta[i] * eta[i];
      acc += P.leaf_prob[i] * t;
    }
    return acc;
  };
  for (double s : s_grid) {
    if (out.K > 0.0 && !(std::abs(s) + h < 1.0 / out.K))
      throw PreconditionError("expansion_probe: s = " + detail::fmt_num(s) + " outside (-1/K, 1/K)");
    ExpansionSample e;
    e.s = s;
    e.w = w_at(s, 0);
    e.w1 = w_at(s, 1);
    e.w2 = w_at(s, 2);
    const double wp = w_at(s + h, 0), wm = w_at(s - h, 0);
    e.fd1 = (wp - wm) / (2.0 * h);
    e.fd2 = (wp - 2.0 * e.w + wm) / (h * h);
    out.samples.push_back(e);
  }
  return out;
}

}  // namespace usens

#endif  // USENS_UTILITY_HPP
