#ifndef USENS_ATLAS_HPP
#define USENS_ATLAS_HPP

// Truncated versions of the four counterexamples. Each level is a finite,
// fully recalibrated model; the diagnostics show how the quantity that is
// infinite (or discontinuous) in the limit behaves along the truncation.

#include <Eigen/Dense>

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "usens/bump.hpp"
#include "usens/constrained_utility.hpp"
#include "usens/market_tree.hpp"
#include "usens/primal_dual.hpp"
#include "usens/residuals.hpp"
#include "usens/sensitivity.hpp"
#include "usens/utility.hpp"

namespace usens {

/// Atlas models carry tail masses far below the default probability floor.
/// No R-weighted projection is run on the tails, so the floor is lowered.
inline ValidationOptions atlas_validation() {
  ValidationOptions o;
  o.prob_floor = 1e-300;
  return o;
}

/// One-period, one-asset model with S_0 = 1.
inline MarketTree one_period_model(const std::vector<double>& support, const std::vector<double>& prob) {
  TreeSpec spec;
  spec.assets = {"S"};
  spec.nodes.push_back({"root", std::nullopt, 0, 1.0, {1.0}});
  for (std::size_t i = 0; i < support.size(); ++i)
    spec.nodes.push_back({"s" + std::to_string(i), std::string("root"), 1, prob[i], {support[i]}});
  return MarketTree::build(spec, atlas_validation());
}

// ---------------------------------------------------------------------------
// Example 1: dual side, V'' = phi with phi(k) = 2^k.

/// V with V'' = psi + spikes, psi(t) = 2^(1-t) (ln2 t^-1/2 + t^-3/2 / 2), whose
/// tail integral is 2^(1-t) t^-1/2. Spikes of width 4^-k lift phi(k) to 2^k.
class Example1Profile {
 public:
  explicit Example1Profile(int kmax) {
    for (int k = 1; k <= kmax; ++k) {
      const double target = std::ldexp(1.0, k);
      spikes_.push_back({static_cast<double>(k), std::ldexp(1.0, -2 * k), target - psi(k)});
    }
  }
  static double psi(double t) {
    return std::pow(2.0, 1.0 - t) * (std::numbers::ln2 / std::sqrt(t) + 0.5 / (t * std::sqrt(t)));
  }
  static double psi_tail(double t) { return std::pow(2.0, 1.0 - t) / std::sqrt(t); }

  double V2(double y) const {
    double v = psi(y);
    for (const auto& s : spikes_) v -= s.d2(y);
    return v;
  }
  /// -integral_y^inf phi
  double V1(double y) const {
    double v = -psi_tail(y);
    for (const auto& s : spikes_) v -= s.d1(y);
    return v;
  }
  double V(double y) const {
    double v = -2.0 * std::sqrt(std::numbers::pi / std::numbers::ln2) * std::erf(std::sqrt(y * std::numbers::ln2));
    for (const auto& s : spikes_) v -= s.d0(y);
    return v;
  }
  const std::vector<bump::Spike>& spikes() const { return spikes_; }

 private:
  std::vector<bump::Spike> spikes_;
};

struct Example1Level {
  int N = 0;
  std::vector<double> support, prob;
  double mass_half = 0.0, mass_one = 0.0;
  double div1 = 0.0;          ///< E[V''(xi) xi^2]
  double tail_k2 = 0.0;       ///< sum_{k=5}^N k^2
  double anchor_residual = 0.0;  ///< max |V''(k) / 2^k - 1| on the tail support
  double max_tolerance = 0.0;    ///< max y V''(y) / |V'(y)| on the scan grid (relative risk tolerance)
  double min_c2_ratio = 0.0;     ///< min y V''(y) / |V'(y)|; > 1/c2 certifies the upper risk-aversion bound
  bool model_ok = false;
  std::shared_ptr<const Example1Profile> profile;
};

inline Example1Level example1(int N) {
  if (N < 6) throw PreconditionError("example1: need N >= 6");
  Example1Level L;
  L.N = N;
  double s0 = 0.0, s1 = 0.0;
  for (int k = 5; k <= N; ++k) {
    s0 += std::ldexp(1.0, -k);
    s1 += k * std::ldexp(1.0, -k);
    L.tail_k2 += static_cast<double>(k) * k;
  }
  // mass(1/2) + mass(1) = 1 - s0 and mass(1/2)/2 + mass(1) = 1 - s1
  L.mass_half = 2.0 * (s1 - s0);
  L.mass_one = 1.0 - s0 - L.mass_half;
  if (!(L.mass_half > 0.0) || !(L.mass_one > 0.0)) throw ModelError("example1: infeasible calibration");
  L.support = {0.5, 1.0};
  L.prob = {L.mass_half, L.mass_one};
  for (int k = 5; k <= N; ++k) {
    L.support.push_back(k);
    L.prob.push_back(std::ldexp(1.0, -k));
  }
  auto prof = std::make_shared<Example1Profile>(N);
  L.profile = prof;
  for (std::size_t i = 0; i < L.support.size(); ++i) {
    const double xi = L.support[i];
    L.div1 += L.prob[i] * prof->V2(xi) * xi * xi;
  }
  for (int k = 5; k <= N; ++k)
    L.anchor_residual = std::max(L.anchor_residual, std::abs(prof->V2(k) / std::ldexp(1.0, k) - 1.0));

  std::vector<double> grid = log_grid(1e-3, N + 1.0, 400);
  for (const auto& s : prof->spikes())
    for (int j = -16; j <= 16; ++j) grid.push_back(s.center + s.width * j / 16.0);
  L.max_tolerance = 0.0;
  L.min_c2_ratio = std::numeric_limits<double>::infinity();
  for (double y : grid) {
    const double B = y * prof->V2(y) / std::abs(prof->V1(y));
    L.max_tolerance = std::max(L.max_tolerance, B);
    L.min_c2_ratio = std::min(L.min_c2_ratio, B);
  }

  // complete market whose martingale density is xi: Arrow-type assets
  // S^j_1 = 1 + 1{omega = j} / p_j priced at 1 + xi_j (scaled by 1/p_j so
  // that tail states stay visible next to the unit part of the price)
  TreeSpec spec;
  const std::size_t n = L.support.size();
  std::vector<double> root_prices;
  for (std::size_t j = 0; j + 1 < n; ++j) {
    spec.assets.push_back("A" + std::to_string(j));
    root_prices.push_back(1.0 + L.support[j]);
  }
  spec.nodes.push_back({"root", std::nullopt, 0, 1.0, root_prices});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> px(n - 1, 1.0);
    if (i + 1 < n) px[i] = 1.0 + 1.0 / L.prob[i];
    spec.nodes.push_back({"w" + std::to_string(i), std::string("root"), 1, L.prob[i], px});
  }
  const auto model = MarketTree::build(spec, atlas_validation());
  auto mm = find_martingale_measure(model);
  if (auto* q = std::get_if<Measure>(&mm)) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err = std::max(err, std::abs(q->leaf_prob[i] - L.prob[i] * L.support[i]));
    L.model_ok = err <= 1e-12 && q->equivalent();
  }
  return L;
}

// ---------------------------------------------------------------------------
// Example 2: primal side, -U''(k) = 2^k.

struct Example2Level {
  int N = 0;
  std::vector<double> support, prob;
  double p_half = 0.0, p_one = 0.0;
  std::vector<double> a_grid;
  std::vector<double> div2;  ///< E[U''(S)(1 + a(S - 1))^2] per a
  double div2_at_1 = 0.0;
  double buy_hold_residual = 0.0;  ///< first-order residual of X(1) = S
  double solver_a = std::nan("");  ///< holding found by solve_primal (reported)
  std::string solver_status;
  double numeraire_max_inv = 0.0;  ///< max 1/S
  double numeraire_ratio_err = 0.0;  ///< max |S/X - 1|
  double max_rra = 0.0;
  double min_rra = 0.0;
  bool model_ok = false;
  std::shared_ptr<ConstrainedUtility> utility;
};

inline ConstrainedUtility example2_utility(int N) {
  ConstraintSet cs;
  cs.name = "example2(N=" + std::to_string(N) + ")";
  cs.baseline_gamma = 2.0;
  for (int k = 2; k <= N; ++k) cs.spikes.push_back({static_cast<double>(k), -std::ldexp(1.0, k), std::ldexp(1.0, -2 * k)});
  cs.corridor = Corridor{1.0, 3.0};  // what the baseline satisfies; the spikes break the upper bound
  return build_constrained_utility(cs);
}

inline Example2Level example2(int N, std::vector<double> a_grid = {0.0, 0.5, 1.0, 1.5, 2.0}) {
  if (N < 4) throw PreconditionError("example2: need N >= 4");
  Example2Level L;
  L.N = N;
  L.utility = std::make_shared<ConstrainedUtility>(example2_utility(N));
  const UtilitySpec& u = L.utility->spec;

  // E[U'(S)(S - 1)] = 0 is linear in the mass at 1/2 (the atom at 1 drops out)
  double tail = 0.0, pull = 0.0;
  for (int k = 2; k <= N; ++k) {
    tail += std::ldexp(1.0, -k);
    pull += std::ldexp(1.0, -k) * u.U1(k) * (k - 1.0);
  }
  L.p_half = 2.0 * pull / u.U1(0.5);
  L.p_one = 1.0 - tail - L.p_half;
  if (!(L.p_half > 0.0) || !(L.p_one > 0.0)) throw ModelError("example2: calibration infeasible at N = " + std::to_string(N));
  L.support = {0.5, 1.0};
  L.prob = {L.p_half, L.p_one};
  for (int k = 2; k <= N; ++k) {
    L.support.push_back(k);
    L.prob.push_back(std::ldexp(1.0, -k));
  }
  const auto model = one_period_model(L.support, L.prob);
  L.model_ok = validate_tree(model).ok() && std::holds_alternative<Measure>(find_martingale_measure(model));

  PredictableStrategy bh = zero_strategy(model);
  bh.holdings(0, 0) = 1.0;
  const auto sol = evaluate_strategy(model, u, 1.0, bh);
  L.buy_hold_residual = sol.first_order_residual;
  const auto nm = numeraire_change(model, sol.X);
  for (int n = 0; n < nm.num_nodes(); ++n) {
    L.numeraire_max_inv = std::max(L.numeraire_max_inv, nm.price_matrix()(n, 0));
    L.numeraire_ratio_err = std::max(L.numeraire_ratio_err, std::abs(nm.price_matrix()(n, 1) - 1.0));
  }

  try {
    const auto s = solve_primal(model, u, 1.0);
    L.solver_a = s.strategy.holdings(0, 0);
    L.solver_status = "converged";
  } catch (const ConvergenceError& e) {
    L.solver_status = std::string("no convergence: ") + e.what();
  }

  L.a_grid = a_grid;
  for (double a : a_grid) {
    double f = 0.0;
    for (std::size_t i = 0; i < L.support.size(); ++i) {
      const double w = 1.0 + a * (L.support[i] - 1.0);
      f += L.prob[i] * u.U2(L.support[i]) * w * w;
    }
    L.div2.push_back(f);
    if (a == 1.0) L.div2_at_1 = f;
  }
  if (std::find(a_grid.begin(), a_grid.end(), 1.0) == a_grid.end()) {
    for (std::size_t i = 0; i < L.support.size(); ++i)
      L.div2_at_1 += L.prob[i] * u.U2(L.support[i]) * L.support[i] * L.support[i];
  }
  L.max_rra = L.utility->scan.max_rra;
  L.min_rra = L.utility->scan.min_rra;
  return L;
}

// ---------------------------------------------------------------------------
// Example 3: the gain subspace under X(1) is not closed in the limit.

struct Example3Level {
  int N = 0;
  std::vector<double> support, prob;
  double p_two = 0.0, p_one = 0.0;
  double theta = 0.0;
  double moment_residual = 0.0;
  double anchor_residual = 0.0;
  double f_half = 0.0, f_one = 0.0, gap = 0.0;
  double fprime_half = 0.0;  ///< f'(1/2), zero by the moment condition
  double u1 = 0.0;           ///< u'(1) = E[X U'(X)] at the buy-and-hold optimum
  double base_residual = 0.0;
  std::vector<double> eps;
  std::vector<double> q_plus, q_minus;
  std::vector<bool> minus_interior;
  double window_lo = 0.0, window_hi = 0.0;
  bool corridor_ok = false;
  bool model_ok = false;
  std::shared_ptr<ConstrainedUtility> utility;
};

struct Example3Options {
  double window_hi = 1e-2;
  /// The admissibility box of the truncated model forces the left quotient
  /// up by about 4 gap 2^-N / eps, so the ladder stops at
  /// eps >= defect_factor 2^-N (and never below 2^(5-N)).
  double defect_factor = 100.0;
  int max_points = 12;
};

inline Example3Level example3(int N, const Example3Options& opt = {}) {
  if (N < 4) throw PreconditionError("example3: need N >= 4");
  Example3Level L;
  L.N = N;
  double t0 = 0.0, t1 = 0.0;
  for (int k = 1; k <= N; ++k) {
    t0 += std::pow(8.0, -k);
    t1 += std::pow(4.0, -k);
  }
  // p2 + p1 = 1 - t0 and p2/2 + p1 = 1 - t1 (E[1/S] = 1)
  L.p_two = 2.0 * (t1 - t0);
  L.p_one = 1.0 - t0 - L.p_two;
  if (!(L.p_two > 0.0) || !(L.p_one > 0.0)) throw ModelError("example3: calibration infeasible");
  L.support = {2.0, 1.0};
  L.prob = {L.p_two, L.p_one};
  for (int k = 1; k <= N; ++k) {
    L.support.push_back(std::ldexp(1.0, -k));
    L.prob.push_back(std::pow(8.0, -k));
  }

  ConstraintSet cs;
  cs.name = "example3(N=" + std::to_string(N) + ")";
  for (double s : L.support) cs.anchors.push_back({s, 1.0 / s});
  MomentCondition mc;
  for (std::size_t i = 0; i < L.support.size(); ++i) {
    mc.points.push_back(L.support[i]);
    mc.weights.push_back(L.prob[i] * (1.0 - L.support[i] * L.support[i]));
  }
  cs.moment = mc;
  cs.domain = Domain{1e-30, 1e6};
  L.utility = std::make_shared<ConstrainedUtility>(build_constrained_utility(cs));
  const UtilitySpec& u = L.utility->spec;
  L.theta = L.utility->theta;
  L.moment_residual = L.utility->moment_residual;
  L.anchor_residual = L.utility->max_anchor_residual;
  L.corridor_ok = L.utility->corridor_ok();

  auto f = [&](double a) {
    double s = 0.0;
    for (std::size_t i = 0; i < L.support.size(); ++i) {
      const double w = 1.0 + a * (L.support[i] - 1.0);
      s += L.prob[i] * u.U2(L.support[i]) * w * w;
    }
    return s;
  };
  L.f_half = f(0.5);
  L.f_one = f(1.0);
  L.gap = L.f_half - L.f_one;
  double fp = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < L.support.size(); ++i) {
    const double S = L.support[i];
    const double term = L.prob[i] * u.U2(S) * (1.0 + 0.5 * (S - 1.0)) * (S - 1.0);
    fp += 2.0 * term;
    scale += 2.0 * std::abs(term);
  }
  L.fprime_half = std::abs(fp) / scale;

  const auto model = one_period_model(L.support, L.prob);
  L.model_ok = validate_tree(model).ok() && std::holds_alternative<Measure>(find_martingale_measure(model));
  SolverOptions so;
  so.gradient_tol = 1e-13;
  PrimalSolver solver(model, u, so);
  const auto base = solver.solve(1.0);
  L.u1 = base.u1;
  L.base_residual = std::abs(base.strategy.holdings(0, 0) - 1.0);

  L.window_hi = opt.window_hi;
  L.window_lo = std::max(std::ldexp(1.0, 5 - N), opt.defect_factor * std::ldexp(1.0, -N));
  for (double e = opt.window_hi; e >= L.window_lo && static_cast<int>(L.eps.size()) < opt.max_points; e *= 0.5) {
    Eigen::VectorXd wp = base.coords * (1.0 + e), wm = base.coords * (1.0 - e);
    const auto sp = solver.solve(1.0 + e, &wp);
    const auto sm = solver.solve(1.0 - e, &wm);
    L.eps.push_back(e);
    L.q_plus.push_back((sp.u - base.u - e * base.u1) / (0.5 * e * e));
    L.q_minus.push_back((sm.u - base.u + e * base.u1) / (0.5 * e * e));
    L.minus_interior.push_back(sm.interior);
  }
  return L;
}

// ---------------------------------------------------------------------------
// Example 4: exact model whose derivative wealth is negative with positive
// probability.

struct Example4Result {
  std::vector<double> support{0.125, 0.25, 0.5, 2.0};
  std::vector<double> prob;
  double theta = 0.0;
  double moment_residual = 0.0;
  std::vector<double> Xp, expected;
  double max_error = 0.0;
  double prob_negative = 0.0, prob_zero = 0.0;
  double alpha_consistency = 0.0;  ///< max |1 + alpha_hat - (x / X_T) X'_T(closed form)|
  double buy_hold_error = 0.0;
  PrimalDualSolution solution;
  SensitivityReport sensitivity;
  ResidualTable residuals;
  std::shared_ptr<ConstrainedUtility> utility;
};

/// Maximum-entropy law on `support` subject to E[1/S] = 1.
inline std::vector<double> max_entropy_law(const std::vector<double>& support) {
  auto law = [&](double lam) {
    std::vector<double> p(support.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(lam / support[i]));
    for (auto& v : p) v /= z;
    return p;
  };
  auto g = [&](double lam) {
    const auto p = law(lam);
    double m = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) m += p[i] / support[i];
    return m - 1.0;
  };
  std::uintmax_t iters = 200;
  auto tol = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(a)); };
  auto r = boost::math::tools::toms748_solve(g, -50.0, 50.0, tol, iters);
  const double lam = std::abs(g(r.first)) <= std::abs(g(r.second)) ? r.first : r.second;
  return law(lam);
}

inline Example4Result example4() {
  Example4Result E;
  E.prob = max_entropy_law(E.support);
  ConstraintSet cs;
  cs.name = "example4";
  for (double s : E.support) cs.anchors.push_back({s, 1.0 / s});
  MomentCondition mc;
  for (std::size_t i = 0; i < E.support.size(); ++i) {
    const double S = E.support[i];
    mc.points.push_back(S);
    mc.weights.push_back(E.prob[i] * (1.0 + 4.0 / 3.0 * (S - 1.0)) * (S - 1.0));
  }
  cs.moment = mc;
  E.utility = std::make_shared<ConstrainedUtility>(build_constrained_utility(cs));
  const UtilitySpec& u = E.utility->spec;
  E.theta = E.utility->theta;
  E.moment_residual = E.utility->moment_residual;

  const auto model = one_period_model(E.support, E.prob);
  SolverOptions so;
  so.gradient_tol = 1e-13;
  E.solution = solve_primal(model, u, 1.0, so);
  E.buy_hold_error = std::abs(E.solution.strategy.holdings(0, 0) - 1.0);
  E.sensitivity = sensitivity(model, u, E.solution);
  const OutcomeVector XpT = terminal_values(model, E.sensitivity.Xp);
  const OutcomeVector XT = E.solution.XT(model);
  for (std::size_t i = 0; i < E.support.size(); ++i) {
    const double S = E.support[i];
    const double ex = 1.0 + 4.0 / 3.0 * (S - 1.0);
    E.expected.push_back(ex);
    E.Xp.push_back(XpT[static_cast<Eigen::Index>(i)]);
    E.max_error = std::max(E.max_error, std::abs(XpT[static_cast<Eigen::Index>(i)] - ex));
    if (XpT[static_cast<Eigen::Index>(i)] < -1e-9) E.prob_negative += E.prob[i];
    if (std::abs(XpT[static_cast<Eigen::Index>(i)]) <= 1e-9) E.prob_zero += E.prob[i];
    E.alpha_consistency = std::max(
        E.alpha_consistency,
        std::abs(1.0 + E.sensitivity.alpha_hat[static_cast<Eigen::Index>(i)] - ex / XT[static_cast<Eigen::Index>(i)]));
  }
  auto& t = E.residuals;
  t.add("example4.moment", std::abs(E.moment_residual), 1e-12);
  t.add("example4.buy_and_hold", E.buy_hold_error, 1e-9);
  t.add("example4.Xp_table", E.max_error, 1e-9);
  t.add("example4.alpha_consistency", E.alpha_consistency, 1e-9);
  t.add_flag("example4.prob_negative", E.prob_negative, E.prob_negative > 0.0);
  t.add_flag("example4.prob_zero", E.prob_zero, std::abs(E.prob_zero - E.prob[1]) <= 1e-15 && E.prob_zero > 0.0);
  t.append(E.sensitivity.residuals);
  t.append(martingale_audit(model, E.solution, E.sensitivity));
  return E;
}

// ---------------------------------------------------------------------------

struct TruncationLadder {
  std::string name;
  std::vector<int> N_values;
  std::vector<double> values;  ///< diagnostic per level
};

struct DivergenceReport {
  std::vector<int> N_values;
  std::vector<double> values;
  std::vector<double> ratios;  ///< values[i] / values[i-1]
  double exponent = 0.0;       ///< least-squares slope of log|value| on log N
  bool strictly_increasing = true;
  bool strictly_decreasing = true;
  bool accelerating = true;  ///< successive |differences| grow
};

inline DivergenceReport divergence_report(const TruncationLadder& ladder) {
  const std::size_t n = ladder.N_values.size();
  if (n < 3 || ladder.values.size() != n) throw PreconditionError("divergence_report: need at least three levels");
  DivergenceReport r;
  r.N_values = ladder.N_values;
  r.values = ladder.values;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(static_cast<double>(ladder.N_values[i]));
    const double ly = std::log(std::abs(ladder.values[i]));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    if (i > 0) {
      r.ratios.push_back(ladder.values[i] / ladder.values[i - 1]);
      if (!(ladder.values[i] > ladder.values[i - 1])) r.strictly_increasing = false;
      if (!(ladder.values[i] < ladder.values[i - 1])) r.strictly_decreasing = false;
      if (i > 1 && !(std::abs(ladder.values[i] - ladder.values[i - 1]) >
                     std::abs(ladder.values[i - 1] - ladder.values[i - 2])))
        r.accelerating = false;
    }
  }
  const double dn = static_cast<double>(n);
  r.exponent = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
  return r;
}

}  // namespace usens

#endif  // USENS_ATLAS_HPP
