#ifndef USENS_PRIMAL_DUAL_HPP
#define USENS_PRIMAL_DUAL_HPP

// Expected-utility maximization over predictable strategies on a tree, and
// the dual side obtained from it: at an interior optimum Y_T = U'(X_T) is the
// terminal value of the dual optimizer and X(x)Y(y) is a martingale.

#include <Eigen/Dense>

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "usens/market_tree.hpp"
#include "usens/residuals.hpp"
#include "usens/utility.hpp"

namespace usens {

struct SolverOptions {
  double gradient_tol = 1e-11;  ///< stop when |grad| <= gradient_tol * (1 + |u|)
  int max_iterations = 500;
  double interior_wealth = 1e-8;    ///< interior iff min X_T > interior_wealth * x ...
  double interior_residual = 1e-8;  ///< ... and first-order residual below this
  double root_tol = 1e-15;          ///< relative capital tolerance of dual inversion
};

struct PrimalDualSolution {
  double x = 0.0;
  double y = 0.0;
  PredictableStrategy strategy;
  AdaptedProcess X;
  AdaptedProcess Y;
  double u = 0.0, u1 = 0.0;
  double v = 0.0, v1 = 0.0;
  bool interior = false;
  double first_order_residual = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  Eigen::VectorXd coords;  ///< terminal wealth minus x in the solver's orthonormal gain basis

  OutcomeVector XT(const MarketTree& m) const { return terminal_values(m, X); }
  OutcomeVector YT(const MarketTree& m) const { return terminal_values(m, Y); }
};

/// Caches the no-arbitrage check and an orthonormal basis of attainable
/// terminal gains, so repeated solves on one model (value curves, finite
/// difference ladders, dual inversion) share the setup.
class PrimalSolver {
 public:
  PrimalSolver(const MarketTree& model, const UtilitySpec& u, SolverOptions opt = {})
      : model_(model), u_(u), opt_(opt) {
    auto mm = find_martingale_measure(model_);
    if (auto* cert = std::get_if<ArbitrageCertificate>(&mm)) throw ArbitrageError(*cert);
    G_ = gain_span_matrix(model_);
    p_ = model_.physical_measure().leaf_prob;
    const Eigen::Index n = model_.num_leaves();
    if (G_.cols() > 0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G_);
      qr.setThreshold(1e-12);
      const Eigen::Index r = qr.rank();
      Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
      B_ = Q;
    } else {
      B_.resize(n, 0);
    }
    cod_.compute(G_);
  }

  const MarketTree& model() const { return model_; }
  const UtilitySpec& utility() const { return u_; }
  const SolverOptions& options() const { return opt_; }
  /// Dimension of the attainable gain space.
  Eigen::Index gain_rank() const { return B_.cols(); }

  PrimalDualSolution solve(double x, const Eigen::VectorXd* warm = nullptr) const {
    if (!(x > 0.0) || !std::isfinite(x)) throw PreconditionError("solve_primal: capital must be positive");
    const Eigen::Index r = B_.cols();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(r);
    if (warm && warm->size() == r && feasible(x, *warm)) c = *warm;
    if (!feasible(x, c)) throw UtilityError("solve_primal: capital " + detail::fmt_num(x) + " outside utility domain");

    double F = objective(x, c);
    double gnorm = 0.0;
    int it = 0;
    for (; it < opt_.max_iterations; ++it) {
      if (r == 0) break;
      Eigen::VectorXd X = wealth(x, c);
      Eigen::VectorXd w1(X.size()), w2(X.size());
      for (Eigen::Index i = 0; i < X.size(); ++i) {
        w1[i] = p_[i] * u_.U1(X[i]);
        w2[i] = -p_[i] * u_.U2(X[i]);
      }
      Eigen::VectorXd g = B_.transpose() * w1;
      gnorm = g.norm();
      Eigen::MatrixXd H = B_.transpose() * w2.asDiagonal() * B_;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      Eigen::VectorXd dc = ldlt.solve(g);
      if (gnorm <= stop_level(x, c, F)) {
        // one polishing step: quadratic convergence makes it nearly free and
        // pushes the residual to rounding level
        Eigen::VectorXd ct = c + dc;
        if (dc.allFinite() && feasible(x, ct) && gradient(x, ct).norm() < gnorm) {
          c = ct;
          F = objective(x, c);
        }
        break;
      }
      const double dec = g.dot(dc);
      if (!(dec > 0.0) || !dc.allFinite()) {
        dc = g / std::max(H.diagonal().maxCoeff(), 1e-300);
      }
      double t = 1.0;
      bool accepted = false;
      // Once the predicted gain is at rounding level the objective cannot
      // rank steps; fall back to requiring a smaller gradient instead.
      const bool in_noise = dec <= 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(F));
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        Eigen::VectorXd ct = c + t * dc;
        if (!feasible(x, ct)) continue;
        const double Ft = objective(x, ct);
        bool ok = Ft >= F + 1e-4 * t * dec;
        if (!ok && in_noise) ok = gradient(x, ct).norm() < gnorm;
        if (ok) {
          c = ct;
          F = Ft;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    if (r > 0) {
      Eigen::VectorXd X = wealth(x, c);
      Eigen::VectorXd w1(X.size());
      for (Eigen::Index i = 0; i < X.size(); ++i) w1[i] = p_[i] * u_.U1(X[i]);
      gnorm = (B_.transpose() * w1).norm();
      if (!(gnorm <= stop_level(x, c, F))) {
        throw ConvergenceError("solve_primal: no convergence at x = " + detail::fmt_num(x) +
                                   " (gradient norm " + detail::fmt_num(gnorm) + ")",
                               gnorm);
      }
    }
    return assemble(x, c, gnorm, it);
  }

  /// Capital x with u'(x) = y, by bracketed root-finding on log x.
  PrimalDualSolution solve_dual(double y) const {
    if (!(y > 0.0)) throw PreconditionError("solve_dual: y must be positive");
    const auto& dom = u_.domain();
    Eigen::VectorXd warm;
    double last_x = 0.0;
    auto f = [&](double z) {
      const double x = std::exp(z);
      Eigen::VectorXd w = warm.size() ? Eigen::VectorXd(warm * (x / last_x)) : Eigen::VectorXd();
      auto s = solve(x, warm.size() ? &w : nullptr);
      warm = s.coords;
      last_x = x;
      return std::log(s.u1) - std::log(y);
    };
    double z0 = 0.0;
    try {
      z0 = std::log(conjugate(u_, y).x_star);
    } catch (const UtilityError&) {
      throw UtilityError("solve_dual: y = " + detail::fmt_num(y) + " unreachable on the trusted capital range");
    }
    double lo = z0, hi = z0;
    double flo = f(lo), fhi = flo;
    double step = 0.5;
    const double zmin = std::log(dom.lo), zmax = std::log(dom.hi);
    for (int k = 0; k < 200 && flo * fhi > 0.0; ++k) {
      if (fhi > 0.0) {
        lo = hi;
        flo = fhi;
        hi += step;
        if (hi > zmax) throw UtilityError("solve_dual: y = " + detail::fmt_num(y) + " unreachable");
        fhi = f(hi);
      } else {
        hi = lo;
        fhi = flo;
        lo -= step;
        if (lo < zmin) throw UtilityError("solve_dual: y = " + detail::fmt_num(y) + " unreachable");
        flo = f(lo);
      }
      step *= 2.0;
    }
    if (flo * fhi > 0.0) throw UtilityError("solve_dual: could not bracket u'(x) = y");
    double root = flo == 0.0 ? lo : hi;
    if (flo != 0.0 && fhi != 0.0) {
      std::uintmax_t iters = 200;
      const double rt = opt_.root_tol;
      auto tol = [rt](double a, double b) { return std::abs(a - b) <= rt; };
      auto br = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, iters);
      root = 0.5 * (br.first + br.second);
    }
    return solve(std::exp(root));
  }

 private:
  Eigen::VectorXd wealth(double x, const Eigen::VectorXd& c) const {
    Eigen::VectorXd X = Eigen::VectorXd::Constant(model_.num_leaves(), x);
    if (c.size()) X += B_ * c;
    return X;
  }
  /// Stopping level: the requested tolerance, or the gradient change caused
  /// by rounding every leaf wealth if that is larger (wealth pinned near zero
  /// makes U' sensitive to the last bits of X).
  double stop_level(double x, const Eigen::VectorXd& c, double F) const {
    Eigen::VectorXd X = wealth(x, c);
    Eigen::VectorXd w(X.size());
    const Eigen::VectorXd Bc = c.size() ? Eigen::VectorXd(B_ * c) : Eigen::VectorXd::Zero(X.size());
    for (Eigen::Index i = 0; i < X.size(); ++i)
      w[i] = p_[i] * std::abs(u_.U2(X[i])) * (x + std::abs(Bc[i])) * std::numeric_limits<double>::epsilon();
    const double floor = 8.0 * (B_.cwiseAbs().transpose() * w).norm();
    return std::max(opt_.gradient_tol * (1.0 + std::abs(F)), floor);
  }
  Eigen::VectorXd gradient(double x, const Eigen::VectorXd& c) const {
    Eigen::VectorXd X = wealth(x, c);
    Eigen::VectorXd w1(X.size());
    for (Eigen::Index i = 0; i < X.size(); ++i) w1[i] = p_[i] * u_.U1(X[i]);
    return B_.transpose() * w1;
  }
  bool feasible(double x, const Eigen::VectorXd& c) const {
    Eigen::VectorXd X = wealth(x, c);
    for (Eigen::Index i = 0; i < X.size(); ++i)
      if (!(X[i] > 0.0) || !u_.in_domain(X[i])) return false;
    return true;
  }
  double objective(double x, const Eigen::VectorXd& c) const {
    Eigen::VectorXd X = wealth(x, c);
    double s = 0.0;
    for (Eigen::Index i = 0; i < X.size(); ++i) s += p_[i] * u_.U(X[i]);
    return s;
  }

  PrimalDualSolution assemble(double x, const Eigen::VectorXd& c, double gnorm, int iters) const {
    PrimalDualSolution s;
    s.x = x;
    s.coords = c;
    s.gradient_norm = gnorm;
    s.iterations = iters;
    const Eigen::VectorXd XT = wealth(x, c);
    Eigen::VectorXd coef = G_.cols() ? Eigen::VectorXd(cod_.solve(XT - Eigen::VectorXd::Constant(XT.size(), x)))
                                     : Eigen::VectorXd();
    s.strategy = G_.cols() ? strategy_from_coefficients(model_, coef) : zero_strategy(model_);
    s.X = wealth_process(model_, x, s.strategy);
    // keep the solver's terminal wealth exactly; the strategy reproduces it to rounding
    for (int i = 0; i < model_.num_leaves(); ++i) s.X.value[model_.leaf_node(i)] = XT[i];

    Eigen::VectorXd YT(XT.size());
    double u = 0.0, xy = 0.0;
    for (Eigen::Index i = 0; i < XT.size(); ++i) {
      YT[i] = u_.U1(XT[i]);
      u += p_[i] * u_.U(XT[i]);
      xy += p_[i] * XT[i] * YT[i];
    }
    s.u = u;
    s.u1 = xy / x;
    s.y = s.u1;
    auto XY = conditional_expectation(XT.cwiseProduct(YT), model_.physical_measure(), model_);
    s.Y.value = XY.value.cwiseQuotient(s.X.value);
    for (int i = 0; i < model_.num_leaves(); ++i) s.Y.value[model_.leaf_node(i)] = YT[i];

    double v = 0.0;
    for (Eigen::Index i = 0; i < YT.size(); ++i) v += p_[i] * conjugate(u_, YT[i]).V;
    s.v = v;
    s.v1 = -x;

    s.first_order_residual = relative_first_order(XT);
    s.interior = XT.minCoeff() > opt_.interior_wealth * x && s.first_order_residual < opt_.interior_residual;
    return s;
  }

 public:
  /// max over spanning gains G of |E[U'(X_T) G]| / E[|U'(X_T) G|].
  double relative_first_order(const Eigen::VectorXd& XT) const {
    double worst = 0.0;
    for (Eigen::Index k = 0; k < G_.cols(); ++k) {
      double e = 0.0, scale = 0.0;
      for (Eigen::Index i = 0; i < XT.size(); ++i) {
        const double t = p_[i] * u_.U1(XT[i]) * G_(i, k);
        e += t;
        scale += std::abs(t);
      }
      if (scale > 0.0) worst = std::max(worst, std::abs(e) / scale);
    }
    return worst;
  }

 private:
  const MarketTree& model_;
  const UtilitySpec& u_;
  SolverOptions opt_;
  Eigen::MatrixXd G_;
  Eigen::MatrixXd B_;
  Eigen::VectorXd p_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod_;
};

inline PrimalDualSolution solve_primal(const MarketTree& model, const UtilitySpec& u, double x,
                                       const SolverOptions& opt = {}) {
  return PrimalSolver(model, u, opt).solve(x);
}

inline PrimalDualSolution solve_dual(const MarketTree& model, const UtilitySpec& u, double y,
                                     const SolverOptions& opt = {}) {
  return PrimalSolver(model, u, opt).solve_dual(y);
}

/// Builds the solution record for a given strategy without optimizing
/// (used to audit a known candidate such as buy-and-hold).
inline PrimalDualSolution evaluate_strategy(const MarketTree& model, const UtilitySpec& u, double x,
                                            const PredictableStrategy& h, const SolverOptions& opt = {}) {
  PrimalDualSolution s;
  s.x = x;
  s.strategy = h;
  s.X = wealth_process(model, x, h);
  const OutcomeVector XT = terminal_values(model, s.X);
  if (!(XT.minCoeff() > 0.0)) throw PreconditionError("evaluate_strategy: terminal wealth must be positive");
  const Eigen::VectorXd p = model.physical_measure().leaf_prob;
  Eigen::VectorXd YT(XT.size());
  double xy = 0.0;
  for (Eigen::Index i = 0; i < XT.size(); ++i) {
    YT[i] = u.U1(XT[i]);
    s.u += p[i] * u.U(XT[i]);
    xy += p[i] * XT[i] * YT[i];
    s.v += p[i] * conjugate(u, YT[i]).V;
  }
  s.u1 = xy / x;
  s.y = s.u1;
  s.v1 = -x;
  auto XY = conditional_expectation(XT.cwiseProduct(YT), model.physical_measure(), model);
  s.Y.value = XY.value.cwiseQuotient(s.X.value);
  for (int i = 0; i < model.num_leaves(); ++i) s.Y.value[model.leaf_node(i)] = YT[i];
  const Eigen::MatrixXd G = gain_span_matrix(model);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < G.cols(); ++k) {
    double e = 0.0, scale = 0.0;
    for (Eigen::Index i = 0; i < XT.size(); ++i) {
      const double t = p[i] * YT[i] * G(i, k);
      e += t;
      scale += std::abs(t);
    }
    if (scale > 0.0) worst = std::max(worst, std::abs(e) / scale);
  }
  s.first_order_residual = worst;
  s.interior = XT.minCoeff() > opt.interior_wealth * x && worst < opt.interior_residual;
  return s;
}

/// Optimality conditions of a solved point: E[U'(X_T) G] for every spanning
/// gain G (two-sided when interior, one-sided where a zero-wealth leaf blocks
/// a direction), and the one-step martingale property of Y times prices.
inline ResidualTable first_order_audit(const PrimalDualSolution& sol, const MarketTree& model, const UtilitySpec& u,
                                       double tol = 1e-9) {
  ResidualTable t;
  const OutcomeVector XT = sol.XT(model);
  const Eigen::VectorXd p = model.physical_measure().leaf_prob;
  const Eigen::MatrixXd G = gain_span_matrix(model);
  double two_sided = 0.0, one_sided = 0.0;
  for (Eigen::Index k = 0; k < G.cols(); ++k) {
    double e = 0.0, scale = 0.0;
    bool up_blocked = false, down_blocked = false;
    for (Eigen::Index i = 0; i < XT.size(); ++i) {
      const double term = p[i] * u.U1(XT[i]) * G(i, k);
      e += term;
      scale += std::abs(term);
      if (XT[i] <= 1e-8 * sol.x) {
        if (G(i, k) < 0.0) up_blocked = true;
        if (G(i, k) > 0.0) down_blocked = true;
      }
    }
    if (scale == 0.0) continue;
    const double rel = e / scale;
    if (sol.interior || (!up_blocked && !down_blocked)) {
      two_sided = std::max(two_sided, std::abs(rel));
    } else if (up_blocked && !down_blocked) {
      one_sided = std::max(one_sided, -rel);  // must be >= 0: can only sell more
    } else if (down_blocked && !up_blocked) {
      one_sided = std::max(one_sided, rel);
    }
  }
  t.add("first_order.gain_orthogonality", two_sided, tol);
  t.add("first_order.one_sided", one_sided, tol);

  const auto& S = model.price_matrix();
  double mart = 0.0;
  for (int n : model.trading_nodes()) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(model.num_assets());
    double scale = 0.0;
    for (int c : model.children(n)) {
      const double w = model.transition_prob(c) * sol.Y.value[c];
      e += w * (S.row(c) - S.row(n)).transpose();
      scale += std::abs(w) * (S.row(c) - S.row(n)).cwiseAbs().maxCoeff();
    }
    if (scale > 0.0) mart = std::max(mart, e.cwiseAbs().maxCoeff() / scale);
  }
  t.add("first_order.deflated_price_martingale", mart, tol);
  return t;
}

/// Duality identities of a solved point.
inline ResidualTable duality_audit(const PrimalDualSolution& sol, const MarketTree& model, const UtilitySpec& u) {
  ResidualTable t;
  const OutcomeVector XT = sol.XT(model), YT = sol.YT(model);
  const Eigen::VectorXd p = model.physical_measure().leaf_prob;
  double eq11 = 0.0;
  for (Eigen::Index i = 0; i < XT.size(); ++i)
    eq11 = std::max(eq11, std::abs(u.U1(XT[i]) - YT[i]) / std::abs(YT[i]));
  t.add("dual.marginal_utility_match", eq11, 1e-12);
  const double exy = p.dot(XT.cwiseProduct(YT));
  t.add("dual.expected_xy", std::abs(exy - sol.x * sol.y) / (sol.x * sol.y), 1e-10);
  t.add("dual.conjugacy", std::abs(sol.u - sol.x * sol.y - sol.v) / std::max(1.0, std::abs(sol.u)), 1e-9);
  t.add("dual.v_prime", std::abs(sol.v1 + sol.x) / sol.x, 1e-12);
  // Y is a P-supermartingale; at interior optima a martingale
  double super = 0.0, mart = 0.0;
  for (int n : model.trading_nodes()) {
    double e = 0.0;
    for (int c : model.children(n)) e += model.transition_prob(c) * sol.Y.value[c];
    const double scale = std::abs(sol.Y.value[n]);
    super = std::max(super, (e - sol.Y.value[n]) / scale);
    mart = std::max(mart, std::abs(e - sol.Y.value[n]) / scale);
  }
  t.add("dual.supermartingale", std::max(super, 0.0), 1e-10);
  t.add("dual.martingale", mart, sol.interior ? 1e-10 : std::numeric_limits<double>::infinity());
  return t;
}

struct ValueSample {
  double x = 0.0, u = 0.0, u1 = 0.0;
};

struct ValueCurve {
  std::vector<ValueSample> samples;
  bool u_increasing = true;
  bool u1_decreasing = true;
};

inline ValueCurve value_curve(const MarketTree& model, const UtilitySpec& u, std::vector<double> grid,
                              const SolverOptions& opt = {}) {
  if (grid.empty()) throw PreconditionError("value_curve: empty grid");
  std::sort(grid.begin(), grid.end());
  PrimalSolver solver(model, u, opt);
  ValueCurve vc;
  for (double x : grid) {
    auto s = solver.solve(x);
    vc.samples.push_back({x, s.u, s.u1});
  }
  for (std::size_t i = 1; i < vc.samples.size(); ++i) {
    if (!(vc.samples[i].u > vc.samples[i - 1].u)) vc.u_increasing = false;
    if (!(vc.samples[i].u1 < vc.samples[i - 1].u1)) vc.u1_decreasing = false;
  }
  return vc;
}

}  // namespace usens

#endif  // USENS_PRIMAL_DUAL_HPP
