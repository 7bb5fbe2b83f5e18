#ifndef USENS_SENSITIVITY_HPP
#define USENS_SENSITIVITY_HPP

// Second-order sensitivities of the value functions at an interior optimum.
//
// Everything lives in L^2_0 of the risk measure R with dR/dP = X_T Y_T / (xy).
// The gain subspace A (terminal gains measured in units of X_T) and its
// R-orthogonal complement B split L^2_0; a(x) and b(y) are the minimal values
// of E_R[zeta (1 + alpha)^2] over A and E_R[eta (1 + beta)^2] over B.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "usens/market_tree.hpp"
#include "usens/primal_dual.hpp"
#include "usens/residuals.hpp"
#include "usens/utility.hpp"

namespace usens {

struct RiskMeasure {
  Measure measure;
  double sum_residual = 0.0;
  const Eigen::VectorXd& weights() const { return measure.leaf_prob; }
};

/// Columns are OutcomeVectors; orthonormal under E_R when flagged.
struct SubspaceBasis {
  Eigen::MatrixXd vectors;
  RiskMeasure metric;
  bool orthonormalized = false;
  double max_mean = 0.0;  ///< max |E_R[v]| / |v|_R over the spanning vectors before centering
  Eigen::Index dim() const { return vectors.cols(); }
};

struct Projection {
  double value = 0.0;
  OutcomeVector optimizer;
  Eigen::VectorXd coefficients;
};

inline void require_interior(const PrimalDualSolution& sol, const char* who) {
  if (!sol.interior)
    throw PreconditionError(std::string(who) + ": solution is not interior (first-order residual " +
                            detail::fmt_num(sol.first_order_residual) + ")");
}

inline RiskMeasure risk_measure(const MarketTree& model, const PrimalDualSolution& sol) {
  require_interior(sol, "risk_measure");
  const OutcomeVector XT = sol.XT(model), YT = sol.YT(model);
  RiskMeasure R;
  R.measure.leaf_prob =
      model.physical_measure().leaf_prob.cwiseProduct(XT).cwiseProduct(YT) / (sol.x * sol.y);
  R.sum_residual = std::abs(R.measure.leaf_prob.sum() - 1.0);
  return R;
}

namespace detail {

inline double r_dot(const Eigen::VectorXd& r, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return r.dot(a.cwiseProduct(b));
}

/// Modified Gram-Schmidt under E_R with one reorthogonalization pass; drops
/// columns whose norm after projection is <= drop_tol times their original norm.
inline Eigen::MatrixXd r_orthonormalize(const Eigen::MatrixXd& V, const Eigen::VectorXd& r, double drop_tol) {
  std::vector<Eigen::VectorXd> kept;
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    Eigen::VectorXd v = V.col(k);
    const double n0 = std::sqrt(r_dot(r, v, v));
    if (!(n0 > 0.0)) continue;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : kept) v -= r_dot(r, q, v) * q;
    const double n1 = std::sqrt(r_dot(r, v, v));
    if (n1 <= drop_tol * n0) continue;
    kept.push_back(v / n1);
  }
  Eigen::MatrixXd out(V.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = kept[k];
  return out;
}

}  // namespace detail

/// Basis of { G_T / X_T : G a zero-initial gain process } inside L^2_0(R).
inline SubspaceBasis gain_subspace(const MarketTree& model, const PrimalDualSolution& sol, const RiskMeasure& R,
                                   double drop_tol = 1e-10) {
  require_interior(sol, "gain_subspace");
  const OutcomeVector XT = sol.XT(model);
  Eigen::MatrixXd G = gain_span_matrix(model);
  const Eigen::VectorXd& r = R.weights();
  SubspaceBasis b;
  b.metric = R;
  // E_R[G / X_T] = E[G Y_T] / (x y) vanishes only up to the solver's first-order
  // residual; record that relative mean, then center exactly so the basis lies in L^2_0(R)
  for (Eigen::Index k = 0; k < G.cols(); ++k) {
    G.col(k) = G.col(k).cwiseQuotient(XT);
    const double norm = std::sqrt(detail::r_dot(r, G.col(k), G.col(k)));
    if (!(norm > 0.0)) continue;
    const double mean = r.dot(G.col(k));
    b.max_mean = std::max(b.max_mean, std::abs(mean) / norm);
    G.col(k).array() -= mean / r.sum();
  }
  b.vectors = detail::r_orthonormalize(G, r, drop_tol);
  b.orthonormalized = true;
  return b;
}

/// R-orthonormal basis of the complement of span(A) inside L^2_0(R).
inline SubspaceBasis orthocomplement(const SubspaceBasis& A, const RiskMeasure& R) {
  const Eigen::VectorXd& r = R.weights();
  const Eigen::Index n = r.size();
  if (A.vectors.rows() != n && A.dim() > 0) throw PreconditionError("orthocomplement: basis length mismatch");
  const Eigen::VectorXd s = r.cwiseSqrt();
  // in coordinates w = sqrt(r) v the metric is Euclidean and L^2_0 is s-perp
  Eigen::MatrixXd M(n, 1 + A.dim());
  M.col(0) = s;
  for (Eigen::Index k = 0; k < A.dim(); ++k) M.col(1 + k) = s.cwiseProduct(A.vectors.col(k));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::Index used = 1 + A.dim();
  SubspaceBasis B;
  B.metric = R;
  B.orthonormalized = true;
  B.vectors.resize(n, std::max<Eigen::Index>(0, n - used));
  for (Eigen::Index k = 0; k < B.vectors.cols(); ++k) B.vectors.col(k) = Q.col(used + k).cwiseQuotient(s);
  for (Eigen::Index k = 0; k < B.dim(); ++k)
    B.max_mean = std::max(B.max_mean, std::abs(R.measure.expectation(B.vectors.col(k))));
  return B;
}

/// min over alpha in span(basis) of E_R[w (1 + alpha)^2].
inline Projection quad_project(const SubspaceBasis& basis, const OutcomeVector& weights, const RiskMeasure& R) {
  const Eigen::VectorXd& r = R.weights();
  if (weights.size() != r.size()) throw PreconditionError("quad_project: weight length mismatch");
  if (!(weights.minCoeff() > 0.0)) throw PreconditionError("quad_project: weights must be positive");
  const Eigen::VectorXd W = r.cwiseProduct(weights);
  Projection p;
  p.optimizer = OutcomeVector::Zero(r.size());
  if (basis.dim() > 0) {
    const Eigen::MatrixXd& G = basis.vectors;
    const Eigen::MatrixXd N = G.transpose() * W.asDiagonal() * G;
    const Eigen::VectorXd rhs = -(G.transpose() * W);
    Eigen::LLT<Eigen::MatrixXd> llt(N);
    if (llt.info() != Eigen::Success) throw ModelError("quad_project: singular normal matrix");
    p.coefficients = llt.solve(rhs);
    p.optimizer = G * p.coefficients;
  } else {
    p.coefficients.resize(0);
  }
  p.value = W.dot((OutcomeVector::Ones(r.size()) + p.optimizer).array().square().matrix());
  return p;
}

struct SensitivityReport {
  double x = 0.0, y = 0.0;
  double a = 0.0, b = 0.0;
  OutcomeVector zeta, eta;
  OutcomeVector alpha_hat, beta_hat;
  AdaptedProcess M_proc, N_proc;
  AdaptedProcess Xp, Yp;
  double u2 = 0.0, v2 = 0.0;
  Eigen::Index dim_A = 0, dim_B = 0;
  RiskMeasure R;
  ResidualTable residuals;
};

inline SensitivityReport sensitivity(const MarketTree& model, const UtilitySpec& u, const PrimalDualSolution& sol) {
  require_interior(sol, "sensitivity");
  SensitivityReport rep;
  rep.x = sol.x;
  rep.y = sol.y;
  const OutcomeVector XT = sol.XT(model), YT = sol.YT(model);
  const Eigen::Index n = XT.size();
  const Eigen::VectorXd p = model.physical_measure().leaf_prob;

  rep.zeta.resize(n);
  rep.eta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    rep.zeta[i] = u.A(XT[i]);
    rep.eta[i] = conjugate(u, YT[i]).B();
    if (!u.corridor().contains(rep.zeta[i]))
      throw UtilityError("sensitivity: risk aversion " + detail::fmt_num(rep.zeta[i]) + " at X_T = " +
                         detail::fmt_num(XT[i]) + " outside the declared corridor");
  }

  rep.R = risk_measure(model, sol);
  const auto A = gain_subspace(model, sol, rep.R);
  const auto B = orthocomplement(A, rep.R);
  rep.dim_A = A.dim();
  rep.dim_B = B.dim();
  const auto pa = quad_project(A, rep.zeta, rep.R);
  const auto pb = quad_project(B, rep.eta, rep.R);
  rep.a = pa.value;
  rep.b = pb.value;
  rep.alpha_hat = pa.optimizer;
  rep.beta_hat = pb.optimizer;
  rep.M_proc = conditional_expectation(rep.alpha_hat, rep.R.measure, model);
  rep.N_proc = conditional_expectation(rep.beta_hat, rep.R.measure, model);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(model.num_nodes());
  rep.Xp.value = (sol.X.value / sol.x).cwiseProduct(ones + rep.M_proc.value);
  rep.Yp.value = (sol.Y.value / sol.y).cwiseProduct(ones + rep.N_proc.value);
  rep.u2 = -(sol.u1 / sol.x) * rep.a;
  rep.v2 = -(sol.v1 / sol.y) * rep.b;

  auto& t = rep.residuals;
  const Eigen::VectorXd& r = rep.R.weights();
  t.add("risk_measure.sum", rep.R.sum_residual, 1e-12);
  t.add("subspace.gain_mean", A.max_mean, 1e-12);
  t.add_flag("subspace.complementary_dimension", static_cast<double>(rep.dim_A + rep.dim_B),
             rep.dim_A + rep.dim_B == n - 1);
  t.add("reciprocity", std::abs(rep.a * rep.b - 1.0), 1e-10);
  t.add_flag("corridor.a", rep.a, u.corridor().contains(rep.a));
  t.add_flag("corridor.b", rep.b, 1.0 / u.corridor().c2 < rep.b && rep.b < 1.0 / u.corridor().c1);

  double prop = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    prop = std::max(prop, std::abs(rep.zeta[i] * (1.0 + rep.alpha_hat[i]) - rep.a * (1.0 + rep.beta_hat[i])));
  t.add("proportionality", prop / rep.a, 1e-10);

  const OutcomeVector XpT = terminal_values(model, rep.Xp), YpT = terminal_values(model, rep.Yp);
  double e30 = 0.0, e31 = 0.0, cross = 0.0, cross_scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double U2 = u.U2(XT[i]);
    e30 += p[i] * U2 * XpT[i] * XpT[i];
    e31 += p[i] * (-1.0 / U2) * YpT[i] * YpT[i];  // V''(Y_T) = -1 / U''(X_T)
    cross = std::max(cross, std::abs(U2 * XpT[i] - rep.u2 * YpT[i]));
    cross_scale = std::max(cross_scale, std::abs(rep.u2 * YpT[i]));
  }
  t.add("second_derivative.u", std::abs(rep.u2 - e30) / std::abs(rep.u2), 1e-9);
  t.add("second_derivative.v", std::abs(rep.v2 - e31) / std::abs(rep.v2), 1e-9);
  t.add("cross_identity", cross / std::max(cross_scale, 1e-300), 1e-9);
  t.add("conjugate_curvature", std::abs(rep.u2 * rep.v2 + 1.0), 1e-9);
  t.add("orthogonality.alpha_mean", std::abs(r.dot(rep.alpha_hat)), 1e-10);
  t.add("orthogonality.beta_mean", std::abs(r.dot(rep.beta_hat)), 1e-10);
  t.add("orthogonality.alpha_beta", std::abs(r.dot(rep.alpha_hat.cwiseProduct(rep.beta_hat))), 1e-10);
  return rep;
}

/// Node-by-node P-martingale residuals of X Y', X' Y and X' Y'.
inline ResidualTable martingale_audit(const MarketTree& model, const PrimalDualSolution& sol,
                                      const SensitivityReport& rep, double tol = 1e-9) {
  auto worst = [&](const Eigen::VectorXd& Z) {
    double w = 0.0;
    for (int n : model.trading_nodes()) {
      double e = 0.0, scale = std::abs(Z[n]);
      for (int c : model.children(n)) {
        e += model.transition_prob(c) * Z[c];
        scale = std::max(scale, std::abs(Z[c]));
      }
      if (scale > 0.0) w = std::max(w, std::abs(e - Z[n]) / scale);
    }
    return w;
  };
  ResidualTable t;
  t.add("martingale.X_Yp", worst(sol.X.value.cwiseProduct(rep.Yp.value)), tol);
  t.add("martingale.Xp_Y", worst(rep.Xp.value.cwiseProduct(sol.Y.value)), tol);
  t.add("martingale.Xp_Yp", worst(rep.Xp.value.cwiseProduct(rep.Yp.value)), tol);
  return t;
}

// ---------------------------------------------------------------------------
// finite-difference oracle

struct FdOptions {
  std::vector<double> ladder{1e-2, 5e-3, 2.5e-3};  ///< relative steps, decreasing
  double solver_tol = 1e-13;
  bool dual_side = true;
};

struct FdOracle {
  double u2_fd = 0.0;
  double u2_err = 0.0;                            ///< |last extrapolant - previous level|
  std::vector<std::vector<double>> table;         ///< Richardson table, table[level][k]
  OutcomeVector Xp_fd, Yp_fd;
  double Xp_err = 0.0, Yp_err = 0.0;
  std::vector<std::pair<double, double>> expansion;  ///< (eps, |u(x+eps) - quadratic| / eps^2)
  ResidualTable residuals;
};

namespace detail {

/// Richardson table for an even-error expansion in h: level l removes h^(2l).
inline std::vector<std::vector<Eigen::VectorXd>> richardson(const std::vector<double>& h,
                                                            const std::vector<Eigen::VectorXd>& d0) {
  std::vector<std::vector<Eigen::VectorXd>> T{d0};
  for (std::size_t lvl = 1; lvl < h.size(); ++lvl) {
    const auto& prev = T.back();
    std::vector<Eigen::VectorXd> next;
    for (std::size_t k = lvl; k < h.size(); ++k) {
      const double ratio = std::pow(h[k - lvl] / h[k], 2.0 * static_cast<double>(lvl));
      next.push_back((ratio * prev[k - lvl + 1] - prev[k - lvl]) / (ratio - 1.0));
    }
    T.push_back(std::move(next));
  }
  return T;
}

}  // namespace detail

inline FdOracle fd_oracle(const MarketTree& model, const UtilitySpec& u, double x, const FdOptions& fo = {},
                          std::optional<double> u2_ref = std::nullopt) {
  if (fo.ladder.size() < 2) throw PreconditionError("fd_oracle: ladder needs at least two steps");
  for (std::size_t k = 1; k < fo.ladder.size(); ++k)
    if (!(fo.ladder[k] < fo.ladder[k - 1])) throw PreconditionError("fd_oracle: ladder must be decreasing");
  SolverOptions so;
  so.gradient_tol = fo.solver_tol;
  PrimalSolver solver(model, u, so);
  const auto base = solver.solve(x);
  if (!base.interior) throw PreconditionError("fd_oracle: base solution is not interior");

  std::vector<double> h;
  std::vector<Eigen::VectorXd> d2, dx;
  std::vector<double> res_plus;
  for (double rel : fo.ladder) {
    const double hk = rel * x;
    const Eigen::VectorXd w = base.coords;
    Eigen::VectorXd wp = w * ((x + hk) / x), wm = w * ((x - hk) / x);
    const auto sp = solver.solve(x + hk, &wp), sm = solver.solve(x - hk, &wm);
    if (!sp.interior || !sm.interior) throw PreconditionError("fd_oracle: ladder solve left the interior");
    h.push_back(hk);
    d2.push_back(Eigen::VectorXd::Constant(1, (sp.u - 2.0 * base.u + sm.u) / (hk * hk)));
    dx.push_back((sp.XT(model) - sm.XT(model)) / (2.0 * hk));
    res_plus.push_back(sp.u - base.u - base.u1 * hk);
  }

  FdOracle out;
  const auto T = detail::richardson(h, d2);
  for (const auto& lvl : T) {
    std::vector<double> row;
    for (const auto& v : lvl) row.push_back(v[0]);
    out.table.push_back(row);
  }
  // Differences along the first column must shrink; growth above the rounding
  // floor means the steps are inside solver noise.
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base.u)) /
                       (h.back() * h.back());
  for (std::size_t k = 2; k < out.table[0].size(); ++k) {
    const double prev = std::abs(out.table[0][k - 1] - out.table[0][k - 2]);
    const double cur = std::abs(out.table[0][k] - out.table[0][k - 1]);
    if (cur > prev && cur > floor)
      throw PreconditionError("fd_oracle: ladder step too small (non-monotone Richardson table)");
  }
  out.u2_fd = out.table.back().back();
  out.u2_err = out.table.size() >= 2 ? std::abs(out.u2_fd - out.table[out.table.size() - 2].back()) : 0.0;
  out.u2_err = std::max(out.u2_err, floor);

  const auto TX = detail::richardson(h, dx);
  out.Xp_fd = TX.back().back();
  out.Xp_err = TX.size() >= 2 ? (out.Xp_fd - TX[TX.size() - 2].back()).cwiseAbs().maxCoeff() : 0.0;

  if (fo.dual_side) {
    std::vector<double> k;
    std::vector<Eigen::VectorXd> dy;
    const double y = base.y;
    for (double rel : fo.ladder) {
      const double kk = rel * y;
      const auto sp = solver.solve_dual(y + kk), sm = solver.solve_dual(y - kk);
      k.push_back(kk);
      dy.push_back((sp.YT(model) - sm.YT(model)) / (2.0 * kk));
    }
    const auto TY = detail::richardson(k, dy);
    out.Yp_fd = TY.back().back();
    out.Yp_err = TY.size() >= 2 ? (out.Yp_fd - TY[TY.size() - 2].back()).cwiseAbs().maxCoeff() : 0.0;
  }

  const double u2 = u2_ref.value_or(out.u2_fd);
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double ratio = std::abs(res_plus[i] - 0.5 * u2 * h[i] * h[i]) / (h[i] * h[i]);
    out.expansion.emplace_back(h[i], ratio);
    worst_ratio = std::max(worst_ratio, ratio);
  }
  // o(eps^2): the normalized remainder is O(eps), so it must shrink with eps
  bool shrinking = true;
  for (std::size_t i = 1; i < out.expansion.size(); ++i)
    if (out.expansion[i].second > out.expansion[i - 1].second + floor) shrinking = false;
  out.residuals.add_flag("fd.expansion_remainder_shrinks", out.expansion.back().second, shrinking);
  out.residuals.add("fd.expansion_remainder", out.expansion.back().second / std::abs(u2),
                    4.0 * fo.ladder.back());
  return out;
}

// ---------------------------------------------------------------------------

struct NodeRank {
  std::string node;
  int rank_prices = 0;     ///< rank of one-step increments of S
  int rank_numeraire = 0;  ///< rank of one-step increments of (1/X, S/X)
  int columns = 0;         ///< d + 1
  bool redundant = false;  ///< rank_numeraire < columns
  bool degenerate = false; ///< rank_numeraire == 0
};

inline std::vector<NodeRank> numeraire_rank_report(const MarketTree& model, const PrimalDualSolution& sol,
                                                   double rel_tol = 1e-10) {
  require_interior(sol, "numeraire_rank_report");
  const auto& S = model.price_matrix();
  const int d = model.num_assets();
  auto rank_of = [rel_tol](const Eigen::MatrixXd& M) {
    if (M.size() == 0) return 0;
    const double scale = M.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) return 0;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M / scale);
    qr.setThreshold(rel_tol);
    return static_cast<int>(qr.rank());
  };
  std::vector<NodeRank> out;
  for (int n : model.trading_nodes()) {
    const auto ch = model.children(n);
    Eigen::MatrixXd dS(ch.size(), d), dZ(ch.size(), d + 1);
    const double Xn = sol.X.value[n];
    for (std::size_t r = 0; r < ch.size(); ++r) {
      const int c = ch[r];
      const double Xc = sol.X.value[c];
      dS.row(r) = S.row(c) - S.row(n);
      dZ(r, 0) = 1.0 / Xc - 1.0 / Xn;
      dZ.row(r).tail(d) = S.row(c) / Xc - S.row(n) / Xn;
    }
    NodeRank nr;
    nr.node = model.node_id(n);
    nr.rank_prices = rank_of(dS);
    nr.rank_numeraire = rank_of(dZ);
    nr.columns = d + 1;
    nr.redundant = nr.rank_numeraire < nr.columns;
    nr.degenerate = nr.rank_numeraire == 0;
    out.push_back(nr);
  }
  return out;
}

}  // namespace usens

#endif  // USENS_SENSITIVITY_HPP
