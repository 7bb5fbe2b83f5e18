#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "usens/primal_dual.hpp"

using namespace usens;

namespace {

// complete market: X_T = c xi^(-1/gamma), c = x / E[xi^(1 - 1/gamma)], xi = dQ/dP
OutcomeVector complete_market_optimum(const MarketTree& m, double gamma, double x) {
  const auto q = std::get<Measure>(find_martingale_measure(m)).leaf_prob;
  const auto p = m.physical_measure().leaf_prob;
  OutcomeVector X(p.size());
  double norm = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double xi = q[i] / p[i];
    X[i] = std::pow(xi, -1.0 / gamma);
    norm += q[i] * X[i];
  }
  return X * (x / norm);
}

void expect_all_pass(const ResidualTable& t) {
  for (const auto& r : t.rows()) EXPECT_TRUE(r.pass) << r.name << " = " << r.value << " (tol " << r.tolerance << ")";
}

}  // namespace

TEST(PrimalDual, CompleteMarketClosedForm) {
  const auto m = fixtures::load("binomial.json");
  for (double g : {0.5, 1.0, 2.0, 5.0}) {
    const auto u = power_utility(g);
    const auto sol = solve_primal(m, u, 1.7);
    const auto expect = complete_market_optimum(m, g, 1.7);
    EXPECT_LE((sol.XT(m) - expect).cwiseAbs().maxCoeff(), 1e-12) << "gamma " << g;
    EXPECT_TRUE(sol.interior);
    expect_all_pass(first_order_audit(sol, m, u));
    expect_all_pass(duality_audit(sol, m, u));
  }
}

TEST(PrimalDual, LogUtilityOneStep) {
  // one period, log utility: maximize E log(1 + h (S - 1)) on a trinomial
  const auto m = fixtures::load("trinomial.json");
  const auto u = log_utility();
  const auto sol = solve_primal(m, u, 1.0);
  const double h = sol.strategy.holdings(0, 0);
  // first-order condition sum p r / (1 + h r) = 0 with r = (0.25, 0, -0.2)
  const double foc = 0.3 * 0.25 / (1 + h * 0.25) + 0.3 * -0.2 / (1 - h * 0.2);
  EXPECT_NEAR(foc, 0.0, 1e-14);
  EXPECT_NEAR(h, 0.5, 1e-12);  // 0.075 (1 - 0.2 h) = 0.06 (1 + 0.25 h)
  expect_all_pass(first_order_audit(sol, m, u));
  expect_all_pass(duality_audit(sol, m, u));
}

TEST(PrimalDual, ConstantRiskAversionScaling) {
  // for power utility the optimal wealth is linear in x and u'(x) = u'(1) x^-gamma
  const auto m = fixtures::load("lattice.json");
  const auto u = power_utility(3.0);
  const auto s1 = solve_primal(m, u, 1.0), s2 = solve_primal(m, u, 2.5);
  EXPECT_LE((s2.XT(m) - 2.5 * s1.XT(m)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(s2.u1, s1.u1 * std::pow(2.5, -3.0), 1e-12 * s2.u1);
}

TEST(PrimalDual, DualInversion) {
  const auto m = fixtures::load("trinomial.json");
  const auto u = blend_utility({{1.0, 0.5}, {1.0, 3.0}});
  const auto s = solve_primal(m, u, 1.3);
  const auto d = solve_dual(m, u, s.y);
  EXPECT_NEAR(d.x, 1.3, 1e-12);
  EXPECT_NEAR(d.v1, -1.3, 1e-12);
  EXPECT_NEAR(d.y, s.y, 1e-12 * s.y);
}

TEST(PrimalDual, ArbitrageModelRejected) {
  const auto m = fixtures::load("arbitrage.json");
  try {
    solve_primal(m, power_utility(2.0), 1.0);
    FAIL() << "expected ArbitrageError";
  } catch (const ArbitrageError& e) {
    EXPECT_EQ(e.certificate().node, "r");
  }
}

TEST(PrimalDual, IterationCapReportsGradient) {
  const auto m = fixtures::load("binomial.json");
  SolverOptions o;
  o.max_iterations = 1;
  o.gradient_tol = 1e-16;
  try {
    solve_primal(m, power_utility(5.0), 1.0, o);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(PrimalDual, EvaluateStrategyZeroHolding) {
  const auto m = fixtures::load("binomial.json");
  const auto u = log_utility();
  const auto s = evaluate_strategy(m, u, 2.0, zero_strategy(m));
  for (int i = 0; i < m.num_leaves(); ++i) EXPECT_EQ(s.XT(m)[i], 2.0);
  EXPECT_NEAR(s.u, std::log(2.0), 1e-15);
  EXPECT_GT(s.first_order_residual, 1e-3);  // zero holding is not optimal here
}

TEST(PrimalDual, ValueCurveIsConcaveIncreasing) {
  const auto m = fixtures::load("trinomial.json");
  const auto vc = value_curve(m, blend_utility({{1.0, 0.5}, {2.0, 2.0}}), {0.5, 1.0, 2.0, 4.0});
  EXPECT_TRUE(vc.u_increasing);
  EXPECT_TRUE(vc.u1_decreasing);
  EXPECT_THROW(value_curve(m, log_utility(), {}), PreconditionError);
}
