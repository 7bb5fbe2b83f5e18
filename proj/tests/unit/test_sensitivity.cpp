#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "usens/sensitivity.hpp"

using namespace usens;

namespace {

void expect_all_pass(const ResidualTable& t) {
  for (const auto& r : t.rows()) EXPECT_TRUE(r.pass) << r.name << " = " << r.value << " (tol " << r.tolerance << ")";
}

RiskMeasure uniform(int n) {
  RiskMeasure R;
  R.measure.leaf_prob = Eigen::VectorXd::Constant(n, 1.0 / n);
  return R;
}

}  // namespace

TEST(Projection, ThreeLeafFixture) {
  // hand calculus: min (1/3)[(1+c)^2 + 2(1-c)^2 + 2] at c = 1/3, value 14/9
  const auto R = uniform(3);
  SubspaceBasis A;
  A.vectors = Eigen::Vector3d(1.0, -1.0, 0.0);
  A.metric = R;
  const auto pa = quad_project(A, Eigen::Vector3d(1.0, 2.0, 2.0), R);
  EXPECT_NEAR(pa.value, 14.0 / 9.0, 1e-15);
  EXPECT_NEAR(pa.optimizer[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(pa.optimizer[1], -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(pa.optimizer[2], 0.0, 1e-15);

  const auto B = orthocomplement(A, R);
  ASSERT_EQ(B.dim(), 1);
  const auto pb = quad_project(B, Eigen::Vector3d(1.0, 0.5, 0.5), R);
  EXPECT_NEAR(pb.value, 9.0 / 14.0, 1e-15);
  EXPECT_NEAR(pb.optimizer[0], -1.0 / 7.0, 1e-15);
  EXPECT_NEAR(pb.optimizer[1], -1.0 / 7.0, 1e-15);
  EXPECT_NEAR(pb.optimizer[2], 2.0 / 7.0, 1e-15);
}

TEST(Projection, ComplementIsOrthogonalAndCentered) {
  RiskMeasure R;
  R.measure.leaf_prob = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  SubspaceBasis A;
  A.vectors = Eigen::Vector4d(1.0, 0.0, 0.0, -0.25);
  const auto B = orthocomplement(A, R);
  ASSERT_EQ(B.dim(), 2);
  const Eigen::VectorXd& r = R.weights();
  for (Eigen::Index k = 0; k < 2; ++k) {
    EXPECT_NEAR(r.dot(B.vectors.col(k)), 0.0, 1e-15);
    EXPECT_NEAR(r.dot(B.vectors.col(k).cwiseProduct(A.vectors.col(0))), 0.0, 1e-15);
    EXPECT_NEAR(r.dot(B.vectors.col(k).cwiseProduct(B.vectors.col(k))), 1.0, 1e-14);
  }
  EXPECT_THROW(quad_project(B, Eigen::Vector4d(1.0, -1.0, 1.0, 1.0), R), PreconditionError);
}

TEST(Sensitivity, PowerUtilityCollapses) {
  const auto m = fixtures::load("trinomial.json");
  for (double g : {0.5, 2.0, 5.0}) {
    const auto u = power_utility(g);
    const auto sol = solve_primal(m, u, 1.0);
    const auto rep = sensitivity(m, u, sol);
    EXPECT_NEAR(rep.a, g, 1e-12 * g);
    EXPECT_NEAR(rep.b, 1.0 / g, 1e-12 / g);
    EXPECT_LE(rep.alpha_hat.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(rep.u2, -g * sol.u1 / sol.x, 1e-12 * std::abs(rep.u2));
    expect_all_pass(rep.residuals);
    expect_all_pass(martingale_audit(m, sol, rep));
  }
}

TEST(Sensitivity, BlendAgreesWithFiniteDifferences) {
  const auto m = fixtures::load("trinomial.json");
  const auto u = blend_utility({{1.0, 0.5}, {0.5, 3.0}});
  const auto sol = solve_primal(m, u, 1.0);
  const auto rep = sensitivity(m, u, sol);
  expect_all_pass(rep.residuals);
  expect_all_pass(martingale_audit(m, sol, rep));
  EXPECT_EQ(rep.dim_A, 1);
  EXPECT_EQ(rep.dim_B, 1);
  const auto fd = fd_oracle(m, u, 1.0, {}, rep.u2);
  EXPECT_NEAR(fd.u2_fd, rep.u2, 1e-7 * std::abs(rep.u2));
  const OutcomeVector XpT = terminal_values(m, rep.Xp), YpT = terminal_values(m, rep.Yp);
  EXPECT_LE((XpT - fd.Xp_fd).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LE((YpT - fd.Yp_fd).cwiseAbs().maxCoeff(), 1e-7 * YpT.cwiseAbs().maxCoeff());
  expect_all_pass(fd.residuals);
}

TEST(Sensitivity, CompleteMarketHasTrivialDualProjection) {
  const auto m = fixtures::load("binomial.json");
  const auto u = blend_utility({{1.0, 1.0}, {1.0, 4.0}});
  const auto sol = solve_primal(m, u, 1.0);
  const auto rep = sensitivity(m, u, sol);
  EXPECT_EQ(rep.dim_A, 3);
  EXPECT_EQ(rep.dim_B, 0);
  EXPECT_EQ(rep.beta_hat.cwiseAbs().maxCoeff(), 0.0);
  // b = E_R[eta] with nothing to project out
  EXPECT_NEAR(rep.b, rep.R.weights().dot(rep.eta), 1e-15);
  expect_all_pass(rep.residuals);
}

TEST(Sensitivity, NonInteriorIsRejected) {
  const auto m = fixtures::load("binomial.json");
  const auto u = log_utility();
  const auto s = evaluate_strategy(m, u, 1.0, zero_strategy(m));
  ASSERT_FALSE(s.interior);
  EXPECT_THROW(sensitivity(m, u, s), PreconditionError);
}

TEST(Sensitivity, FdOraclePreconditions) {
  const auto m = fixtures::load("trinomial.json");
  FdOptions fo;
  fo.ladder = {1e-3, 1e-2};
  EXPECT_THROW(fd_oracle(m, log_utility(), 1.0, fo), PreconditionError);
  fo.ladder = {1e-2};
  EXPECT_THROW(fd_oracle(m, log_utility(), 1.0, fo), PreconditionError);
}

TEST(Sensitivity, NumeraireRanks) {
  const auto m = fixtures::load("trinomial.json");
  const auto u = power_utility(2.0);
  const auto sol = solve_primal(m, u, 1.0);
  const auto ranks = numeraire_rank_report(m, sol);
  ASSERT_EQ(ranks.size(), 1u);
  EXPECT_EQ(ranks[0].rank_prices, 1);
  EXPECT_EQ(ranks[0].columns, 2);
  // X = x + h (S - 1) makes S / X affine in 1 / X, so one column is redundant
  EXPECT_EQ(ranks[0].rank_numeraire, 1);
  EXPECT_TRUE(ranks[0].redundant);
  EXPECT_FALSE(ranks[0].degenerate);
}
