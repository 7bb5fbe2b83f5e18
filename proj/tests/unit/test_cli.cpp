#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "usens/cli.hpp"

using namespace usens;

namespace {

RunConfig config(const std::string& sub, const std::string& model = "", const std::string& utility = "") {
  RunConfig c;
  c.subcommand = sub;
  if (!model.empty()) c.model_path = fixtures::sample(model);
  if (!utility.empty()) c.utility_path = fixtures::sample(utility);
  return c;
}

const ReportJson* residual(const ReportJson& doc, const std::string& name) {
  for (const auto& r : doc["residuals"])
    if (r["name"] == name) return &r;
  return nullptr;
}

}  // namespace

TEST(Cli, SenseBinomialPower) {
  const auto res = run(config("sense", "binomial.json", "power2.json"));
  EXPECT_EQ(res.exit_code, 0) << render_table(res.report);
  EXPECT_EQ(res.report["schema"], 1);
  EXPECT_NEAR(res.report["results"]["sensitivity"]["a"].get<double>(), 2.0, 1e-12);
  for (const char* name : {"reciprocity", "proportionality", "martingale.Xp_Yp", "fd.u2", "dual.conjugacy",
                           "first_order.gain_orthogonality"})
    EXPECT_NE(residual(res.report, name), nullptr) << name;
}

TEST(Cli, SolveArbitrageExitsWithCertificate) {
  const auto res = run(config("solve", "arbitrage.json", "power2.json"));
  EXPECT_EQ(res.exit_code, 3);
  EXPECT_EQ(res.report["error"]["kind"], "arbitrage");
  EXPECT_EQ(res.report["error"]["certificate"]["node"], "r");
}

TEST(Cli, ValidateListsViolations) {
  const auto bad = run(config("validate", "invalid.json"));
  EXPECT_EQ(bad.exit_code, 3);
  EXPECT_GE(bad.report["results"]["violations"].size(), 3u);
  const auto good = run(config("validate", "lattice.json"));
  EXPECT_EQ(good.exit_code, 0);
  EXPECT_EQ(good.report["results"]["leaves"], 4);
}

TEST(Cli, AtlasExample4) {
  auto c = config("atlas");
  c.example = 4;
  const auto res = run(c);
  EXPECT_EQ(res.exit_code, 0);
  const auto xp = res.report["results"]["Xp"];
  EXPECT_NEAR(xp[0].get<double>(), -1.0 / 6.0, 1e-9);
  EXPECT_NEAR(xp[3].get<double>(), 7.0 / 3.0, 1e-9);
}

TEST(Cli, AtlasLadderHasExponentFooter) {
  auto c = config("atlas");
  c.example = 1;
  c.levels = {10, 20, 40};
  const auto res = run(c);
  const auto text = render_table(res.report);
  EXPECT_NE(text.find("exponent: "), std::string::npos);
  EXPECT_NE(text.find("div1"), std::string::npos);
}

TEST(Cli, ToleranceOverrideFailsAndPropagates) {
  // the FD comparison is never exactly zero, so a 1e-300 tolerance must fail it
  auto c = config("sense", "trinomial.json", "blend.json");
  c.tolerances = {{"fd.u2", 1e-300}};
  const auto res = run(c);
  EXPECT_EQ(res.exit_code, 2);
  const auto* r = residual(res.report, "fd.u2");
  ASSERT_NE(r, nullptr);
  EXPECT_FALSE((*r)["pass"].get<bool>());
  EXPECT_NE(render_table(res.report).find("FAIL"), std::string::npos);
  c.tolerances = {{"no.such.residual", 1.0}};
  EXPECT_EQ(run(c).exit_code, 3);
  c.tolerances = {{"fd.u2", -1.0}};
  EXPECT_EQ(run(c).exit_code, 3);
}

TEST(Cli, EmptyReportRendersHeaderOnly) {
  ReportJson doc = new_report("none");
  const auto text = render_table(doc);
  EXPECT_EQ(text.substr(0, text.find('\n')), "residual  value  tolerance  status");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
}

TEST(Cli, ReportsAreByteIdentical) {
  auto c = config("sense", "lattice.json", "blend.json");
  c.report_path = ::testing::TempDir() + "usens_a.json";
  run(c);
  c.report_path = ::testing::TempDir() + "usens_b.json";
  run(c);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto a = slurp(::testing::TempDir() + "usens_a.json"), b = slurp(::testing::TempDir() + "usens_b.json");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(Cli, ConfigValidation) {
  auto c = config("solve", "binomial.json", "power2.json");
  c.grid = {2.0, 1.0};
  EXPECT_EQ(run(c).exit_code, 3);
  c.grid = {};
  c.capital = -1.0;
  EXPECT_EQ(run(c).exit_code, 3);
  EXPECT_THROW(parse_tolerance("abc"), PreconditionError);
  EXPECT_THROW(parse_tolerance("a=1x"), PreconditionError);
  EXPECT_EQ(parse_tolerance("fd.u2=1e-3").second, 1e-3);
}

TEST(Cli, AuditAndValueCurve) {
  auto c = config("audit", "trinomial.json", "blend.json");
  c.grid = {0.5, 1.0, 2.0};
  const auto res = run(c);
  EXPECT_EQ(res.exit_code, 0) << render_table(res.report);
  EXPECT_NE(residual(res.report, "utility.marginal_ratio_bounds"), nullptr);
  EXPECT_NE(residual(res.report, "value_curve.increasing"), nullptr);
}
