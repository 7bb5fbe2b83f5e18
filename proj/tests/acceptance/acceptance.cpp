// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "usens/usens.hpp"

using namespace usens;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// criteria 1, 2 and 10 share the random battery

struct BatteryStats {
  int instances = 0;
  int failed = 0;
  std::string first_failure;
  double worst_alpha_power = 0.0;  ///< max |alpha_hat| over power utilities
  double worst_a_power = 0.0;      ///< max |a - gamma|
  std::string report;              ///< serialized battery report
};

BatteryStats run_battery(std::uint64_t seed, int models) {
  std::mt19937_64 rng(seed);
  BatteryStats st;
  ReportJson doc = new_report("battery");
  doc["inputs"]["seed"] = seed;
  doc["inputs"]["models"] = models;
  ReportJson items = ReportJson::array();
  for (int k = 0; k < models; ++k) {
    const auto spec = random_tree_spec(rng);
    const auto model = MarketTree::build(spec);
    std::vector<RandomUtility> utils;
    for (double g : {0.5, 1.0, 2.0, 5.0}) utils.push_back({"power", g, {}});
    utils.push_back(random_blend(rng));
    for (const auto& ru : utils) {
      const auto u = ru.make();
      ResidualTable t;
      ReportJson item;
      item["model"] = k;
      item["utility"] = u.name();
      try {
        const auto sol = solve_primal(model, u, 1.0);
        t.append(first_order_audit(sol, model, u));
        t.append(duality_audit(sol, model, u));
        const auto rep = sensitivity(model, u, sol);
        t.append(rep.residuals);
        t.append(martingale_audit(model, sol, rep));
        item["a"] = rep.a;
        item["b"] = rep.b;
        item["u2"] = rep.u2;
        if (ru.kind == "power") {
          st.worst_alpha_power = std::max(st.worst_alpha_power, rep.alpha_hat.cwiseAbs().maxCoeff());
          st.worst_a_power = std::max(st.worst_a_power, std::abs(rep.a - ru.gamma));
        }
      } catch (const std::exception& e) {
        t.add_flag("exception", 0.0, false);
        item["error"] = e.what();
      }
      ++st.instances;
      if (!t.all_pass()) {
        ++st.failed;
        if (st.first_failure.empty()) {
          st.first_failure = "model " + std::to_string(k) + " " + u.name() + ":";
          for (const auto& r : t.rows())
            if (!r.pass) st.first_failure += " " + r.name + "=" + fmt("%.3e", r.value);
        }
      }
      item["residuals"] = residuals_to_json(t);
      items.push_back(std::move(item));
    }
  }
  doc["results"]["instances"] = items;
  st.report = doc.dump(1);
  return st;
}

BatteryStats g_battery;
double g_battery_seconds = 0.0;

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  g_battery = run_battery(kSeed, 200);
  g_battery_seconds = seconds_since(t0);
  Outcome o;
  o.pass = g_battery.failed == 0 && g_battery_seconds <= 60.0;
  o.detail = std::to_string(g_battery.instances) + " instances, " + std::to_string(g_battery.failed) + " failing, " +
             fmt("%.1f s", g_battery_seconds) + " (limit 60 s)";
  if (!g_battery.first_failure.empty()) o.detail += "; first failure " + g_battery.first_failure;
  return o;
}

Outcome criterion2() {
  // FD cross-check of u'' = -gamma u'(x) / x on every power instance of the battery
  std::mt19937_64 rng(kSeed);
  double worst_fd = 0.0, worst_closed = 0.0;
  int checks = 0;
  std::string failure;
  for (int k = 0; k < 200; ++k) {
    const auto model = MarketTree::build(random_tree_spec(rng));
    random_blend(rng);  // keep the stream aligned with the battery
    for (double g : {0.5, 1.0, 2.0, 5.0}) {
      const auto u = power_utility(g);
      try {
        const auto sol = solve_primal(model, u, 1.0);
        const double u2 = -g * sol.u1 / sol.x;
        const auto rep = sensitivity(model, u, sol);
        const auto fd = fd_oracle(model, u, 1.0, {}, rep.u2);
        worst_fd = std::max(worst_fd, std::abs(fd.u2_fd - u2) / std::abs(u2));
        worst_closed = std::max(worst_closed, std::abs(rep.u2 - u2) / std::abs(u2));
        ++checks;
      } catch (const std::exception& e) {
        if (failure.empty()) failure = "model " + std::to_string(k) + " gamma " + fmt("%g", g) + ": " + e.what();
        worst_fd = INFINITY;
      }
    }
  }
  Outcome o;
  o.pass = g_battery.worst_alpha_power <= 1e-12 && g_battery.worst_a_power <= 1e-12 && worst_fd <= 1e-5 &&
           worst_closed <= 1e-12;
  o.detail = "max|alpha_hat| " + fmt("%.2e", g_battery.worst_alpha_power) + ", max|a - gamma| " +
             fmt("%.2e", g_battery.worst_a_power) + ", FD rel err " + fmt("%.2e", worst_fd) + " over " +
             std::to_string(checks) + " solves";
  if (!failure.empty()) o.detail += "; " + failure;
  return o;
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(kSeed + 3);
  RandomModelOptions mo;
  mo.force_incomplete = true;
  double worst_u2 = 0.0, worst_xp = 0.0;
  std::string failure;
  for (int k = 0; k < 20; ++k) {
    const auto model = MarketTree::build(random_tree_spec(rng, mo));
    const auto ru = random_blend(rng);
    const auto u = ru.make();
    try {
      const auto sol = solve_primal(model, u, 1.0);
      const auto rep = sensitivity(model, u, sol);
      const auto fd = fd_oracle(model, u, 1.0, {}, rep.u2);
      worst_u2 = std::max(worst_u2, std::abs(rep.u2 - fd.u2_fd) / std::abs(rep.u2));
      worst_xp = std::max(worst_xp, (terminal_values(model, rep.Xp) - fd.Xp_fd).cwiseAbs().maxCoeff());
    } catch (const std::exception& e) {
      if (failure.empty()) failure = "instance " + std::to_string(k) + ": " + e.what();
      worst_u2 = INFINITY;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_u2 <= 1e-4 && worst_xp <= 1e-3 && secs <= 120.0;
  o.detail = "20 incomplete blend instances, u'' rel err " + fmt("%.2e", worst_u2) + ", X' err " +
             fmt("%.2e", worst_xp) + ", " + fmt("%.1f s", secs) + " (limit 120 s)";
  if (!failure.empty()) o.detail += "; " + failure;
  return o;
}

Outcome criterion4() {
  using Q = boost::rational<long long>;
  // compare against Q values only: mixed rational/int == recurses under C++20
  // rational oracle: one-dimensional projections have c = -E[w v] / E[w v^2]
  const Q r(1, 3);
  const Q zeta[3] = {1, 2, 2}, eta[3] = {1, Q(1, 2), Q(1, 2)};
  const Q va[3] = {1, -1, 0}, vb[3] = {1, 1, -2};
  auto project = [&](const Q* w, const Q* v, Q* opt) {
    Q num = 0, den = 0;
    for (int i = 0; i < 3; ++i) {
      num += r * w[i] * v[i];
      den += r * w[i] * v[i] * v[i];
    }
    const Q c = -num / den;
    Q val = 0;
    for (int i = 0; i < 3; ++i) {
      opt[i] = c * v[i];
      val += r * w[i] * (1 + opt[i]) * (1 + opt[i]);
    }
    return val;
  };
  Q alpha[3], beta[3];
  const Q a = project(zeta, va, alpha), b = project(eta, vb, beta);
  bool exact = a == Q(14, 9) && b == Q(9, 14) && a * b == Q(1) && alpha[0] == Q(1, 3) && alpha[1] == Q(-1, 3) &&
               alpha[2] == Q(0) && beta[0] == Q(-1, 7) && beta[1] == Q(-1, 7) && beta[2] == Q(2, 7);
  for (int i = 0; i < 3; ++i) exact = exact && zeta[i] * (1 + alpha[i]) == a * (1 + beta[i]);

  RiskMeasure R;
  R.measure.leaf_prob = Eigen::Vector3d::Constant(1.0 / 3.0);
  SubspaceBasis A;
  A.vectors = Eigen::Vector3d(1.0, -1.0, 0.0);
  A.metric = R;
  const auto B = orthocomplement(A, R);
  const auto pa = quad_project(A, Eigen::Vector3d(1.0, 2.0, 2.0), R);
  const auto pb = quad_project(B, Eigen::Vector3d(1.0, 0.5, 0.5), R);
  auto d = [](const Q& q) { return boost::rational_cast<double>(q); };
  double err = std::max(std::abs(pa.value - d(a)), std::abs(pb.value - d(b)));
  for (int i = 0; i < 3; ++i) {
    err = std::max(err, std::abs(pa.optimizer[i] - d(alpha[i])));
    err = std::max(err, std::abs(pb.optimizer[i] - d(beta[i])));
  }
  Outcome o;
  o.pass = exact && B.dim() == 1 && err <= 1e-15;
  o.detail = std::string("rational identities ") + (exact ? "exact" : "broken") + ", engine vs rational max err " +
             fmt("%.1e", err);
  return o;
}

Outcome criterion5() {
  const auto E = example4();
  Outcome o;
  o.pass = E.max_error <= 1e-9 && E.prob_negative > 0.0 && E.residuals.all_pass();
  o.detail = "X' = (" + fmt("%.12f", E.Xp[0]) + ", " + fmt("%.1e", E.Xp[1]) + ", " + fmt("%.12f", E.Xp[2]) + ", " +
             fmt("%.12f", E.Xp[3]) + "), max err " + fmt("%.1e", E.max_error) + ", P[X' < 0] = " +
             fmt("%.4f", E.prob_negative);
  if (!E.residuals.all_pass()) o.detail += ", residual failure";
  return o;
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  TruncationLadder lad{"div1", {10, 20, 40, 80}, {}};
  bool ok = true;
  for (int N : lad.N_values) {
    const auto L = example1(N);
    ok = ok && L.model_ok;
    lad.values.push_back(L.div1);
  }
  const auto d = divergence_report(lad);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && d.strictly_increasing && std::abs(d.exponent - 3.0) <= 0.2 && secs <= 10.0;
  o.detail = "div1 = " + fmt("%.1f", d.values[0]) + ", " + fmt("%.1f", d.values[1]) + ", " + fmt("%.1f", d.values[2]) +
             ", " + fmt("%.1f", d.values[3]) + "; slope " + fmt("%.3f", d.exponent) + ", " + fmt("%.2f s", secs);
  return o;
}

Outcome criterion7() {
  TruncationLadder lad{"div2", {8, 16, 24, 32}, {}};
  double worst_bh = 0.0;
  bool below = true, ok = true;
  for (int N : lad.N_values) {
    const auto L = example2(N);
    double k2 = 0.0;
    for (int k = 2; k <= N; ++k) k2 += double(k) * k;
    worst_bh = std::max(worst_bh, L.buy_hold_residual);
    below = below && L.div2_at_1 <= -k2;
    ok = ok && L.model_ok;
    lad.values.push_back(L.div2_at_1);
  }
  const auto d = divergence_report(lad);
  Outcome o;
  o.pass = ok && worst_bh <= 1e-10 && d.strictly_decreasing && d.accelerating && below;
  o.detail = "buy-and-hold residual " + fmt("%.1e", worst_bh) + "; div2(1) = " + fmt("%.1f", d.values[0]) + ", " +
             fmt("%.1f", d.values[1]) + ", " + fmt("%.1f", d.values[2]) + ", " + fmt("%.1f", d.values[3]) +
             (d.strictly_decreasing && d.accelerating ? " (decreasing, accelerating" : " (not monotone") +
             (below ? ", below -sum k^2)" : ", above -sum k^2)");
  return o;
}

Outcome criterion8() {
  const auto t0 = std::chrono::steady_clock::now();
  double low_plus = INFINITY, high_minus = -INFINITY, split = INFINITY;
  int points = 0;
  bool ok = true;
  for (int N : {14, 16, 18, 20}) {
    const auto L = example3(N);
    ok = ok && L.model_ok && !L.eps.empty();
    for (std::size_t i = 0; i < L.eps.size(); ++i) {
      low_plus = std::min(low_plus, (L.q_plus[i] - L.f_half) / L.gap);
      high_minus = std::max(high_minus, (L.q_minus[i] - L.f_one) / L.gap);
      split = std::min(split, (L.q_plus[i] - L.q_minus[i]) / L.gap);
      ++points;
    }
  }
  std::string skipped;
  for (int N : {10, 12})
    if (example3(N).eps.empty()) skipped += (skipped.empty() ? "" : ", ") + std::to_string(N);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ok && low_plus >= -0.05 && high_minus <= 0.05 && split >= 0.9 && secs <= 60.0;
  o.detail = "N = 14..20, " + std::to_string(points) + " window points: min (q+ - f(1/2))/gap " +
             fmt("%.4f", low_plus) + ", max (q- - f(1))/gap " + fmt("%.4f", high_minus) + ", min split " +
             fmt("%.4f", split) + ", " + fmt("%.2f s", secs);
  if (!skipped.empty()) o.detail += "; N = " + skipped + " not evaluable (empty window)";
  return o;
}

Outcome criterion9() {
  std::vector<UtilitySpec> certified;
  for (double g : {0.5, 1.0, 2.0, 5.0}) certified.push_back(power_utility(g));
  std::mt19937_64 rng(kSeed + 9);
  for (int k = 0; k < 10; ++k) certified.push_back(random_blend(rng).make());
  const auto E = example4();
  certified.push_back(E.utility->spec);

  const auto grid = log_grid(1e-2, 1e2, 60);
  int checked = 0, failures = 0;
  for (const auto& u : certified) {
    const auto scan = corridor_scan(u, grid);
    if (!scan.ok()) continue;  // only corridor-certified utilities
    for (double frac : {0.1, 0.5, 0.9}) {
      const double a = std::exp(frac / u.corridor().c2);  // b1 = 1 - frac > 0
      const auto r = marginal_ratio_check(u, a, grid);
      ++checked;
      if (!r.ok()) ++failures;
    }
  }

  // order-2 check: halving h divides the second-difference error by ~4
  double worst_ratio_dev = 0.0;
  std::uniform_real_distribution<double> Z(0.5, 2.0), H(-0.3, 0.3);
  for (int k = 0; k < 5; ++k) {
    const auto u = certified[static_cast<std::size_t>(4 + k)];
    OutcomeVector zeta(4), eta(4);
    for (int i = 0; i < 4; ++i) {
      zeta[i] = Z(rng);
      eta[i] = H(rng);
    }
    const Measure P{Eigen::Vector4d(0.1, 0.2, 0.3, 0.4)};
    const auto e1 = expansion_probe(u, zeta, eta, P, {0.0, 0.5}, 2e-2);
    const auto e2 = expansion_probe(u, zeta, eta, P, {0.0, 0.5}, 1e-2);
    for (std::size_t i = 0; i < e1.samples.size(); ++i) {
      const double r = std::abs(e1.samples[i].fd2 - e1.samples[i].w2) / std::abs(e2.samples[i].fd2 - e2.samples[i].w2);
      worst_ratio_dev = std::max(worst_ratio_dev, std::abs(r - 4.0));
    }
  }
  Outcome o;
  o.pass = failures == 0 && checked > 0 && worst_ratio_dev <= 0.25;
  o.detail = std::to_string(checked) + " (utility, a) pairs on a 60-point grid, " + std::to_string(failures) +
             " bound failures; FD error ratio 4 +- " + fmt("%.1e", worst_ratio_dev);
  return o;
}

Outcome criterion10() {
  const auto again = run_battery(kSeed, 200);
  Outcome o;
  o.pass = !g_battery.report.empty() && again.report == g_battery.report;
  o.detail = std::to_string(again.report.size()) + " report bytes, " +
             (o.pass ? "byte-identical across runs" : "reports differ");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"identity battery on 200 random models", criterion1},
      {"constant-RRA collapse", criterion2},
      {"FD oracle on incomplete blend instances", criterion3},
      {"three-leaf projection fixture", criterion4},
      {"negative derivative wealth table", criterion5},
      {"cubic truncation growth of div1", criterion6},
      {"div2 decreasing without bound", criterion7},
      {"one-sided second derivative gap", criterion8},
      {"marginal-ratio bounds and expansion order", criterion9},
      {"deterministic reports", criterion10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] criterion %zu: %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
