#ifndef USENS_CLI_HPP
#define USENS_CLI_HPP

// Pipeline behind the command-line tool. Exit codes: 0 all asserted
// invariants pass, 2 an invariant fails, 3 model or utility error (including
// arbitrage and non-interior regimes), 4 solver non-convergence.

#include <algorithm>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "usens/atlas.hpp"
#include "usens/model_io.hpp"
#include "usens/primal_dual.hpp"
#include "usens/report.hpp"
#include "usens/sensitivity.hpp"
#include "usens/utility_io.hpp"

namespace usens {

enum ExitCode : int { kExitPass = 0, kExitInvariant = 2, kExitModel = 3, kExitConvergence = 4 };

struct RunConfig {
  std::string subcommand;  ///< validate | solve | sense | audit | atlas
  std::string model_path, utility_path;
  double capital = 1.0;
  std::vector<double> grid;
  std::vector<double> fd_ladder;  ///< relative steps; empty means the oracle default
  std::vector<int> levels;        ///< atlas truncation levels; empty means the example default
  int example = 0;
  std::vector<std::pair<std::string, double>> tolerances;
  std::string report_path;
};

struct RunResult {
  int exit_code = kExitPass;
  ReportJson report;
};

/// Parses `name=value` tolerance overrides.
inline std::pair<std::string, double> parse_tolerance(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw PreconditionError("tolerance override must be name=value: " + s);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s.substr(eq + 1), &used);
  } catch (const std::exception&) {
    throw PreconditionError("bad tolerance value in " + s);
  }
  if (used != s.size() - eq - 1) throw PreconditionError("bad tolerance value in " + s);
  return {s.substr(0, eq), v};
}

inline void check_config(const RunConfig& c) {
  static const char* subs[] = {"validate", "solve", "sense", "audit", "atlas"};
  if (std::find(std::begin(subs), std::end(subs), c.subcommand) == std::end(subs))
    throw PreconditionError("unknown subcommand '" + c.subcommand + "'");
  for (const auto& [name, v] : c.tolerances)
    if (!(v > 0.0)) throw PreconditionError("tolerance for " + name + " must be positive");
  for (std::size_t i = 0; i < c.grid.size(); ++i)
    if (!(c.grid[i] > 0.0) || (i > 0 && !(c.grid[i] > c.grid[i - 1])))
      throw PreconditionError("grid values must be positive and strictly increasing");
  if (c.subcommand != "validate" && c.subcommand != "atlas" && !(c.capital > 0.0))
    throw PreconditionError("capital must be positive");
  for (double h : c.fd_ladder)
    if (!(h > 0.0 && h < 1.0)) throw PreconditionError("fd ladder steps must lie in (0, 1)");
  if (c.subcommand == "atlas" && (c.example < 1 || c.example > 4)) throw PreconditionError("--example must be 1, 2, 3 or 4");
  if ((c.subcommand == "validate" || c.subcommand == "solve" || c.subcommand == "sense" || c.subcommand == "audit") &&
      c.model_path.empty())
    throw PreconditionError("--model is required");
  if ((c.subcommand == "solve" || c.subcommand == "sense" || c.subcommand == "audit") && c.utility_path.empty())
    throw PreconditionError("--utility is required");
}

namespace detail {

inline ReportJson solution_json(const MarketTree& model, const PrimalDualSolution& s) {
  ReportJson j;
  j["x"] = s.x;
  j["y"] = s.y;
  j["u"] = s.u;
  j["u1"] = s.u1;
  j["v"] = s.v;
  j["v1"] = s.v1;
  j["interior"] = s.interior;
  j["iterations"] = s.iterations;
  j["gradient_norm"] = s.gradient_norm;
  j["first_order_residual"] = s.first_order_residual;
  ReportJson hold = ReportJson::object();
  for (int n : model.trading_nodes()) hold[model.node_id(n)] = vector_json(s.strategy.holdings.row(n).transpose());
  j["holdings"] = hold;
  ReportJson leaves = ReportJson::array();
  const OutcomeVector XT = s.XT(model), YT = s.YT(model);
  for (int l = 0; l < model.num_leaves(); ++l) {
    ReportJson e;
    e["leaf"] = model.node_id(model.leaf_node(l));
    e["X_T"] = XT[l];
    e["Y_T"] = YT[l];
    leaves.push_back(std::move(e));
  }
  j["terminal"] = leaves;
  return j;
}

inline void run_validate(const RunConfig& c, ReportJson& doc, ResidualTable& t) {
  const TreeSpec spec = load_tree_spec(c.model_path);
  doc["inputs"]["model"] = tree_spec_to_json(spec);
  const auto rep = validate_tree(spec);
  ReportJson viol = ReportJson::array();
  for (const auto& v : rep.violations) viol.push_back({{"node", v.node}, {"message", v.message}});
  doc["results"]["violations"] = viol;
  if (!rep.ok()) throw ModelError("invalid market tree (" + std::to_string(rep.violations.size()) + " violations)");
  const auto model = MarketTree::build(spec);
  auto mm = find_martingale_measure(model);
  if (auto* cert = std::get_if<ArbitrageCertificate>(&mm)) throw ArbitrageError(*cert);
  const auto& q = std::get<Measure>(mm);
  doc["results"]["nodes"] = model.num_nodes();
  doc["results"]["leaves"] = model.num_leaves();
  doc["results"]["assets"] = model.num_assets();
  doc["results"]["horizon"] = model.horizon();
  const Eigen::Index rank =
      model.num_leaves() > 1 ? Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(gain_span_matrix(model)).rank() : 0;
  doc["results"]["gain_rank"] = rank;
  doc["results"]["complete"] = rank == model.num_leaves() - 1;
  doc["results"]["martingale_measure"] = vector_json(q.leaf_prob);
  const Eigen::VectorXd tq = transition_probabilities(q, model);
  double worst = 0.0;
  for (int j = 0; j < model.num_assets(); ++j)
    worst = std::max(worst, martingale_residual(model, tq, model.price_matrix().col(j)) /
                                std::max(1.0, model.price_matrix().col(j).cwiseAbs().maxCoeff()));
  t.add("model.martingale_measure", worst, 1e-10);
  t.add_flag("model.measure_equivalent", q.leaf_prob.minCoeff(), q.equivalent());
}

struct Loaded {
  MarketTree model;
  LoadedUtility utility;
};

inline Loaded load_inputs(const RunConfig& c, ReportJson& doc) {
  const TreeSpec spec = load_tree_spec(c.model_path);
  doc["inputs"]["model"] = tree_spec_to_json(spec);
  const auto udoc = load_json_file(c.utility_path, "utility");
  doc["inputs"]["utility"] = udoc;
  doc["inputs"]["capital"] = c.capital;
  auto model = MarketTree::build(spec);
  return {std::move(model), utility_from_json(udoc)};
}

inline PrimalDualSolution run_solve(const RunConfig& c, const Loaded& in, ReportJson& doc, ResidualTable& t) {
  const auto& u = in.utility.spec;
  const auto sol = solve_primal(in.model, u, c.capital);
  doc["results"]["solution"] = solution_json(in.model, sol);
  t.append(first_order_audit(sol, in.model, u));
  t.append(duality_audit(sol, in.model, u));
  if (!c.grid.empty()) {
    doc["inputs"]["grid"] = c.grid;
    const auto vc = value_curve(in.model, u, c.grid);
    LadderTable lt{"value curve", {"x", "u(x)", "u'(x)"}, {}, std::nullopt};
    for (const auto& s : vc.samples) lt.rows.push_back({s.x, s.u, s.u1});
    doc["ladders"].push_back(ladder_json(lt));
    t.add_flag("value_curve.increasing", static_cast<double>(vc.samples.size()), vc.u_increasing);
    t.add_flag("value_curve.marginal_decreasing", static_cast<double>(vc.samples.size()), vc.u1_decreasing);
  }
  return sol;
}

inline void run_sense(const RunConfig& c, const Loaded& in, ReportJson& doc, ResidualTable& t) {
  const auto& u = in.utility.spec;
  const auto sol = run_solve(c, in, doc, t);
  const auto rep = sensitivity(in.model, u, sol);
  t.append(rep.residuals);
  t.append(martingale_audit(in.model, sol, rep));
  auto& r = doc["results"]["sensitivity"];
  r["a"] = rep.a;
  r["b"] = rep.b;
  r["u2"] = rep.u2;
  r["v2"] = rep.v2;
  r["dim_A"] = rep.dim_A;
  r["dim_B"] = rep.dim_B;
  r["zeta"] = vector_json(rep.zeta);
  r["eta"] = vector_json(rep.eta);
  r["alpha_hat"] = vector_json(rep.alpha_hat);
  r["beta_hat"] = vector_json(rep.beta_hat);
  const OutcomeVector XpT = terminal_values(in.model, rep.Xp), YpT = terminal_values(in.model, rep.Yp);
  r["Xp_T"] = vector_json(XpT);
  r["Yp_T"] = vector_json(YpT);
  ReportJson ranks = ReportJson::array();
  for (const auto& nr : numeraire_rank_report(in.model, sol))
    ranks.push_back({{"node", nr.node},
                     {"rank_prices", nr.rank_prices},
                     {"rank_numeraire", nr.rank_numeraire},
                     {"columns", nr.columns},
                     {"redundant", nr.redundant},
                     {"degenerate", nr.degenerate}});
  r["numeraire_ranks"] = ranks;

  FdOptions fo;
  if (!c.fd_ladder.empty()) fo.ladder = c.fd_ladder;
  doc["inputs"]["fd_ladder"] = fo.ladder;
  const auto fd = fd_oracle(in.model, u, c.capital, fo, rep.u2);
  auto& f = doc["results"]["fd_oracle"];
  f["u2_fd"] = fd.u2_fd;
  f["u2_err"] = fd.u2_err;
  f["richardson"] = fd.table;
  f["Xp_fd"] = vector_json(fd.Xp_fd);
  f["Yp_fd"] = vector_json(fd.Yp_fd);
  t.add("fd.u2", std::abs(rep.u2 - fd.u2_fd) / std::abs(rep.u2), 1e-4);
  t.add("fd.Xp", (XpT - fd.Xp_fd).cwiseAbs().maxCoeff(), 1e-3);
  t.add("fd.Yp", (YpT - fd.Yp_fd).cwiseAbs().maxCoeff() / std::max(1.0, YpT.cwiseAbs().maxCoeff()), 1e-3);
  t.append(fd.residuals);
  LadderTable lt{"finite-difference expansion", {"eps", "|u(x+eps) - quadratic| / eps^2"}, {}, std::nullopt};
  for (const auto& [e, q] : fd.expansion) lt.rows.push_back({e, q});
  doc["ladders"].push_back(ladder_json(lt));
}

inline void run_audit(const RunConfig& c, const Loaded& in, ReportJson& doc, ResidualTable& t) {
  const auto& u = in.utility.spec;
  const Corridor cor = u.corridor();
  const double lo = std::max(u.domain().lo, 1e-2 * c.capital), hi = std::min(u.domain().hi, 1e2 * c.capital);
  const auto grid = log_grid(lo, hi, 60);
  const auto scan = corridor_scan(u, grid);
  auto& r = doc["results"]["utility"];
  r["name"] = u.name();
  r["corridor"] = {cor.c1, cor.c2};
  r["min_rra"] = scan.min_rra;
  r["max_rra"] = scan.max_rra;
  t.add_flag("utility.corridor", static_cast<double>(scan.violations.size()), scan.ok());
  if (in.utility.constrained) {
    r["theta"] = in.utility.constrained->theta;
    t.add("utility.anchor_residual", in.utility.constrained->max_anchor_residual, 1e-10);
    t.add("utility.moment_residual", std::abs(in.utility.constrained->moment_residual), 1e-10);
  }
  // a with b1 = 1 - c2 ln a = 1/2
  if (std::isfinite(cor.c2)) {
    const double a = std::exp(0.5 / cor.c2);
    const auto mr = marginal_ratio_check(u, a, grid);
    r["marginal_ratio_a"] = a;
    t.add_flag("utility.marginal_ratio_bounds", std::min(mr.min_lower_slack, mr.min_upper_slack), mr.ok());
  }
  const auto el = elasticity_probe(u, grid);
  double emax = 0.0;
  for (const auto& [x, e] : el.ratios) emax = std::max(emax, e);
  r["elasticity_max"] = emax;
  t.add_flag("utility.asymptotic_elasticity", emax, !el.flagged);
  run_solve(c, in, doc, t);
}

inline void run_atlas(const RunConfig& c, ReportJson& doc, ResidualTable& t) {
  doc["inputs"]["example"] = c.example;
  auto& r = doc["results"];
  auto levels = c.levels;
  auto name = [](const char* ex, int N, const char* what) {
    return std::string(ex) + ".N" + std::to_string(N) + "." + what;
  };
  if (c.example == 1) {
    if (levels.empty()) levels = {10, 20, 40, 80};
    doc["inputs"]["levels"] = levels;
    TruncationLadder lad{"div1", {}, {}};
    LadderTable lt{"example 1: div1(N) = E[V''(xi) xi^2]", {"N", "div1", "sum k^2", "anchor residual", "min yV''/|V'|"},
                   {}, std::nullopt};
    for (int N : levels) {
      const auto L = example1(N);
      lad.N_values.push_back(N);
      lad.values.push_back(L.div1);
      lt.rows.push_back({double(N), L.div1, L.tail_k2, L.anchor_residual, L.min_c2_ratio});
      t.add_flag(name("example1", N, "model"), L.mass_half, L.model_ok);
      t.add(name("example1", N, "anchor"), L.anchor_residual, 1e-12);
    }
    if (levels.size() >= 3) {
      const auto d = divergence_report(lad);
      lt.exponent = d.exponent;
      r["exponent"] = d.exponent;
      t.add_flag("example1.strictly_increasing", d.values.back(), d.strictly_increasing);
      t.add("example1.slope_deviation", std::abs(d.exponent - 3.0), 0.2);
    }
    doc["ladders"].push_back(ladder_json(lt));
  } else if (c.example == 2) {
    if (levels.empty()) levels = {8, 16, 24, 32};
    doc["inputs"]["levels"] = levels;
    TruncationLadder lad{"div2", {}, {}};
    LadderTable lt{"example 2: div2(N, a = 1) = E[U''(S) S^2]",
                   {"N", "div2(1)", "-sum k^2", "buy-hold residual", "max RRA", "solver a"}, {}, std::nullopt};
    for (int N : levels) {
      const auto L = example2(N);
      double k2 = 0.0;
      for (int k = 2; k <= N; ++k) k2 += double(k) * k;
      lad.N_values.push_back(N);
      lad.values.push_back(L.div2_at_1);
      lt.rows.push_back({double(N), L.div2_at_1, -k2, L.buy_hold_residual, L.max_rra, L.solver_a});
      t.add_flag(name("example2", N, "model"), L.p_half, L.model_ok);
      t.add(name("example2", N, "buy_and_hold"), L.buy_hold_residual, 1e-10);
      t.add_flag(name("example2", N, "tail_bound"), L.div2_at_1, L.div2_at_1 <= -k2);
    }
    if (levels.size() >= 3) {
      const auto d = divergence_report(lad);
      lt.exponent = d.exponent;
      r["exponent"] = d.exponent;
      t.add_flag("example2.strictly_decreasing", d.values.back(), d.strictly_decreasing);
      t.add_flag("example2.accelerating", d.values.back(), d.accelerating);
    }
    doc["ladders"].push_back(ladder_json(lt));
  } else if (c.example == 3) {
    if (levels.empty()) levels = {14, 16, 18, 20};
    doc["inputs"]["levels"] = levels;
    ReportJson not_eval = ReportJson::array();
    for (int N : levels) {
      const auto L = example3(N);
      t.add_flag(name("example3", N, "model"), L.p_two, L.model_ok);
      t.add(name("example3", N, "moment"), std::abs(L.moment_residual), 1e-10);
      t.add(name("example3", N, "buy_and_hold"), L.base_residual, 1e-8);
      if (L.eps.empty()) {
        not_eval.push_back(N);
        continue;
      }
      LadderTable lt{"example 3 (N = " + std::to_string(N) + "): one-sided quotients",
                     {"eps", "(q+ - f(1/2)) / gap", "(q- - f(1)) / gap", "(q+ - q-) / gap"}, {}, std::nullopt};
      double low_plus = 1e300, high_minus = -1e300, split = 1e300;
      for (std::size_t i = 0; i < L.eps.size(); ++i) {
        const double dp = (L.q_plus[i] - L.f_half) / L.gap, dm = (L.q_minus[i] - L.f_one) / L.gap;
        const double sp = (L.q_plus[i] - L.q_minus[i]) / L.gap;
        lt.rows.push_back({L.eps[i], dp, dm, sp});
        low_plus = std::min(low_plus, dp);
        high_minus = std::max(high_minus, dm);
        split = std::min(split, sp);
      }
      t.add_flag(name("example3", N, "q_plus_lower"), low_plus, low_plus >= -0.05);
      t.add_flag(name("example3", N, "q_minus_upper"), high_minus, high_minus <= 0.05);
      t.add_flag(name("example3", N, "split"), split, split >= 0.9);
      doc["ladders"].push_back(ladder_json(lt));
    }
    r["not_evaluable"] = not_eval;
  } else {
    const auto E = example4();
    r["support"] = E.support;
    r["prob"] = E.prob;
    r["theta"] = E.theta;
    r["Xp"] = E.Xp;
    r["expected"] = E.expected;
    r["prob_negative"] = E.prob_negative;
    LadderTable lt{"example 4: X'_1(1)", {"S", "P", "X'", "expected"}, {}, std::nullopt};
    for (std::size_t i = 0; i < E.support.size(); ++i) lt.rows.push_back({E.support[i], E.prob[i], E.Xp[i], E.expected[i]});
    doc["ladders"].push_back(ladder_json(lt));
    t.append(E.residuals);
  }
}

inline void record_error(ReportJson& doc, const char* kind, const std::string& msg) {
  doc["error"] = {{"kind", kind}, {"message", msg}};
}

}  // namespace detail

/// Runs one subcommand, fills the report and writes it when a path is set.
inline RunResult run(const RunConfig& c) {
  RunResult res;
  ReportJson& doc = res.report;
  doc = new_report(c.subcommand);
  ResidualTable t;
  try {
    check_config(c);
    if (c.subcommand == "validate") {
      detail::run_validate(c, doc, t);
    } else if (c.subcommand == "atlas") {
      detail::run_atlas(c, doc, t);
    } else {
      const auto in = detail::load_inputs(c, doc);
      if (c.subcommand == "solve") detail::run_solve(c, in, doc, t);
      else if (c.subcommand == "sense") detail::run_sense(c, in, doc, t);
      else detail::run_audit(c, in, doc, t);
    }
    for (const auto& [name, v] : c.tolerances) {
      if (!t.find(name)) throw PreconditionError("tolerance override names unknown residual " + name);
      t.override_tolerance(name, v);
    }
    res.exit_code = t.all_pass() ? kExitPass : kExitInvariant;
  } catch (const ArbitrageError& e) {
    detail::record_error(doc, "arbitrage", e.what());
    doc["error"]["certificate"] = certificate_json(e.certificate());
    res.exit_code = kExitModel;
  } catch (const ModelError& e) {
    detail::record_error(doc, "model", e.what());
    res.exit_code = kExitModel;
  } catch (const UtilityError& e) {
    detail::record_error(doc, "utility", e.what());
    res.exit_code = kExitModel;
  } catch (const PreconditionError& e) {
    detail::record_error(doc, "precondition", e.what());
    res.exit_code = kExitModel;
  } catch (const ConvergenceError& e) {
    detail::record_error(doc, "convergence", e.what());
    doc["error"]["residual"] = e.residual();
    res.exit_code = kExitConvergence;
  }
  doc["residuals"] = residuals_to_json(t);
  doc["pass"] = res.exit_code == kExitPass;
  doc["exit_code"] = res.exit_code;
  if (!c.report_path.empty()) {
    std::ofstream out(c.report_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report " + c.report_path);
    out << doc.dump(2) << '\n';
  }
  return res;
}

}  // namespace usens

#endif  // USENS_CLI_HPP
