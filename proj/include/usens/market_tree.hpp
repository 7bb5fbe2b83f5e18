#ifndef USENS_MARKET_TREE_HPP
#define USENS_MARKET_TREE_HPP

// Finite event-tree market models: a constant bond plus d risky assets whose
// prices live on the nodes of a rooted tree. Everything downstream (wealth,
// measures, conditional expectations, gain spans) is per-node arithmetic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "usens/errors.hpp"

namespace usens {

/// A random variable on the terminal states, one entry per leaf in leaf order.
using OutcomeVector = Eigen::VectorXd;

/// A leaf measure. Equivalent to the physical measure iff every entry is > 0.
struct Measure {
  Eigen::VectorXd leaf_prob;

  bool equivalent() const { return leaf_prob.size() > 0 && leaf_prob.minCoeff() > 0.0; }
  double expectation(const OutcomeVector& rv) const { return leaf_prob.dot(rv); }
};

/// One real per node.
struct AdaptedProcess {
  Eigen::VectorXd value;
};

/// Units of each risky asset held over the period following a node. Rows are
/// nodes; rows of leaves are ignored and kept at zero.
struct PredictableStrategy {
  Eigen::MatrixXd holdings;
};

struct NodeSpec {
  std::string id;
  std::optional<std::string> parent;
  int time = 0;
  double prob = 1.0;
  std::vector<double> prices;
};

struct TreeSpec {
  std::vector<std::string> assets;
  std::vector<NodeSpec> nodes;
};

struct Violation {
  std::string node;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const {
    std::ostringstream os;
    for (const auto& v : violations) os << "node " << v.node << ": " << v.message << "\n";
    return os.str();
  }
};

struct ValidationOptions {
  double prob_floor = 1e-12;
  double prob_sum_tol = 1e-10;
};

namespace detail {
inline std::string fmt_num(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}
}  // namespace detail

/// Checks every structural invariant of a tree description and lists each
/// violation separately.
inline ValidationReport validate_tree(const TreeSpec& spec, const ValidationOptions& opt = {}) {
  ValidationReport rep;
  auto add = [&](const std::string& node, std::string msg) {
    rep.violations.push_back({node, std::move(msg)});
  };
  const std::size_t d = spec.assets.size();
  if (spec.nodes.empty()) {
    add("-", "empty tree");
    return rep;
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    if (!index.emplace(spec.nodes[i].id, i).second) add(spec.nodes[i].id, "duplicate node id");
  }
  int roots = 0;
  int horizon = 0;
  for (const auto& n : spec.nodes) horizon = std::max(horizon, n.time);
  std::vector<std::vector<std::size_t>> children(spec.nodes.size());
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& n = spec.nodes[i];
    if (n.prices.size() != d) {
      add(n.id, "expected " + std::to_string(d) + " prices, got " + std::to_string(n.prices.size()));
    }
    for (double p : n.prices) {
      if (!(p > 0.0) || !std::isfinite(p)) {
        add(n.id, "nonpositive price " + detail::fmt_num(p));
        break;
      }
    }
    if (!n.parent) {
      ++roots;
      if (n.time != 0) add(n.id, "root must have time 0");
      continue;
    }
    auto it = index.find(*n.parent);
    if (it == index.end()) {
      add(n.id, "orphan node (unknown parent " + *n.parent + ")");
      continue;
    }
    const auto& par = spec.nodes[it->second];
    if (n.time != par.time + 1) add(n.id, "time must be parent time + 1");
    if (!(n.prob >= opt.prob_floor) || !(n.prob <= 1.0)) {
      add(n.id, "transition probability " + detail::fmt_num(n.prob) + " outside [" +
                    detail::fmt_num(opt.prob_floor) + ", 1]");
    }
    children[it->second].push_back(i);
  }
  if (roots != 1) add("-", "expected exactly one root, found " + std::to_string(roots));
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& n = spec.nodes[i];
    if (n.time < horizon && children[i].empty()) {
      add(n.id, "non-terminal node without children");
    }
    if (!children[i].empty()) {
      double s = 0.0;
      for (auto c : children[i]) s += spec.nodes[c].prob;
      if (std::abs(s - 1.0) > opt.prob_sum_tol) {
        add(n.id, "probability sum " + detail::fmt_num(s) + " ≠ 1");
      }
    }
  }
  return rep;
}

class MarketTree {
 public:
  /// Builds the tree; throws ModelError listing all violations on failure.
  static MarketTree build(const TreeSpec& spec, const ValidationOptions& opt = {}) {
    auto rep = validate_tree(spec, opt);
    if (!rep.ok()) throw ModelError("invalid market tree:\n" + rep.summary());
    return MarketTree(spec, opt);
  }

  int num_nodes() const { return static_cast<int>(parent_.size()); }
  int num_assets() const { return static_cast<int>(assets_.size()); }
  int num_leaves() const { return static_cast<int>(leaves_.size()); }
  int horizon() const { return horizon_; }

  int parent(int n) const { return parent_[n]; }
  int time(int n) const { return time_[n]; }
  double transition_prob(int n) const { return prob_[n]; }
  std::span<const int> children(int n) const { return children_[n]; }
  bool is_leaf(int n) const { return leaf_index_[n] >= 0; }
  int leaf_index(int n) const { return leaf_index_[n]; }
  int leaf_node(int i) const { return leaves_[i]; }
  const std::string& node_id(int n) const { return ids_[n]; }
  const std::vector<std::string>& asset_names() const { return assets_; }

  /// Node ids from the root to leaf i.
  std::span<const int> path(int i) const { return paths_[i]; }
  /// Leaf indices below node n.
  std::span<const int> leaves_under(int n) const { return leaves_under_[n]; }
  /// Non-leaf nodes in root-first order.
  const std::vector<int>& trading_nodes() const { return trading_nodes_; }
  Eigen::VectorXd prices(int n) const { return prices_.row(n).transpose(); }
  const Eigen::MatrixXd& price_matrix() const { return prices_; }

  Measure physical_measure() const { return {leaf_prob_}; }
  const ValidationOptions& validation_options() const { return opt_; }

  TreeSpec to_spec() const {
    TreeSpec s;
    s.assets = assets_;
    for (int n = 0; n < num_nodes(); ++n) {
      NodeSpec ns;
      ns.id = ids_[n];
      if (parent_[n] >= 0) ns.parent = ids_[parent_[n]];
      ns.time = time_[n];
      ns.prob = prob_[n];
      for (int j = 0; j < num_assets(); ++j) ns.prices.push_back(prices_(n, j));
      s.nodes.push_back(std::move(ns));
    }
    return s;
  }

 private:
  MarketTree(const TreeSpec& spec, const ValidationOptions& opt) : opt_(opt) {
    assets_ = spec.assets;
    // stable sort by time: parents precede children and the leaf order is
    // the document order of the time-T nodes
    std::vector<std::size_t> order(spec.nodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return spec.nodes[a].time < spec.nodes[b].time;
    });
    std::map<std::string, int> pos;
    for (std::size_t k = 0; k < order.size(); ++k) pos[spec.nodes[order[k]].id] = static_cast<int>(k);
    const int nn = static_cast<int>(order.size());
    const int d = static_cast<int>(assets_.size());
    parent_.assign(nn, -1);
    time_.assign(nn, 0);
    prob_.assign(nn, 1.0);
    ids_.resize(nn);
    children_.assign(nn, {});
    prices_.resize(nn, d);
    horizon_ = 0;
    for (int k = 0; k < nn; ++k) {
      const auto& s = spec.nodes[order[k]];
      ids_[k] = s.id;
      time_[k] = s.time;
      horizon_ = std::max(horizon_, s.time);
      if (s.parent) {
        parent_[k] = pos.at(*s.parent);
        prob_[k] = s.prob;
        children_[parent_[k]].push_back(k);
      }
      for (int j = 0; j < d; ++j) prices_(k, j) = s.prices[j];
    }
    leaf_index_.assign(nn, -1);
    for (int k = 0; k < nn; ++k) {
      if (time_[k] == horizon_) {
        leaf_index_[k] = static_cast<int>(leaves_.size());
        leaves_.push_back(k);
      } else {
        trading_nodes_.push_back(k);
      }
    }
    leaves_under_.assign(nn, {});
    paths_.resize(leaves_.size());
    leaf_prob_.resize(static_cast<Eigen::Index>(leaves_.size()));
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
      std::vector<int> p;
      double pr = 1.0;
      for (int n = leaves_[i]; n >= 0; n = parent_[n]) {
        p.push_back(n);
        pr *= prob_[n];
        leaves_under_[n].push_back(static_cast<int>(i));
      }
      std::reverse(p.begin(), p.end());
      paths_[i] = std::move(p);
      leaf_prob_[static_cast<Eigen::Index>(i)] = pr;
    }
  }

  ValidationOptions opt_;
  std::vector<std::string> assets_;
  std::vector<std::string> ids_;
  std::vector<int> parent_;
  std::vector<int> time_;
  std::vector<double> prob_;
  std::vector<std::vector<int>> children_;
  Eigen::MatrixXd prices_;
  int horizon_ = 0;
  std::vector<int> leaves_;
  std::vector<int> leaf_index_;
  std::vector<int> trading_nodes_;
  std::vector<std::vector<int>> paths_;
  std::vector<std::vector<int>> leaves_under_;
  Eigen::VectorXd leaf_prob_;
};

/// Re-checks the invariants of an already built tree.
inline ValidationReport validate_tree(const MarketTree& model) {
  return validate_tree(model.to_spec(), model.validation_options());
}

inline OutcomeVector terminal_values(const MarketTree& model, const AdaptedProcess& proc) {
  OutcomeVector v(model.num_leaves());
  for (int i = 0; i < model.num_leaves(); ++i) v[i] = proc.value[model.leaf_node(i)];
  return v;
}

/// X at the root is x; along each edge X_child = X_node + H_node . (S_child - S_node).
inline AdaptedProcess wealth_process(const MarketTree& model, double x, const PredictableStrategy& h) {
  AdaptedProcess w{Eigen::VectorXd::Zero(model.num_nodes())};
  const auto& S = model.price_matrix();
  for (int n = 0; n < model.num_nodes(); ++n) {
    const int p = model.parent(n);
    if (p < 0) {
      w.value[n] = x;
      continue;
    }
    w.value[n] = w.value[p] + h.holdings.row(p).dot(S.row(n) - S.row(p));
  }
  return w;
}

inline PredictableStrategy zero_strategy(const MarketTree& model) {
  return {Eigen::MatrixXd::Zero(model.num_nodes(), model.num_assets())};
}

/// Wealth is nonnegative at every node.
inline bool admissible(const MarketTree& model, double x, const PredictableStrategy& h) {
  return wealth_process(model, x, h).value.minCoeff() >= 0.0;
}

/// Columns span the terminal gains of all predictable strategies. Column
/// k*d + j is the gain of one unit of asset j held over the period after the
/// k-th trading node (zero on leaves outside that node's subtree).
inline Eigen::MatrixXd gain_span_matrix(const MarketTree& model) {
  const int d = model.num_assets();
  const auto& tn = model.trading_nodes();
  const auto& S = model.price_matrix();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(model.num_leaves(), static_cast<Eigen::Index>(tn.size()) * d);
  for (std::size_t k = 0; k < tn.size(); ++k) {
    const int n = tn[k];
    const int t = model.time(n);
    for (int i : model.leaves_under(n)) {
      const int child = model.path(i)[t + 1];
      for (int j = 0; j < d; ++j) G(i, static_cast<Eigen::Index>(k) * d + j) = S(child, j) - S(n, j);
    }
  }
  return G;
}

inline std::vector<OutcomeVector> terminal_gain_span(const MarketTree& model) {
  Eigen::MatrixXd G = gain_span_matrix(model);
  std::vector<OutcomeVector> out;
  out.reserve(static_cast<std::size_t>(G.cols()));
  for (Eigen::Index c = 0; c < G.cols(); ++c) out.emplace_back(G.col(c));
  return out;
}

/// Maps gain-span coefficients (column order of gain_span_matrix) to holdings.
inline PredictableStrategy strategy_from_coefficients(const MarketTree& model, const Eigen::VectorXd& coef) {
  auto h = zero_strategy(model);
  const int d = model.num_assets();
  const auto& tn = model.trading_nodes();
  for (std::size_t k = 0; k < tn.size(); ++k)
    for (int j = 0; j < d; ++j) h.holdings(tn[k], j) = coef[static_cast<Eigen::Index>(k) * d + j];
  return h;
}

/// Node value = measure-weighted mean of rv over the leaves below the node.
inline AdaptedProcess conditional_expectation(const OutcomeVector& rv, const Measure& measure,
                                              const MarketTree& model) {
  const int nn = model.num_nodes();
  if (rv.size() != model.num_leaves() || measure.leaf_prob.size() != model.num_leaves())
    throw PreconditionError("conditional_expectation: size mismatch with leaf count");
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(nn);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(nn);
  for (int i = 0; i < model.num_leaves(); ++i) {
    const int n = model.leaf_node(i);
    mass[n] = measure.leaf_prob[i];
    acc[n] = measure.leaf_prob[i] * rv[i];
  }
  AdaptedProcess out{Eigen::VectorXd::Zero(nn)};
  for (int n = nn - 1; n >= 0; --n) {
    if (model.is_leaf(n)) {
      out.value[n] = rv[model.leaf_index(n)];
    } else {
      if (!(mass[n] > 0.0))
        throw PreconditionError("conditional_expectation: zero mass under node " + model.node_id(n));
      out.value[n] = acc[n] / mass[n];
    }
    const int p = model.parent(n);
    if (p >= 0) {
      mass[p] += mass[n];
      acc[p] += mass[n] * out.value[n];
    }
  }
  return out;
}

/// One-step conditional probabilities of a leaf measure: entry n is
/// measure(n) / measure(parent(n)); the root gets 1.
inline Eigen::VectorXd transition_probabilities(const Measure& measure, const MarketTree& model) {
  const int nn = model.num_nodes();
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(nn);
  for (int i = 0; i < model.num_leaves(); ++i) mass[model.leaf_node(i)] = measure.leaf_prob[i];
  for (int n = nn - 1; n > 0; --n) mass[model.parent(n)] += mass[n];
  Eigen::VectorXd q = Eigen::VectorXd::Ones(nn);
  for (int n = 1; n < nn; ++n) q[n] = mass[n] / mass[model.parent(n)];
  return q;
}

/// Largest |E[P_child | node] - P_node| over trading nodes, under the
/// one-step probabilities q (as from transition_probabilities).
inline double martingale_residual(const MarketTree& model, const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& node_values) {
  double worst = 0.0;
  for (int n : model.trading_nodes()) {
    double e = 0.0;
    for (int c : model.children(n)) e += q[c] * node_values[c];
    worst = std::max(worst, std::abs(e - node_values[n]));
  }
  return worst;
}

struct ArbitrageCertificate {
  std::string node;
  Eigen::VectorXd holdings;     ///< units held at `node`, zero elsewhere
  Eigen::VectorXd child_gains;  ///< one-period gain on each child, all >= 0
};

class ArbitrageError : public ModelError {
 public:
  explicit ArbitrageError(ArbitrageCertificate cert)
      : ModelError("model admits arbitrage at node " + cert.node), cert_(std::move(cert)) {}
  const ArbitrageCertificate& certificate() const { return cert_; }

 private:
  ArbitrageCertificate cert_;
};

namespace detail {

struct NodeMeasure {
  bool ok = true;
  Eigen::VectorXd q;
  Eigen::VectorXd h;
};

// Maximizes sum_c w_c log(1 + D_c h). The first-order condition makes
// q_c = w_c / (1 + D_c h) a strictly positive martingale measure (and its
// entries sum to one); an unbounded objective means an arbitrage ray.
inline NodeMeasure node_martingale_measure(const Eigen::MatrixXd& D, const Eigen::VectorXd& w) {
  const Eigen::Index m = D.rows();
  NodeMeasure r;
  r.h = Eigen::VectorXd::Zero(D.cols());
  // per-asset scaling: assets whose increments differ by many orders of
  // magnitude would otherwise make the Newton system hopelessly ill-conditioned
  Eigen::VectorXd scale(D.cols());
  for (Eigen::Index j = 0; j < D.cols(); ++j) scale[j] = std::max(1e-300, D.col(j).cwiseAbs().maxCoeff());
  const Eigen::MatrixXd Dn = D * scale.cwiseInverse().asDiagonal();
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);
  auto objective = [&](const Eigen::VectorXd& zz) { return (w.array() * zz.array().log()).sum(); };
  double f = 0.0;
  for (int it = 0; it < 500; ++it) {
    Eigen::VectorXd wz = w.array() / z.array();
    Eigen::VectorXd g = Dn.transpose() * wz;
    Eigen::MatrixXd H = Dn.transpose() * (w.array() / z.array().square()).matrix().asDiagonal() * Dn;
    Eigen::VectorXd step = H.completeOrthogonalDecomposition().solve(g);
    const double decrement = g.dot(step);
    if (!(decrement > 1e-26)) break;
    Eigen::VectorXd dz = Dn * step;
    if (dz.minCoeff() >= -1e-12 * dz.cwiseAbs().maxCoeff() && dz.maxCoeff() > 0.0) {
      // every child gains along the Newton direction: arbitrage ray
      r.ok = false;
      r.h = step.cwiseQuotient(scale);
      return r;
    }
    double t = 1.0;
    Eigen::VectorXd zt;
    for (int ls = 0; ls < 80; ++ls, t *= 0.5) {
      zt = z + t * dz;
      if (zt.minCoeff() > 0.0 && objective(zt) >= f + 1e-4 * t * decrement - 1e-15 * std::abs(f)) break;
    }
    r.h += t * step;
    z = zt;
    f = objective(z);
    if (z.maxCoeff() > 1e14) {
      r.ok = false;
      r.h = r.h.cwiseQuotient(scale);
      return r;
    }
  }
  r.h = r.h.cwiseQuotient(scale);
  r.q = w.array() / z.array();
  r.q /= r.q.sum();
  return r;
}

}  // namespace detail

/// Per-node feasibility: a strictly positive one-step martingale measure at
/// every trading node, multiplied along paths into leaf probabilities. If some
/// node admits none, returns a one-node strategy with nonnegative,
/// somewhere-positive gain at zero cost.
inline std::variant<Measure, ArbitrageCertificate> find_martingale_measure(const MarketTree& model) {
  const int d = model.num_assets();
  const auto& S = model.price_matrix();
  Eigen::VectorXd q = Eigen::VectorXd::Ones(model.num_nodes());
  for (int n : model.trading_nodes()) {
    auto ch = model.children(n);
    const Eigen::Index m = static_cast<Eigen::Index>(ch.size());
    Eigen::MatrixXd D(m, d);
    Eigen::VectorXd w(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      D.row(k) = S.row(ch[k]) - S.row(n);
      w[k] = model.transition_prob(ch[k]);
    }
    w /= w.sum();
    auto nm = detail::node_martingale_measure(D, w);
    if (!nm.ok) {
      Eigen::VectorXd gains = D * nm.h;
      const double big = gains.cwiseAbs().maxCoeff();
      for (Eigen::Index k = 0; k < m; ++k)
        if (std::abs(gains[k]) <= 1e-9 * big) gains[k] = 0.0;
      return ArbitrageCertificate{model.node_id(n), nm.h, gains};
    }
    for (Eigen::Index k = 0; k < m; ++k) q[ch[k]] = nm.q[k];
  }
  Measure meas{Eigen::VectorXd(model.num_leaves())};
  for (int i = 0; i < model.num_leaves(); ++i) {
    double pr = 1.0;
    for (int n : model.path(i)) pr *= q[n];
    meas.leaf_prob[i] = pr;
  }
  return meas;
}

/// Prices (1/X, S/X) on the same topology; asset 0 is the old bond.
inline MarketTree numeraire_change(const MarketTree& model, const AdaptedProcess& X) {
  if (X.value.size() != model.num_nodes()) throw PreconditionError("numeraire_change: process size mismatch");
  for (int n = 0; n < model.num_nodes(); ++n)
    if (!(X.value[n] > 0.0)) throw PreconditionError("numeraire_change: nonpositive numeraire at node " + model.node_id(n));
  TreeSpec spec = model.to_spec();
  std::vector<std::string> assets{"bond/X"};
  for (const auto& a : model.asset_names()) assets.push_back(a + "/X");
  spec.assets = assets;
  for (int n = 0; n < model.num_nodes(); ++n) {
    auto& p = spec.nodes[n].prices;
    std::vector<double> np{1.0 / X.value[n]};
    for (double s : p) np.push_back(s / X.value[n]);
    p = std::move(np);
  }
  return MarketTree::build(spec, model.validation_options());
}

}  // namespace usens

#endif  // USENS_MARKET_TREE_HPP
