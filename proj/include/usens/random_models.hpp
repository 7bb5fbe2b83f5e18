#ifndef USENS_RANDOM_MODELS_HPP
#define USENS_RANDOM_MODELS_HPP

// Seeded generators for arbitrage-free trees and utilities used by the
// identity batteries. Each node draws a pricing kernel q and physical
// probabilities independently; children prices are scaled so that q is a
// one-step martingale measure, hence no model ever admits arbitrage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "usens/market_tree.hpp"
#include "usens/utility.hpp"

namespace usens {

struct RandomModelOptions {
  int min_periods = 1, max_periods = 3;
  int min_children = 2, max_children = 4;
  int min_assets = 1, max_assets = 3;
  double volatility = 0.25;
  double min_prob = 0.05;  ///< floor applied before renormalizing
  bool force_incomplete = false;  ///< ensure children - 1 > assets somewhere
};

namespace detail {

inline std::vector<double> random_simplex(std::mt19937_64& rng, int k, double floor) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> w(k);
  double s = 0.0;
  for (auto& v : w) {
    v = floor + U(rng);
    s += v;
  }
  for (auto& v : w) v /= s;
  return w;
}

}  // namespace detail

inline TreeSpec random_tree_spec(std::mt19937_64& rng, const RandomModelOptions& o = {}) {
  std::uniform_int_distribution<int> Dp(o.min_periods, o.max_periods);
  std::uniform_int_distribution<int> Dd(o.min_assets, o.max_assets);
  std::uniform_int_distribution<int> Dk(o.min_children, o.max_children);
  std::normal_distribution<double> Z(0.0, o.volatility);
  std::uniform_real_distribution<double> S0(0.5, 2.0);

  const int T = Dp(rng);
  const int d = Dd(rng);
  TreeSpec spec;
  for (int j = 0; j < d; ++j) spec.assets.push_back("S" + std::to_string(j + 1));

  NodeSpec root;
  root.id = "n0";
  root.time = 0;
  for (int j = 0; j < d; ++j) root.prices.push_back(S0(rng));
  spec.nodes.push_back(root);

  bool incomplete = false;
  std::vector<std::size_t> frontier{0};
  int next_id = 1;
  for (int t = 1; t <= T; ++t) {
    std::vector<std::size_t> next;
    for (std::size_t f = 0; f < frontier.size(); ++f) {
      const NodeSpec parent = spec.nodes[frontier[f]];
      int k = Dk(rng);
      const bool last = t == T && f + 1 == frontier.size();
      if (o.force_incomplete && last && !incomplete) k = std::max(k, d + 2);
      if (k - 1 > d) incomplete = true;
      const auto q = detail::random_simplex(rng, k, 0.2);
      const auto p = detail::random_simplex(rng, k, o.min_prob / (1.0 - o.min_prob));
      std::vector<std::vector<double>> ret(k, std::vector<double>(d));
      for (auto& row : ret)
        for (auto& v : row) v = std::exp(Z(rng));
      for (int j = 0; j < d; ++j) {
        double m = 0.0;
        for (int c = 0; c < k; ++c) m += q[c] * ret[c][j];
        for (int c = 0; c < k; ++c) ret[c][j] /= m;
      }
      for (int c = 0; c < k; ++c) {
        NodeSpec ch;
        ch.id = "n" + std::to_string(next_id++);
        ch.parent = parent.id;
        ch.time = t;
        ch.prob = p[c];
        for (int j = 0; j < d; ++j) ch.prices.push_back(parent.prices[j] * ret[c][j]);
        next.push_back(spec.nodes.size());
        spec.nodes.push_back(ch);
      }
    }
    frontier = std::move(next);
  }
  return spec;
}

/// Power utilities from {0.5, 1, 2, 5}, or a blend of 2-3 of them.
struct RandomUtility {
  std::string kind;  ///< "power" or "blend"
  double gamma = 0.0;
  std::vector<BlendComponent> parts;
  UtilitySpec make() const {
    return kind == "power" ? power_utility(gamma) : blend_utility(parts);
  }
};

inline RandomUtility random_blend(std::mt19937_64& rng) {
  static const double gammas[] = {0.5, 1.0, 2.0, 3.0, 5.0};
  std::uniform_int_distribution<int> Dn(2, 3);
  std::uniform_real_distribution<double> W(0.2, 1.0);
  std::vector<int> idx{0, 1, 2, 3, 4};
  std::shuffle(idx.begin(), idx.end(), rng);
  RandomUtility r;
  r.kind = "blend";
  const int n = Dn(rng);
  for (int i = 0; i < n; ++i) r.parts.push_back({W(rng), gammas[idx[i]]});
  std::sort(r.parts.begin(), r.parts.end(), [](const auto& a, const auto& b) { return a.gamma < b.gamma; });
  return r;
}

}  // namespace usens

#endif  // USENS_RANDOM_MODELS_HPP
