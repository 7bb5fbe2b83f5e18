#ifndef USENS_TEST_FIXTURES_HPP
#define USENS_TEST_FIXTURES_HPP

#include <string>

#include "usens/model_io.hpp"

namespace fixtures {

inline std::string sample(const std::string& name) { return std::string(USENS_SAMPLES_DIR) + "/" + name; }

inline usens::MarketTree load(const std::string& name) { return usens::MarketTree::build(usens::load_tree_spec(sample(name))); }

/// One period, one asset, S_0 = 1, children with the given prices and probabilities.
inline usens::MarketTree one_period(const std::vector<double>& S1, const std::vector<double>& p) {
  usens::TreeSpec s;
  s.assets = {"S"};
  s.nodes.push_back({"r", std::nullopt, 0, 1.0, {1.0}});
  for (std::size_t i = 0; i < S1.size(); ++i) s.nodes.push_back({"c" + std::to_string(i), std::string("r"), 1, p[i], {S1[i]}});
  return usens::MarketTree::build(s);
}

}  // namespace fixtures

#endif  // USENS_TEST_FIXTURES_HPP
