#include <gtest/gtest.h>

#include "usens/model_io.hpp"
#include "usens/random_models.hpp"

using namespace usens;

TEST(RandomModels, ShapeWithinBoundsAndArbitrageFree) {
  std::mt19937_64 rng(7);
  RandomModelOptions o;
  for (int k = 0; k < 50; ++k) {
    const auto spec = random_tree_spec(rng, o);
    const auto m = MarketTree::build(spec);
    EXPECT_GE(m.horizon(), o.min_periods);
    EXPECT_LE(m.horizon(), o.max_periods);
    EXPECT_GE(m.num_assets(), o.min_assets);
    EXPECT_LE(m.num_assets(), o.max_assets);
    for (int n : m.trading_nodes()) {
      EXPECT_GE(static_cast<int>(m.children(n).size()), o.min_children);
      EXPECT_LE(static_cast<int>(m.children(n).size()), o.max_children);
    }
    auto mm = find_martingale_measure(m);
    ASSERT_TRUE(std::holds_alternative<Measure>(mm));
    EXPECT_TRUE(std::get<Measure>(mm).equivalent());
  }
}

TEST(RandomModels, ForcedIncompleteness) {
  std::mt19937_64 rng(11);
  RandomModelOptions o;
  o.force_incomplete = true;
  for (int k = 0; k < 20; ++k) {
    const auto m = MarketTree::build(random_tree_spec(rng, o));
    const Eigen::Index rank = Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(gain_span_matrix(m)).rank();
    EXPECT_LT(rank, m.num_leaves() - 1);
  }
}

TEST(RandomModels, SeedDeterminesModel) {
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(tree_spec_to_json(random_tree_spec(a)).dump(), tree_spec_to_json(random_tree_spec(b)).dump());
  std::mt19937_64 c(42), d(42);
  const auto ua = random_blend(c), ub = random_blend(d);
  ASSERT_EQ(ua.parts.size(), ub.parts.size());
  for (std::size_t i = 0; i < ua.parts.size(); ++i) EXPECT_EQ(ua.parts[i].gamma, ub.parts[i].gamma);
}
