#ifndef USENS_USENS_HPP
#define USENS_USENS_HPP

#include "usens/atlas.hpp"
#include "usens/cli.hpp"
#include "usens/constrained_utility.hpp"
#include "usens/market_tree.hpp"
#include "usens/model_io.hpp"
#include "usens/primal_dual.hpp"
#include "usens/random_models.hpp"
#include "usens/report.hpp"
#include "usens/residuals.hpp"
#include "usens/sensitivity.hpp"
#include "usens/utility.hpp"
#include "usens/utility_io.hpp"

#endif  // USENS_USENS_HPP
