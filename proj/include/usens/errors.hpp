#ifndef USENS_ERRORS_HPP
#define USENS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace usens {

/// Malformed or inconsistent market model (also arbitrage).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Utility evaluated outside its trusted range, or an infeasible utility build.
class UtilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Violated operation precondition (bad arguments, non-interior input, ...).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace usens

#endif  // USENS_ERRORS_HPP
