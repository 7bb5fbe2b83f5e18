#ifndef USENS_RESIDUALS_HPP
#define USENS_RESIDUALS_HPP

#include <cmath>
#include <string>
#include <vector>

namespace usens {

/// A named check: passes iff value <= tolerance (NaN never passes).
struct Residual {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  bool flag = false;  ///< pass/fail decided by the producer, not by tolerance
};

class ResidualTable {
 public:
  void add(std::string name, double value, double tolerance) {
    rows_.push_back({std::move(name), value, tolerance, value <= tolerance, false});
  }
  /// A check whose outcome is not a threshold comparison (strict bounds,
  /// monotonicity); value is reported as-is.
  void add_flag(std::string name, double value, bool pass) {
    rows_.push_back({std::move(name), value, 0.0, pass, true});
  }
  void append(const ResidualTable& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }

  const std::vector<Residual>& rows() const { return rows_; }
  bool all_pass() const {
    for (const auto& r : rows_)
      if (!r.pass) return false;
    return true;
  }
  const Residual* find(const std::string& name) const {
    for (const auto& r : rows_)
      if (r.name == name) return &r;
    return nullptr;
  }
  double value(const std::string& name) const {
    const auto* r = find(name);
    return r ? r->value : std::nan("");
  }
  /// Re-evaluates rows named `name` against a new tolerance.
  void override_tolerance(const std::string& name, double tol) {
    for (auto& r : rows_)
      if (r.name == name && !r.flag) {
        r.tolerance = tol;
        r.pass = r.value <= tol;
      }
  }

 private:
  std::vector<Residual> rows_;
};

}  // namespace usens

#endif  // USENS_RESIDUALS_HPP
