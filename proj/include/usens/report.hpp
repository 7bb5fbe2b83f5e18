#ifndef USENS_REPORT_HPP
#define USENS_REPORT_HPP

// Machine-first report documents. Keys keep insertion order so identical
// inputs serialize to identical bytes; the text table is derived from the
// document alone.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "usens/market_tree.hpp"
#include "usens/residuals.hpp"

namespace usens {

using ReportJson = nlohmann::ordered_json;

inline constexpr int kReportSchema = 1;
inline constexpr const char* kToolVersion = "0.1.0";

inline ReportJson residuals_to_json(const ResidualTable& t) {
  ReportJson rows = ReportJson::array();
  for (const auto& r : t.rows()) {
    ReportJson j;
    j["name"] = r.name;
    j["value"] = r.value;
    j["tolerance"] = r.flag ? ReportJson(nullptr) : ReportJson(r.tolerance);
    j["pass"] = r.pass;
    rows.push_back(std::move(j));
  }
  return rows;
}

inline ReportJson vector_json(const Eigen::VectorXd& v) {
  ReportJson a = ReportJson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline ReportJson certificate_json(const ArbitrageCertificate& c) {
  ReportJson j;
  j["node"] = c.node;
  j["holdings"] = vector_json(c.holdings);
  j["child_gains"] = vector_json(c.child_gains);
  return j;
}

/// A numeric table printed after the residuals, e.g. an atlas ladder.
struct LadderTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::optional<double> exponent;
};

inline ReportJson ladder_json(const LadderTable& t) {
  ReportJson j;
  j["name"] = t.name;
  j["columns"] = t.columns;
  j["rows"] = t.rows;
  j["exponent"] = t.exponent ? ReportJson(*t.exponent) : ReportJson(nullptr);
  return j;
}

inline ReportJson new_report(const std::string& command) {
  ReportJson doc;
  doc["schema"] = kReportSchema;
  doc["tool"] = "usens";
  doc["version"] = kToolVersion;
  doc["command"] = command;
  doc["inputs"] = ReportJson::object();
  doc["results"] = ReportJson::object();
  doc["ladders"] = ReportJson::array();
  doc["residuals"] = ReportJson::array();
  return doc;
}

inline std::string format_number(const ReportJson& v) {
  if (v.is_null()) return "-";
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (!v.is_number()) return v.dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v.get<double>());
  return buf;
}

/// Aligned plain-text rendering: residual rows in report order, then each
/// ladder with its per-level rows and exponent footer.
inline std::string render_table(const ReportJson& doc) {
  std::ostringstream os;
  std::vector<std::vector<std::string>> cells{{"residual", "value", "tolerance", "status"}};
  if (doc.contains("residuals"))
    for (const auto& r : doc["residuals"])
      cells.push_back({r["name"].get<std::string>(), format_number(r["value"]), format_number(r["tolerance"]),
                       r["pass"].get<bool>() ? "PASS" : "FAIL"});
  std::vector<std::size_t> w(4, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 4; ++c) w[c] = std::max(w[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 4; ++c) {
      os << row[c];
      if (c + 1 < 4) os << std::string(w[c] - row[c].size() + 2, ' ');
    }
    os << '\n';
  }
  if (doc.contains("ladders")) {
    for (const auto& l : doc["ladders"]) {
      os << '\n' << l["name"].get<std::string>() << '\n';
      std::vector<std::vector<std::string>> lc;
      lc.push_back(l["columns"].get<std::vector<std::string>>());
      for (const auto& r : l["rows"]) {
        std::vector<std::string> row;
        for (const auto& v : r) row.push_back(format_number(v));
        lc.push_back(std::move(row));
      }
      std::vector<std::size_t> lw(lc.front().size(), 0);
      for (const auto& row : lc)
        for (std::size_t c = 0; c < row.size() && c < lw.size(); ++c) lw[c] = std::max(lw[c], row[c].size());
      for (const auto& row : lc) {
        for (std::size_t c = 0; c < row.size() && c < lw.size(); ++c)
          os << std::string(lw[c] - row[c].size(), ' ') << row[c] << (c + 1 < row.size() ? "  " : "");
        os << '\n';
      }
      if (!l["exponent"].is_null()) os << "exponent: " << format_number(l["exponent"]) << '\n';
    }
  }
  if (doc.contains("error")) os << "\nerror: " << doc["error"]["message"].get<std::string>() << '\n';
  if (doc.contains("exit_code")) os << "exit code: " << doc["exit_code"].get<int>() << '\n';
  return os.str();
}

}  // namespace usens

#endif  // USENS_REPORT_HPP
