#ifndef USENS_UTILITY_IO_HPP
#define USENS_UTILITY_IO_HPP

// JSON utility documents:
//
//   {"family": "power", "gamma": 2}
//   {"family": "log"}
//   {"family": "blend", "components": [{"weight": 1, "gamma": 0.5}, {"weight": 2, "gamma": 3}]}
//   {"family": "constrained", "anchors": [{"x": 1, "u1": 1}], "baseline_gamma": 2,
//    "spikes": [{"x": 2, "u2": -4, "width": 0.1}],
//    "moment": {"points": [...], "weights": [...], "target": 0}}
//
// Any family may carry "corridor": [c1, c2]; constrained ones also "domain": [lo, hi].

#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "usens/constrained_utility.hpp"
#include "usens/utility.hpp"

namespace usens {

struct LoadedUtility {
  UtilitySpec spec;
  std::shared_ptr<const ConstrainedUtility> constrained;  ///< set for the constrained family
};

namespace detail {

inline std::optional<Corridor> corridor_from_json(const nlohmann::json& doc) {
  if (!doc.contains("corridor")) return std::nullopt;
  const auto c = doc["corridor"].get<std::vector<double>>();
  if (c.size() != 2) throw UtilityError("corridor must be [c1, c2]");
  return Corridor{c[0], c[1]};
}

}  // namespace detail

inline LoadedUtility utility_from_json(const nlohmann::json& doc) {
  try {
    const std::string family = doc.at("family").get<std::string>();
    const auto corridor = detail::corridor_from_json(doc);
    if (family == "power") return {power_utility(doc.at("gamma").get<double>(), corridor), nullptr};
    if (family == "log") return {log_utility(corridor), nullptr};
    if (family == "blend") {
      std::vector<BlendComponent> parts;
      for (const auto& c : doc.at("components")) parts.push_back({c.at("weight").get<double>(), c.at("gamma").get<double>()});
      return {blend_utility(parts, corridor), nullptr};
    }
    if (family == "constrained") {
      ConstraintSet cs;
      cs.name = doc.value("name", std::string("constrained"));
      cs.baseline_gamma = doc.value("baseline_gamma", 1.0);
      if (doc.contains("anchors"))
        for (const auto& a : doc["anchors"]) cs.anchors.push_back({a.at("x").get<double>(), a.at("u1").get<double>()});
      if (doc.contains("spikes"))
        for (const auto& s : doc["spikes"])
          cs.spikes.push_back({s.at("x").get<double>(), s.at("u2").get<double>(), s.at("width").get<double>()});
      if (doc.contains("moment")) {
        const auto& m = doc["moment"];
        cs.moment = MomentCondition{m.at("points").get<std::vector<double>>(), m.at("weights").get<std::vector<double>>(),
                                    m.value("target", 0.0)};
      }
      cs.corridor = corridor;
      if (doc.contains("domain")) {
        const auto d = doc["domain"].get<std::vector<double>>();
        if (d.size() != 2) throw UtilityError("domain must be [lo, hi]");
        cs.domain = Domain{d[0], d[1]};
      }
      auto cu = std::make_shared<const ConstrainedUtility>(build_constrained_utility(cs));
      return {cu->spec, cu};
    }
    throw UtilityError("unknown utility family '" + family + "'");
  } catch (const nlohmann::json::exception& e) {
    throw UtilityError(std::string("bad utility document: ") + e.what());
  }
}

inline nlohmann::json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw UtilityError(std::string("cannot open ") + what + " file " + path);
  try {
    nlohmann::json doc;
    in >> doc;
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw UtilityError(std::string("malformed ") + what + " file " + path + ": " + e.what());
  }
}

inline LoadedUtility load_utility(const std::string& path) { return utility_from_json(load_json_file(path, "utility")); }

}  // namespace usens

#endif  // USENS_UTILITY_IO_HPP
