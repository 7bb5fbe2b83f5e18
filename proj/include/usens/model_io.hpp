#ifndef USENS_MODEL_IO_HPP
#define USENS_MODEL_IO_HPP

// JSON model documents:
//
//   { "assets": ["S"], "times": [0, 1],
//     "nodes": [ {"id": "r", "parent": null, "time": 0, "prob": 1, "prices": [1]},
//                {"id": "u", "parent": "r",  "time": 1, "prob": 0.5, "prices": [2]}, ... ] }
//
// A node may instead list "parents" and "probs" (recombining lattice); such
// inputs are unrolled into a path tree at load time, one copy per path.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "usens/market_tree.hpp"

namespace usens {

namespace detail {

inline std::string id_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw ModelError("node ids must be strings or integers");
}

struct LatticeNode {
  std::string id;
  int time = 0;
  std::vector<std::string> parents;
  std::vector<double> probs;
  std::vector<double> prices;
};

inline TreeSpec unroll(const std::vector<std::string>& assets, std::vector<LatticeNode> nodes) {
  std::stable_sort(nodes.begin(), nodes.end(),
                   [](const LatticeNode& a, const LatticeNode& b) { return a.time < b.time; });
  std::map<std::string, std::vector<std::string>> copies;
  std::map<std::string, int> count;
  // count copies first so that single-copy nodes keep their ids
  for (const auto& n : nodes) {
    int c = n.parents.empty() ? 1 : 0;
    for (const auto& p : n.parents) {
      auto it = count.find(p);
      if (it == count.end()) throw ModelError("orphan node (unknown parent " + p + ")");
      c += it->second;
    }
    count[n.id] = c;
  }
  TreeSpec spec;
  spec.assets = assets;
  for (const auto& n : nodes) {
    auto& mine = copies[n.id];
    auto emit = [&](std::optional<std::string> parent, double prob) {
      NodeSpec ns;
      ns.id = count[n.id] == 1 ? n.id : n.id + "~" + std::to_string(mine.size());
      ns.parent = std::move(parent);
      ns.time = n.time;
      ns.prob = prob;
      ns.prices = n.prices;
      mine.push_back(ns.id);
      spec.nodes.push_back(std::move(ns));
    };
    if (n.parents.empty()) {
      emit(std::nullopt, 1.0);
      continue;
    }
    for (std::size_t k = 0; k < n.parents.size(); ++k)
      for (const auto& pc : copies[n.parents[k]]) emit(pc, n.probs[k]);
  }
  return spec;
}

}  // namespace detail

inline TreeSpec tree_spec_from_json(const nlohmann::json& doc) {
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) throw ModelError("model document needs a 'nodes' array");
  std::vector<std::string> assets;
  if (doc.contains("assets")) {
    for (const auto& a : doc["assets"]) assets.push_back(a.get<std::string>());
  }
  bool lattice = false;
  std::vector<detail::LatticeNode> raw;
  for (const auto& jn : doc["nodes"]) {
    detail::LatticeNode n;
    n.id = detail::id_string(jn.at("id"));
    n.time = jn.value("time", 0);
    n.prices = jn.at("prices").get<std::vector<double>>();
    if (jn.contains("parents")) {
      lattice = true;
      for (const auto& p : jn["parents"]) n.parents.push_back(detail::id_string(p));
      n.probs = jn.at("probs").get<std::vector<double>>();
      if (n.probs.size() != n.parents.size()) throw ModelError("node " + n.id + ": parents/probs length mismatch");
    } else if (jn.contains("parent") && !jn["parent"].is_null()) {
      n.parents.push_back(detail::id_string(jn["parent"]));
      n.probs.push_back(jn.value("prob", 1.0));
    }
    raw.push_back(std::move(n));
  }
  if (assets.empty() && !raw.empty()) {
    for (std::size_t j = 0; j < raw.front().prices.size(); ++j) assets.push_back("S" + std::to_string(j + 1));
  }
  if (doc.contains("times")) {
    int horizon = doc["times"].is_array() ? doc["times"].back().get<int>() : doc["times"].get<int>();
    for (const auto& n : raw)
      if (n.time > horizon) throw ModelError("node " + n.id + " lies beyond the declared horizon");
  }
  if (lattice) return detail::unroll(assets, std::move(raw));
  TreeSpec spec;
  spec.assets = assets;
  for (auto& n : raw) {
    NodeSpec ns;
    ns.id = n.id;
    if (!n.parents.empty()) {
      ns.parent = n.parents.front();
      ns.prob = n.probs.front();
    }
    ns.time = n.time;
    ns.prices = std::move(n.prices);
    spec.nodes.push_back(std::move(ns));
  }
  return spec;
}

inline nlohmann::json tree_spec_to_json(const TreeSpec& spec) {
  nlohmann::json doc;
  doc["assets"] = spec.assets;
  int horizon = 0;
  auto nodes = nlohmann::json::array();
  for (const auto& n : spec.nodes) {
    horizon = std::max(horizon, n.time);
    nlohmann::json jn;
    jn["id"] = n.id;
    jn["parent"] = n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr);
    jn["time"] = n.time;
    jn["prob"] = n.prob;
    jn["prices"] = n.prices;
    nodes.push_back(std::move(jn));
  }
  auto times = nlohmann::json::array();
  for (int t = 0; t <= horizon; ++t) times.push_back(t);
  doc["times"] = times;
  doc["nodes"] = nodes;
  return doc;
}

inline TreeSpec load_tree_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("malformed model file " + path + ": " + e.what());
  }
  try {
    return tree_spec_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("bad model document " + path + ": " + e.what());
  }
}

}  // namespace usens

#endif  // USENS_MODEL_IO_HPP
