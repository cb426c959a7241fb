#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "vif/errors.hpp"
#include "vif/model.hpp"

namespace vif {

// Versioned JSON checkpoints. Doubles are emitted in shortest round-trip
// form, so reloading reproduces predictions bit-exactly.

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json j;
  j["format"] = "vif-mlp";
  j["version"] = 1;
  j["widths"] = m.config.widths;
  j["activation"] = m.config.activation == Activation::relu ? "relu" : "softplus";
  j["parameterization"] =
      m.config.parameterization == Parameterization::ntk ? "ntk" : "standard";
  j["sigma_w"] = m.config.sigma_w;
  j["sigma_b"] = m.config.sigma_b;
  j["eta0"] = m.config.eta0;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    j["weights"].push_back(m.weights[l].data());
    j["biases"].push_back(m.biases[l]);
  }
  return j;
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "vif-mlp" || j.value("version", 0) != 1)
    throw ParseError("mlp_from_json: unrecognized checkpoint format");
  MlpConfig cfg;
  cfg.widths = j.at("widths").get<std::vector<std::size_t>>();
  cfg.activation = j.at("activation") == "relu" ? Activation::relu : Activation::softplus;
  cfg.parameterization =
      j.at("parameterization") == "ntk" ? Parameterization::ntk : Parameterization::standard;
  cfg.sigma_w = j.at("sigma_w");
  cfg.sigma_b = j.at("sigma_b");
  cfg.eta0 = j.at("eta0");
  cfg.validate();
  MlpModel m;
  m.config = cfg;
  for (std::size_t l = 0; l + 1 < cfg.widths.size(); ++l) {
    m.weights.emplace_back(cfg.widths[l], cfg.widths[l + 1],
                           j.at("weights").at(l).get<std::vector<double>>());
    m.biases.push_back(j.at("biases").at(l).get<std::vector<double>>());
  }
  return m;
}

inline nlohmann::json to_json(const GbdtEnsemble& e) {
  nlohmann::json j;
  j["format"] = "vif-gbdt";
  j["version"] = 1;
  j["depth"] = e.config.depth;
  j["borders"] = e.config.borders;
  j["beta"] = e.config.beta;
  j["epsilon"] = e.config.epsilon;
  j["lambda"] = e.config.lambda;
  j["n_train"] = e.n_train;
  j["thresholds"] = e.quantizer.thresholds;
  j["trees"] = nlohmann::json::array();
  for (const ObliviousTree& t : e.trees) {
    nlohmann::json tj;
    tj["features"] = nlohmann::json::array();
    tj["borders"] = nlohmann::json::array();
    for (const TreeSplit& s : t.splits) {
      tj["features"].push_back(s.feature);
      tj["borders"].push_back(s.border);
    }
    tj["leaf_values"] = t.leaf_values;
    j["trees"].push_back(std::move(tj));
  }
  if (e.base) j["base"] = to_json(*e.base);
  return j;
}

inline GbdtEnsemble gbdt_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "vif-gbdt" || j.value("version", 0) != 1)
    throw ParseError("gbdt_from_json: unrecognized checkpoint format");
  GbdtEnsemble e;
  e.config.depth = j.at("depth");
  e.config.borders = j.at("borders");
  e.config.beta = j.at("beta");
  e.config.epsilon = j.at("epsilon");
  e.config.lambda = j.at("lambda");
  e.n_train = j.at("n_train");
  e.quantizer.thresholds = j.at("thresholds").get<std::vector<std::vector<double>>>();
  for (const auto& tj : j.at("trees")) {
    ObliviousTree t;
    const auto feats = tj.at("features").get<std::vector<std::uint16_t>>();
    const auto bords = tj.at("borders").get<std::vector<std::uint16_t>>();
    for (std::size_t i = 0; i < feats.size(); ++i) t.splits.push_back({feats[i], bords[i]});
    t.leaf_values = tj.at("leaf_values").get<std::vector<double>>();
    e.trees.push_back(std::move(t));
  }
  if (j.contains("base"))
    e.base = std::make_shared<const GbdtEnsemble>(gbdt_from_json(j.at("base")));
  return e;
}

inline nlohmann::json to_json(const FittedModel& m) {
  if (std::holds_alternative<MlpModel>(m)) return to_json(std::get<MlpModel>(m));
  return to_json(std::get<GbdtEnsemble>(m));
}

inline FittedModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") == "vif-mlp") return mlp_from_json(j);
  if (j.value("format", "") == "vif-gbdt") return gbdt_from_json(j);
  throw ParseError("model_from_json: unrecognized checkpoint format");
}

inline void save_model(const FittedModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("save_model: cannot write file: " + path);
  out << to_json(m).dump(2) << '\n';
}

inline FittedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_model: cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace vif
