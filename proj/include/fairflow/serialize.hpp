#pragma once

// JSON documents for flows ("fairflow-flow-v1") and chains
// ("fairflow-chain-v1"). Matrices are stored row-major as flat arrays with
// explicit shapes; doubles round-trip exactly through the JSON writer.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fairflow/chain.hpp"
#include "fairflow/data.hpp"
#include "fairflow/error.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/mlp.hpp"

namespace fairflow {

inline constexpr const char* kFlowFormat = "fairflow-flow-v1";
inline constexpr const char* kChainFormat = "fairflow-chain-v1";

using nlohmann::json;

inline json tensor_to_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::vector<double>(t.data(), t.data() + t.size())}};
}

inline Tensor tensor_from_json(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols)
    throw ConfigError("tensor document: data length does not match shape");
  Tensor t(rows, cols);
  std::copy(data.begin(), data.end(), t.data());
  return t;
}

inline json to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.depth(); ++l)
    layers.push_back({{"weight", tensor_to_json(net.weights()[l].value)}, {"bias", tensor_to_json(net.biases()[l].value)}});
  return {{"hidden_activation", to_string(net.hidden_activation())},
          {"output_activation", to_string(net.output_activation())},
          {"layers", std::move(layers)}};
}

inline Mlp mlp_from_json(const json& j, const std::string& name) {
  std::vector<Parameter> ws, bs;
  std::size_t l = 0;
  for (const auto& layer : j.at("layers")) {
    ws.push_back({name + ".w" + std::to_string(l), tensor_from_json(layer.at("weight"))});
    bs.push_back({name + ".b" + std::to_string(l), tensor_from_json(layer.at("bias"))});
    ++l;
  }
  return Mlp(std::move(ws), std::move(bs), parse_activation(j.at("hidden_activation").get<std::string>()),
             parse_activation(j.at("output_activation").get<std::string>()));
}

inline json to_json(const FlowModel& flow) {
  json layers = json::array();
  for (const auto& l : flow.layers())
    layers.push_back({{"mask", l.mask()},
                      {"scale_cap", tensor_to_json(l.scale_cap().value)},
                      {"s_net", to_json(l.s_net())},
                      {"t_net", to_json(l.t_net())}});
  return {{"format", kFlowFormat}, {"dim", flow.dim()}, {"layer_count", flow.layers().size()}, {"layers", layers}};
}

inline FlowModel flow_from_json(const json& j, const std::string& name = "flow") {
  try {
    if (j.at("format").get<std::string>() != kFlowFormat)
      throw ConfigError("flow document: expected format " + std::string(kFlowFormat));
    const auto dim = j.at("dim").get<Index>();
    std::vector<CouplingLayer> layers;
    std::size_t i = 0;
    for (const auto& lj : j.at("layers")) {
      const std::string prefix = name + ".layer" + std::to_string(i++);
      layers.emplace_back(lj.at("mask").get<Mask>(), mlp_from_json(lj.at("s_net"), prefix + ".s"),
                          mlp_from_json(lj.at("t_net"), prefix + ".t"),
                          Parameter{prefix + ".cap", tensor_from_json(lj.at("scale_cap"))});
    }
    if (layers.size() != j.at("layer_count").get<std::size_t>()) throw ConfigError("flow document: layer count mismatch");
    return FlowModel(dim, std::move(layers));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("flow document: ") + e.what());
  }
}

inline json to_json(const ChainModel& chain) {
  json j = {{"format", kChainFormat},
            {"dim", chain.dim()},
            {"pivot", chain.pivot()},
            {"gamma", chain.gamma()},
            {"head", {{"kind", to_string(chain.head().kind())}, {"net", to_json(chain.head().net())}}},
            {"f_all", to_json(chain.f_all())},
            {"f_p", to_json(chain.f_p())}};
  j["preprocess"] = chain.stats() ? to_json(*chain.stats()) : json(nullptr);
  return j;
}

inline ChainModel chain_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kChainFormat)
      throw ConfigError("chain document: expected format " + std::string(kChainFormat));
    PredictorHead head(parse_head_kind(j.at("head").at("kind").get<std::string>()),
                       mlp_from_json(j.at("head").at("net"), "head"));
    ChainModel chain(flow_from_json(j.at("f_all"), "f_all"), flow_from_json(j.at("f_p"), "f_p"),
                     j.at("pivot").get<int>(), std::move(head), j.at("gamma").get<double>());
    if (chain.dim() != j.at("dim").get<Index>()) throw ConfigError("chain document: dim mismatch");
    if (!j.at("preprocess").is_null()) chain.set_stats(preprocess_stats_from_json(j.at("preprocess")));
    return chain;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("chain document: ") + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace fairflow
