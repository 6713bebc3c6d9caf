#include "dept/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace dept {

namespace {
using nlohmann::json;

json encoder_to_json(const EncoderConfig& c) {
  return json{{"layers", c.layers},
              {"heads", c.heads},
              {"d_model", c.d_model},
              {"policy_dim", c.policy_dim},
              {"action_count", c.action_count},
              {"feature_dim", c.feature_dim},
              {"t_max", c.t_max},
              {"temperature", c.temperature},
              {"use_priors", c.use_priors},
              {"use_cone_decay", c.use_cone_decay}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.policy_dim = j.at("policy_dim").get<int>();
  c.action_count = j.at("action_count").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.t_max = j.at("t_max").get<int>();
  c.temperature = j.at("temperature").get<double>();
  c.use_priors = j.at("use_priors").get<bool>();
  c.use_cone_decay = j.at("use_cone_decay").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const DeptModel& model, const std::string& path) {
  json doc;
  doc["version"] = kCheckpointVersion;
  doc["kind"] = "dept-checkpoint";
  doc["encoder"] = encoder_to_json(model.config());
  doc["mean_speed"] = model.mean_speed();
  doc["node_count"] = model.graph().node_count();
  json params = json::array();
  for (const auto& p : model.params().all()) {
    params.push_back(json{{"name", p->name}, {"shape", p->value.shape()}, {"data", p->value.data()}});
  }
  doc["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << doc.dump();
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::unique_ptr<DeptModel> load_checkpoint(const std::string& path, const CpsGraph& graph) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_checkpoint: invalid JSON in " + path + ": " + e.what());
  }
  if (doc.value("kind", "") != "dept-checkpoint")
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  if (doc.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version in " + path);
  const int node_count = doc.at("node_count").get<int>();
  if (node_count != graph.node_count())
    throw std::runtime_error("load_checkpoint: checkpoint was trained on " +
                             std::to_string(node_count) + " nodes, scenario has " +
                             std::to_string(graph.node_count()));

  auto model = std::make_unique<DeptModel>(encoder_from_json(doc.at("encoder")), graph,
                                           doc.at("mean_speed").get<double>(), /*seed=*/0);
  for (const auto& pj : doc.at("params")) {
    const std::string name = pj.at("name").get<std::string>();
    Parameter* p = model->params().find(name);
    if (!p) throw std::runtime_error("load_checkpoint: unknown parameter " + name);
    const auto shape = pj.at("shape").get<std::vector<int64_t>>();
    if (shape != p->value.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    p->value = Tensor::from(shape, pj.at("data").get<std::vector<double>>());
  }
  return model;
}

}  // namespace dept
