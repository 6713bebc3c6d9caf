#include "dept/config.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dept {

namespace {
using nlohmann::json;

json read_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  if (doc.value("version", 0) != kConfigVersion)
    throw ConfigError(path + ": missing or unsupported version field");
  return doc;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ScenarioConfig load_scenario(const std::string& path) {
  const json doc = read_document(path);
  ScenarioConfig s;
  read_if(doc, "name", s.name);
  read_if(doc, "rows", s.rows);
  read_if(doc, "cols", s.cols);
  read_if(doc, "lane_length_m", s.lane_length_m);
  read_if(doc, "preset", s.preset);
  read_if(doc, "rate_scale", s.rate_scale);
  read_if(doc, "seed", s.seed);
  if (s.rows < 1 || s.cols < 1) throw ConfigError(path + ": grid must be at least 1x1");
  if (s.lane_length_m <= 0.0) throw ConfigError(path + ": lane_length_m must be positive");
  if (s.rate_scale < 0.0) throw ConfigError(path + ": rate_scale must be non-negative");
  try {
    parse_flow_preset(s.preset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

Network build_network(const ScenarioConfig& scenario) {
  Network net = build_grid_network(scenario.rows, scenario.cols, scenario.lane_length_m,
                                   parse_flow_preset(scenario.preset));
  for (FlowSpec& f : net.flows) f.rate_veh_per_hour *= scenario.rate_scale;
  return net;
}

ExperimentConfig load_experiment(const std::string& path) {
  const json doc = read_document(path);
  ExperimentConfig cfg;

  if (!doc.contains("scenario")) throw ConfigError(path + ": missing scenario path");
  cfg.scenario_path = doc.at("scenario").get<std::string>();
  std::filesystem::path resolved(cfg.scenario_path);
  if (resolved.is_relative()) resolved = std::filesystem::path(path).parent_path() / resolved;
  if (!std::filesystem::exists(resolved))
    throw ConfigError(path + ": scenario file does not exist: " + resolved.string());
  cfg.scenario = load_scenario(resolved.string());

  if (doc.contains("encoder")) {
    const json& e = doc.at("encoder");
    read_if(e, "layers", cfg.encoder.layers);
    read_if(e, "heads", cfg.encoder.heads);
    read_if(e, "d_model", cfg.encoder.d_model);
    read_if(e, "policy_dim", cfg.encoder.policy_dim);
    read_if(e, "t_max", cfg.encoder.t_max);
    read_if(e, "temperature", cfg.encoder.temperature);
  }
  if (doc.contains("schedule")) {
    const json& s = doc.at("schedule");
    read_if(s, "total_rounds", cfg.schedule.total_rounds);
    read_if(s, "il_rounds", cfg.schedule.il_rounds);
    read_if(s, "round_duration_s", cfg.schedule.round_duration_s);
    read_if(s, "epochs_per_round", cfg.schedule.epochs_per_round);
    read_if(s, "batch_size", cfg.schedule.batch_size);
    read_if(s, "replay_capacity", cfg.schedule.replay_capacity);
    read_if(s, "target_sync_period", cfg.schedule.target_sync_period);
    read_if(s, "eps_start", cfg.schedule.eps_start);
    read_if(s, "eps_end", cfg.schedule.eps_end);
    read_if(s, "discount", cfg.schedule.discount);
    read_if(s, "il_learning_rate", cfg.schedule.il_learning_rate);
    read_if(s, "rl_learning_rate", cfg.schedule.rl_learning_rate);
  }
  if (doc.contains("prefit")) {
    const json& p = doc.at("prefit");
    read_if(p, "mean_speed", cfg.prefit.mean_speed);
    read_if(p, "curvature", cfg.prefit.curvature);
    read_if(p, "deviation_range", cfg.prefit.deviation_range);
    read_if(p, "label_noise", cfg.prefit.label_noise);
    read_if(p, "iteration_budget", cfg.prefit.iteration_budget);
    read_if(p, "target_mse", cfg.prefit.target_mse);
  }
  read_if(doc, "ablation", cfg.ablation);
  read_if(doc, "seed", cfg.seed);
  read_if(doc, "out_dir", cfg.out_dir);
  read_if(doc, "workers", cfg.workers);
  read_if(doc, "eval_duration_s", cfg.eval_duration_s);

  try {
    cfg.encoder.validate();
    cfg.schedule.validate();
    parse_ablation(cfg.ablation);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (cfg.workers < 1) throw ConfigError(path + ": workers must be >= 1");
  return cfg;
}

AblationFlags parse_ablation(const std::string& name) {
  AblationFlags f;
  if (name == "full") {
    // defaults
  } else if (name == "no-pre-fit") {
    f.pre_fit = false;
  } else if (name == "no-cone") {
    f.cone_decay = false;
  } else if (name == "tte") {
    f.priors = false;
    f.cone_decay = false;
    f.pre_fit = false;
  } else {
    throw std::invalid_argument("unknown ablation '" + name +
                                "' (full|no-pre-fit|no-cone|tte)");
  }
  f.validate();
  return f;
}

}  // namespace dept
