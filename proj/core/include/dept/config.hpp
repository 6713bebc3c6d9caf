#pragma once

#include <string>

#include "dept/sim.hpp"
#include "dept/trainer.hpp"

namespace dept {

/// Raised on malformed or inconsistent configuration input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigVersion = 1;

struct ScenarioConfig {
  std::string name = "grid";
  int rows = 3;
  int cols = 3;
  double lane_length_m = 300.0;
  std::string preset = "grid-bi";
  double rate_scale = 1.0;
  uint64_t seed = 0;
};

ScenarioConfig load_scenario(const std::string& path);
Network build_network(const ScenarioConfig& scenario);

struct ExperimentConfig {
  std::string scenario_path;
  ScenarioConfig scenario;  // loaded from scenario_path
  EncoderConfig encoder;
  TrainSchedule schedule;
  PrefitConfig prefit;
  std::string ablation = "full";
  uint64_t seed = 0;
  std::string out_dir = "out";
  int workers = 1;
  double eval_duration_s = 0.0;
};

/// Loads an experiment document; the scenario path is resolved relative to
/// the config file's directory.
ExperimentConfig load_experiment(const std::string& path);

AblationFlags parse_ablation(const std::string& name);

}  // namespace dept
