// Experiment driver: baseline simulation, two-stage training, checkpoint
// evaluation, finite-difference checking and attention-matrix export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "dept/checkpoint.hpp"
#include "dept/config.hpp"
#include "dept/controllers.hpp"
#include "dept/encoder.hpp"
#include "dept/trainer.hpp"

namespace fs = std::filesystem;
using namespace dept;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> ablation;
  std::optional<int> workers;
  std::string checkpoint;
};

ExperimentConfig load_and_override(const CommonArgs& args) {
  ExperimentConfig cfg = load_experiment(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  if (args.ablation) cfg.ablation = *args.ablation;
  if (args.workers) cfg.workers = *args.workers;
  try {
    parse_ablation(cfg.ablation);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ConfigError("output directory is not writable: " + dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void append_sim_metrics(const fs::path& path, int round, const Metrics& m) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (fresh) out << "round,avg_tt,avg_que,vehicles_served\n";
  out << round << "," << m.avg_travel_time_s << "," << m.avg_queue_veh << ","
      << m.vehicles_exited << "\n";
}

double round_duration(const ExperimentConfig& cfg) {
  return cfg.eval_duration_s > 0.0 ? cfg.eval_duration_s : cfg.schedule.round_duration_s;
}

int cmd_simulate(const CommonArgs& args, const std::string& controller_name) {
  ExperimentConfig cfg = load_and_override(args);
  ensure_out_dir(cfg.out_dir);
  Network net = build_network(cfg.scenario);
  const double duration = round_duration(cfg);
  const uint64_t seed = derive_seed(cfg.seed, "simulate");

  Metrics m;
  if (controller_name == "fixed-time") {
    FixedTimeController ctrl(net);
    m = evaluate_policy(net, seed, duration, controller_policy(ctrl));
  } else if (controller_name == "max-pressure") {
    MaxPressureController ctrl;
    m = evaluate_policy(net, seed, duration, controller_policy(ctrl));
  } else if (controller_name == "dept") {
    if (args.checkpoint.empty()) throw ConfigError("--controller dept requires --checkpoint");
    auto model = load_checkpoint(args.checkpoint, net.graph());
    m = evaluate_policy(net, seed, duration, greedy_policy(*model), model->config().t_max);
  } else {
    throw ConfigError("unknown controller '" + controller_name + "'");
  }

  append_sim_metrics(fs::path(cfg.out_dir) / "sim_metrics.csv", 0, m);
  std::printf("controller=%s AvgTT=%.2f AvgQue=%.4f vehicles=%ld\n", controller_name.c_str(),
              m.avg_travel_time_s, m.avg_queue_veh, m.vehicles_exited);
  return 0;
}

int cmd_train(const CommonArgs& args) {
  ExperimentConfig cfg = load_and_override(args);
  ensure_out_dir(cfg.out_dir);
  Network net = build_network(cfg.scenario);

  TrainOptions opts;
  opts.encoder = cfg.encoder;
  opts.schedule = cfg.schedule;
  opts.flags = parse_ablation(cfg.ablation);
  opts.prefit = cfg.prefit;
  opts.seed = cfg.seed;
  opts.workers = cfg.workers;
  opts.eval_duration_s = cfg.eval_duration_s;

  const fs::path out(cfg.out_dir);
  std::ofstream curve = open_out(out / "curve.csv");
  curve << "round,stage,loss,avg_tt,avg_que,epsilon\n";
  const fs::path sim_csv = out / "sim_metrics.csv";

  TrainResult result = train(net, opts, [&](const CurvePoint& p) {
    curve << p.round << "," << p.stage << "," << p.loss << "," << p.avg_tt << "," << p.avg_que
          << "," << p.epsilon << "\n";
    curve.flush();
    Metrics m;
    m.avg_travel_time_s = p.avg_tt;
    m.avg_queue_veh = p.avg_que;
    m.vehicles_exited = p.vehicles_served;
    append_sim_metrics(sim_csv, p.round, m);
    std::printf("round=%d stage=%s loss=%.5f AvgTT=%.2f AvgQue=%.4f eps=%.3f\n", p.round,
                p.stage.c_str(), p.loss, p.avg_tt, p.avg_que, p.epsilon);
    std::fflush(stdout);
  });

  const fs::path ck = out / "checkpoint.json";
  save_checkpoint(*result.model, ck.string());
  if (result.diverged) {
    std::fprintf(stderr, "training diverged; checkpoint saved to %s\n", ck.string().c_str());
    return 2;
  }
  std::printf("checkpoint=%s rounds=%zu\n", ck.string().c_str(), result.curve.size());
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  ExperimentConfig cfg = load_and_override(args);
  if (args.checkpoint.empty()) throw ConfigError("evaluate requires --checkpoint");
  Network net = build_network(cfg.scenario);
  auto model = load_checkpoint(args.checkpoint, net.graph());
  const Metrics m = evaluate_policy(net, derive_seed(cfg.seed, "evaluate"), round_duration(cfg),
                                    greedy_policy(*model), model->config().t_max);
  std::printf("AvgTT=%.2f AvgQue=%.4f vehicles=%ld\n", m.avg_travel_time_s, m.avg_queue_veh,
              m.vehicles_exited);
  return 0;
}

/// Two nodes 300 m apart, two blocks, two heads: the standard full-model
/// finite-difference instance.
int cmd_grad_check(uint64_t seed) {
  CpsGraph graph = CpsGraph::build({{0, 0.0, 0.0}, {1, 300.0, 0.0}},
                                   {{0, 1, 300.0}, {1, 0, 300.0}});
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 16;
  cfg.policy_dim = 4;
  cfg.action_count = 3;
  cfg.feature_dim = 5;
  cfg.t_max = 2;
  DeptModel model(cfg, graph, /*mean_speed=*/100.0, seed);

  Rng rng(derive_seed(seed, "grad-check-input"));
  TokenInput in;
  const int64_t n = 2 * cfg.t_max;
  in.features = rng.normal_tensor({n, cfg.feature_dim}, 0.0, 1.0);
  for (int64_t t = 0; t < n; ++t) {
    in.actions.push_back(rng.uniform_int(0, cfg.action_count - 1));
    in.valid.push_back(1);
  }
  // A zero Q-head would decouple sum(Q) from the encoder; make it generic.
  model.params().find("enc.qhead.w")->value =
      rng.normal_tensor({cfg.action_count, cfg.d_model}, 0.0, 0.5);
  model.params().find("enc.qhead.b")->value =
      rng.normal_tensor({1, cfg.action_count}, 0.0, 0.5);

  std::vector<Parameter*> params;
  for (const auto& p : model.params().all()) params.push_back(p.get());
  const double err = gradient_check([&] { return sum(model.forward_q(in)); }, params);
  std::printf("max_rel_err=%.3e parameters=%lld\n", err,
              static_cast<long long>(model.params().total_count()));
  if (err >= 1e-4) {
    std::fprintf(stderr, "gradient check failed: %.3e >= 1e-4\n", err);
    return 2;
  }
  return 0;
}

void write_matrix_csv(const fs::path& path, const Tensor& m, const std::string& component,
                      int block, int head, int step) {
  std::ofstream out = open_out(path);
  out << "# component=" << component << " block=" << block << " head=" << head
      << " step=" << step << " rows=" << m.rows() << " cols=" << m.cols() << "\n";
  out.precision(17);
  for (int64_t r = 0; r < m.rows(); ++r) {
    for (int64_t c = 0; c < m.cols(); ++c) {
      if (c) out << ",";
      out << m.at(r, c);
    }
    out << "\n";
  }
}

int cmd_dump_attention(const CommonArgs& args, int block, int head, int step) {
  ExperimentConfig cfg = load_and_override(args);
  ensure_out_dir(cfg.out_dir);
  Network net = build_network(cfg.scenario);

  std::unique_ptr<DeptModel> model;
  if (!args.checkpoint.empty()) {
    model = load_checkpoint(args.checkpoint, net.graph());
  } else {
    // Fresh pre-fitted model per the config's ablation arm.
    AblationFlags flags = parse_ablation(cfg.ablation);
    EncoderConfig ec = cfg.encoder;
    ec.action_count = kPhaseCount;
    ec.feature_dim = 2 * kMovementsPerIntersection;
    ec.use_priors = flags.priors;
    ec.use_cone_decay = flags.priors && flags.cone_decay;
    model = std::make_unique<DeptModel>(ec, net.graph(), cfg.prefit.mean_speed,
                                        derive_seed(cfg.seed, "model"));
    if (flags.priors && flags.pre_fit)
      model->run_prefit(cfg.prefit, derive_seed(cfg.seed, "prefit"));
  }
  if (block < 0) block = model->config().layers - 1;
  if (block >= model->config().layers || head >= model->config().heads)
    throw ConfigError("--block/--head out of range for this model");

  // Drive the scenario greedily to the requested decision step, then dump.
  SimState state = init_state(net, derive_seed(cfg.seed, "dump"));
  HistoryTracker tracker(net.intersection_count(), 2 * kMovementsPerIntersection,
                         model->config().t_max);
  TokenInput snap;
  for (int s = 0; s <= step; ++s) {
    tracker.push_observation(observation_features(net, state));
    snap = tracker.snapshot();
    if (s == step) break;
    const std::vector<int> action = model->greedy_actions(snap);
    dept::step(net, state, action, net.params.decision_interval_s);
    tracker.push_action(action);
  }

  const AttentionDump dump = model->dump_attention(snap, block, head);
  const fs::path out(cfg.out_dir);
  const std::string tag =
      "attn_b" + std::to_string(block) + "_h" + std::to_string(head) + "_s" + std::to_string(step);
  write_matrix_csv(out / (tag + "_cone.csv"), dump.cone, "cone", block, head, step);
  write_matrix_csv(out / (tag + "_time_lut.csv"), dump.time_lut, "time_lut", block, head, step);
  write_matrix_csv(out / (tag + "_residual.csv"), dump.residual, "residual", block, head, step);
  write_matrix_csv(out / (tag + "_total.csv"), dump.total, "total", block, head, step);
  std::printf("wrote %s_{cone,time_lut,residual,total}.csv in %s\n", tag.c_str(),
              cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delayed-propagation transformer controller for grid traffic signals"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string controller = "fixed-time";
  int block = -1, head = 0, step = 30;
  uint64_t gc_seed = 0;

  auto add_common = [&](CLI::App* cmd, bool need_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config JSON");
    if (need_config) opt->required();
    cmd->add_option("--seed", [&args](const CLI::results_t& r) {
      args.seed = std::stoull(r[0]);
      return true;
    }, "override the config seed");
    cmd->add_option("--out", [&args](const CLI::results_t& r) {
      args.out_dir = r[0];
      return true;
    }, "override the output directory");
    cmd->add_option("--ablation", [&args](const CLI::results_t& r) {
      args.ablation = r[0];
      return true;
    }, "full|no-pre-fit|no-cone|tte");
    cmd->add_option("--workers", [&args](const CLI::results_t& r) {
      args.workers = std::stoi(r[0]);
      return true;
    }, "parallel rollout workers");
    cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint JSON");
  };

  auto* sim = app.add_subcommand("simulate", "run one controller episode and print metrics");
  add_common(sim);
  sim->add_option("--controller", controller, "fixed-time|max-pressure|dept");

  auto* tr = app.add_subcommand("train", "run the two-stage training pipeline");
  add_common(tr);

  auto* ev = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  add_common(ev);

  auto* gc = app.add_subcommand("grad-check", "full-model finite-difference check");
  gc->add_option("--seed", gc_seed, "instance seed");

  auto* da = app.add_subcommand("dump-attention", "export attention score components as CSV");
  add_common(da);
  da->add_option("--block", block, "encoder block (default: last)");
  da->add_option("--head", head, "attention head");
  da->add_option("--step", step, "decision step to sample at");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(args, controller);
    if (tr->parsed()) return cmd_train(args);
    if (ev->parsed()) return cmd_evaluate(args);
    if (gc->parsed()) return cmd_grad_check(gc_seed);
    if (da->parsed()) return cmd_dump_attention(args, block, head, step);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
