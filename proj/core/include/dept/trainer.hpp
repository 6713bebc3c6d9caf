#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dept/controllers.hpp"
#include "dept/encoder.hpp"
#include "dept/optim.hpp"
#include "dept/prior.hpp"
#include "dept/sim.hpp"

namespace dept {

/// Replay record: input snapshots rich enough to reassemble tokens, the joint
/// action, per-node rewards, and the successor snapshot.
struct Transition {
  TokenInput state;
  std::vector<int> action;
  std::vector<double> reward;
  TokenInput next_state;
  bool terminal = false;
  int round = 0;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);
  void push(Transition t);
  size_t size() const { return items_.size(); }
  const Transition& at(size_t i) const { return items_[i]; }
  std::vector<size_t> sample_indices(size_t batch, Rng& rng) const;

 private:
  size_t capacity_;
  size_t next_ = 0;
  std::vector<Transition> items_;
};

struct TrainSchedule {
  int total_rounds = 200;
  int il_rounds = 100;
  double round_duration_s = 14400.0;  // 4 simulated hours
  int epochs_per_round = 100;         // gradient updates per round
  int batch_size = 64;
  int replay_capacity = 50000;
  int target_sync_period = 500;  // updates between target refreshes
  double eps_start = 1.0;
  double eps_end = 0.05;
  double discount = 0.9;
  double il_learning_rate = 1e-3;
  double rl_learning_rate = 1e-4;

  void validate() const;
};

struct AblationFlags {
  bool pre_fit = true;
  bool cone_decay = true;
  bool priors = true;  // false reproduces the plain transformer encoder arm

  void validate() const;
};

/// Rolling per-node observation/action history; builds lag-major token
/// inputs with episode-start lags flagged invalid.
class HistoryTracker {
 public:
  HistoryTracker(int node_count, int feature_dim, int t_max);
  void reset();
  /// Observation at the current decision step, one feature row per node.
  void push_observation(std::vector<std::vector<double>> per_node);
  /// Joint action chosen at the current decision step.
  void push_action(const std::vector<int>& joint);
  /// Snapshot for the latest pushed observation.
  TokenInput snapshot() const;

 private:
  int node_count_, feature_dim_, t_max_;
  std::vector<std::vector<std::vector<double>>> observations_;  // per step per node
  std::vector<std::vector<int>> actions_;                       // per step
};

/// Scale applied to raw lane counts before they enter the token features.
inline constexpr double kFeatureScale = 0.1;

std::vector<std::vector<double>> observation_features(const Network& net, const SimState& state);
std::vector<double> node_rewards(const Network& net, const SimState& state);

/// Policy: token snapshot plus full simulator view -> joint action.
using ActionFn =
    std::function<std::vector<int>(const TokenInput&, const Network&, const SimState&)>;

ActionFn controller_policy(SignalController& controller);
ActionFn greedy_policy(const DeptModel& model);
ActionFn epsilon_greedy_policy(const DeptModel& model, double epsilon, Rng& rng);

struct EpisodeResult {
  Metrics metrics;
  int transitions = 0;
};

/// Runs one seeded episode, snapshotting token inputs at depth `t_max`; when
/// `replay` is given, transitions are recorded.
EpisodeResult run_episode(const Network& net, uint64_t env_seed, double duration_s,
                          const ActionFn& policy, int t_max, ReplayBuffer* replay = nullptr,
                          int round_tag = 0);

/// Parallel collection: `workers` independent episodes with derived seeds,
/// merged into the replay in worker order. Metrics are averaged.
EpisodeResult collect_round(const Network& net, uint64_t env_seed, double duration_s,
                            const ActionFn& policy, ReplayBuffer& replay, int round_tag,
                            int t_max, int workers = 1);

/// Behavior cloning on the teacher's recorded actions; returns the mean
/// cross-entropy over the batch.
double il_update(DeptModel& model, AdamOptimizer& opt, const ReplayBuffer& replay,
                 const std::vector<size_t>& batch);

/// Double-DQN regression targets: online argmax, target evaluation.
std::vector<double> ddqn_targets(const Tensor& q_next_online, const Tensor& q_next_target,
                                 const std::vector<double>& reward, double discount,
                                 bool terminal);

/// One Double-DQN update over the batch; returns the mean Huber loss.
double ddqn_update(DeptModel& online, const DeptModel& target, AdamOptimizer& opt,
                   const ReplayBuffer& replay, const std::vector<size_t>& batch, double discount);

struct CurvePoint {
  int round = 0;
  std::string stage;  // "il" or "rl"
  double loss = 0.0;
  double avg_tt = 0.0;
  double avg_que = 0.0;
  double epsilon = 0.0;
  long vehicles_served = 0;
};

struct TrainOptions {
  EncoderConfig encoder;
  TrainSchedule schedule;
  AblationFlags flags;
  PrefitConfig prefit;
  uint64_t seed = 0;
  int workers = 1;
  /// Duration of the per-round greedy evaluation episode (0: round duration).
  double eval_duration_s = 0.0;
};

struct TrainResult {
  std::unique_ptr<DeptModel> model;
  std::vector<CurvePoint> curve;
  PrefitReport prefit_report;
  bool diverged = false;
};

/// Two-stage pipeline: optional prior pre-fitting, imitation rounds driven by
/// the max-pressure teacher, then epsilon-greedy rounds trained with
/// Double-DQN. Emits one learning-curve point per round from a fixed-seed
/// greedy evaluation episode.
TrainResult train(const Network& net, TrainOptions opts,
                  const std::function<void(const CurvePoint&)>& on_round = nullptr);

/// Greedy evaluation of an arbitrary policy. Baseline controllers ignore the
/// token snapshot, so t_max only matters for model policies.
Metrics evaluate_policy(const Network& net, uint64_t env_seed, double duration_s,
                        const ActionFn& policy, int t_max = 1);

}  // namespace dept
