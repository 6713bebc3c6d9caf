#include "dept/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dept {

namespace {

// Training allocates tensors above glibc's default mmap threshold at a high
// rate; keeping them on the heap free lists avoids mmap/munmap churn.
void tune_allocator() {
#ifdef __GLIBC__
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 64 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

std::vector<size_t> ReplayBuffer::sample_indices(size_t batch, Rng& rng) const {
  if (items_.empty()) throw std::runtime_error("ReplayBuffer: sampling from empty buffer");
  std::vector<size_t> out(batch);
  for (size_t i = 0; i < batch; ++i)
    out[i] = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(items_.size()) - 1));
  return out;
}

void TrainSchedule::validate() const {
  if (total_rounds < 0 || il_rounds < 0 || il_rounds > total_rounds)
    throw std::invalid_argument("TrainSchedule: need 0 <= il_rounds <= total_rounds");
  if (round_duration_s <= 0.0) throw std::invalid_argument("TrainSchedule: round duration <= 0");
  if (discount < 0.0 || discount > 1.0)
    throw std::invalid_argument("TrainSchedule: discount outside [0,1]");
  if (batch_size <= 0 || epochs_per_round < 0 || replay_capacity <= 0 || target_sync_period <= 0)
    throw std::invalid_argument("TrainSchedule: invalid sizes");
  if (il_learning_rate < 0.0 || rl_learning_rate < 0.0)
    throw std::invalid_argument("TrainSchedule: negative learning rate");
}

void AblationFlags::validate() const {
  if (!priors && cone_decay)
    throw std::invalid_argument("AblationFlags: cone decay requires priors");
}

HistoryTracker::HistoryTracker(int node_count, int feature_dim, int t_max)
    : node_count_(node_count), feature_dim_(feature_dim), t_max_(t_max) {
  if (node_count <= 0 || feature_dim <= 0 || t_max <= 0)
    throw std::invalid_argument("HistoryTracker: sizes must be positive");
}

void HistoryTracker::reset() {
  observations_.clear();
  actions_.clear();
}

void HistoryTracker::push_observation(std::vector<std::vector<double>> per_node) {
  if (static_cast<int>(per_node.size()) != node_count_)
    throw std::invalid_argument("HistoryTracker: observation node count mismatch");
  for (const auto& f : per_node)
    if (static_cast<int>(f.size()) != feature_dim_)
      throw std::invalid_argument("HistoryTracker: feature width mismatch");
  if (observations_.size() != actions_.size())
    throw std::logic_error("HistoryTracker: observation pushed twice without an action");
  observations_.push_back(std::move(per_node));
}

void HistoryTracker::push_action(const std::vector<int>& joint) {
  if (static_cast<int>(joint.size()) != node_count_)
    throw std::invalid_argument("HistoryTracker: action node count mismatch");
  if (actions_.size() + 1 != observations_.size())
    throw std::logic_error("HistoryTracker: action pushed before observation");
  actions_.push_back(joint);
}

TokenInput HistoryTracker::snapshot() const {
  if (observations_.empty())
    throw std::logic_error("HistoryTracker: snapshot before first observation");
  const int t = static_cast<int>(observations_.size()) - 1;  // current decision step
  const int64_t n = static_cast<int64_t>(node_count_) * t_max_;

  TokenInput in;
  in.features = Tensor({n, feature_dim_});
  in.actions.assign(static_cast<size_t>(n), 0);
  in.valid.assign(static_cast<size_t>(n), 0);
  for (int lag = 0; lag < t_max_; ++lag) {
    const int step = t - lag;
    if (step < 0) continue;  // before episode start: zero-filled, invalid
    // Action embedded at this lag: the phase in effect at that step, i.e. the
    // previous decision's choice (the current step's action is not yet taken).
    const int act_step = step - 1;
    for (int i = 0; i < node_count_; ++i) {
      const int64_t tok = static_cast<int64_t>(lag) * node_count_ + i;
      const auto& feats = observations_[static_cast<size_t>(step)][static_cast<size_t>(i)];
      for (int f = 0; f < feature_dim_; ++f)
        in.features[tok * feature_dim_ + f] = feats[static_cast<size_t>(f)];
      in.actions[static_cast<size_t>(tok)] =
          act_step >= 0 ? actions_[static_cast<size_t>(act_step)][static_cast<size_t>(i)] : 0;
      in.valid[static_cast<size_t>(tok)] = 1;
    }
  }
  return in;
}

std::vector<std::vector<double>> observation_features(const Network& net, const SimState& state) {
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(net.intersection_count()));
  for (int i = 0; i < net.intersection_count(); ++i) {
    const LocalState ls = observe(net, state, i);
    std::vector<double> f;
    f.reserve(ls.num_in.size() + ls.num_que.size());
    for (int v : ls.num_in) f.push_back(kFeatureScale * v);
    for (int v : ls.num_que) f.push_back(kFeatureScale * v);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<double> node_rewards(const Network& net, const SimState& state) {
  std::vector<double> r;
  r.reserve(static_cast<size_t>(net.intersection_count()));
  for (int i = 0; i < net.intersection_count(); ++i) {
    const LocalState ls = observe(net, state, i);
    double total = 0.0;
    for (int v : ls.num_que) total += v;
    r.push_back(-total);
  }
  return r;
}

ActionFn controller_policy(SignalController& controller) {
  return [&controller](const TokenInput&, const Network& net, const SimState& state) {
    return controller.decide(net, state);
  };
}

ActionFn greedy_policy(const DeptModel& model) {
  return [&model](const TokenInput& in, const Network&, const SimState&) {
    return model.greedy_actions(in);
  };
}

ActionFn epsilon_greedy_policy(const DeptModel& model, double epsilon, Rng& rng) {
  return [&model, epsilon, &rng](const TokenInput& in, const Network& net, const SimState&) {
    std::vector<int> actions;
    const bool need_q = epsilon < 1.0;
    std::vector<int> greedy;
    if (need_q) greedy = model.greedy_actions(in);
    actions.reserve(static_cast<size_t>(net.intersection_count()));
    for (int i = 0; i < net.intersection_count(); ++i) {
      if (rng.uniform() < epsilon)
        actions.push_back(rng.uniform_int(0, kPhaseCount - 1));
      else
        actions.push_back(greedy[static_cast<size_t>(i)]);
    }
    return actions;
  };
}

namespace {

EpisodeResult run_episode_impl(const Network& net, uint64_t env_seed, double duration_s,
                               const ActionFn& policy, ReplayBuffer* replay, int round_tag,
                               int t_max, std::vector<Transition>* sink) {
  SimState state = init_state(net, env_seed);
  const int steps = static_cast<int>(duration_s / net.params.decision_interval_s);
  HistoryTracker tracker(net.intersection_count(), 2 * kMovementsPerIntersection, t_max);

  EpisodeResult result;
  std::optional<Transition> pending;
  for (int stepi = 0; stepi < steps; ++stepi) {
    tracker.push_observation(observation_features(net, state));
    TokenInput snap = tracker.snapshot();
    if (pending) {
      pending->next_state = snap;
      if (sink)
        sink->push_back(std::move(*pending));
      else if (replay)
        replay->push(std::move(*pending));
      ++result.transitions;
      pending.reset();
    }
    const std::vector<int> action = policy(snap, net, state);
    step(net, state, action, net.params.decision_interval_s);
    if (replay || sink) {
      Transition tr;
      tr.state = std::move(snap);
      tr.action = action;
      tr.reward = node_rewards(net, state);
      tr.round = round_tag;
      pending = std::move(tr);
    }
    tracker.push_action(action);
  }
  if (pending) {
    tracker.push_observation(observation_features(net, state));
    pending->next_state = tracker.snapshot();
    pending->terminal = true;
    if (sink)
      sink->push_back(std::move(*pending));
    else if (replay)
      replay->push(std::move(*pending));
    ++result.transitions;
  }
  result.metrics = metrics(net, state, static_cast<double>(state.clock_s));
  return result;
}

}  // namespace

EpisodeResult run_episode(const Network& net, uint64_t env_seed, double duration_s,
                          const ActionFn& policy, int t_max, ReplayBuffer* replay,
                          int round_tag) {
  tune_allocator();
  return run_episode_impl(net, env_seed, duration_s, policy, replay, round_tag, t_max, nullptr);
}

double il_update(DeptModel& model, AdamOptimizer& opt, const ReplayBuffer& replay,
                 const std::vector<size_t>& batch) {
  if (batch.empty()) throw std::invalid_argument("il_update: empty batch");
  tune_allocator();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (size_t idx : batch) {
    const Transition& tr = replay.at(idx);
    std::vector<int64_t> targets(tr.action.begin(), tr.action.end());
    VarPtr loss = cross_entropy_with_logits(model.forward_q(tr.state), targets);
    total += loss->value.item();
    backward(scalar_mul(inv, loss));
  }
  opt.step();
  return total * inv;
}

std::vector<double> ddqn_targets(const Tensor& q_next_online, const Tensor& q_next_target,
                                 const std::vector<double>& reward, double discount,
                                 bool terminal) {
  if (!q_next_online.same_shape(q_next_target))
    throw std::invalid_argument("ddqn_targets: online/target shape mismatch");
  if (static_cast<int64_t>(reward.size()) != q_next_online.rows())
    throw std::invalid_argument("ddqn_targets: reward count mismatch");
  std::vector<double> y(reward);
  if (!terminal) {
    for (int64_t i = 0; i < q_next_online.rows(); ++i) {
      int64_t best = 0;
      for (int64_t a = 1; a < q_next_online.cols(); ++a)
        if (q_next_online.at(i, a) > q_next_online.at(i, best)) best = a;
      y[static_cast<size_t>(i)] += discount * q_next_target.at(i, best);
    }
  }
  for (double v : y)
    if (!std::isfinite(v))
      throw std::runtime_error("ddqn_targets: non-finite bootstrap target");
  return y;
}

double ddqn_update(DeptModel& online, const DeptModel& target, AdamOptimizer& opt,
                   const ReplayBuffer& replay, const std::vector<size_t>& batch,
                   double discount) {
  if (batch.empty()) throw std::invalid_argument("ddqn_update: empty batch");
  tune_allocator();
  const double inv = 1.0 / static_cast<double>(batch.size());
  const int64_t actions = online.config().action_count;
  double total = 0.0;
  for (size_t idx : batch) {
    const Transition& tr = replay.at(idx);
    std::vector<double> y;
    {
      NoGradGuard ng;
      y = ddqn_targets(online.q_values(tr.next_state), target.q_values(tr.next_state), tr.reward,
                       discount, tr.terminal);
    }
    VarPtr q = online.forward_q(tr.state);
    std::vector<int64_t> taken;
    taken.reserve(tr.action.size());
    for (size_t i = 0; i < tr.action.size(); ++i)
      taken.push_back(static_cast<int64_t>(i) * actions + tr.action[i]);
    VarPtr q_taken = gather_rows(reshape(q, {q->value.numel(), 1}), std::move(taken));
    Tensor y_t({static_cast<int64_t>(y.size()), 1});
    for (size_t i = 0; i < y.size(); ++i) y_t[static_cast<int64_t>(i)] = y[i];
    VarPtr loss = huber_loss(q_taken, y_t);
    total += loss->value.item();
    backward(scalar_mul(inv, loss));
  }
  opt.step();
  return total * inv;
}

Metrics evaluate_policy(const Network& net, uint64_t env_seed, double duration_s,
                        const ActionFn& policy, int t_max) {
  return run_episode_impl(net, env_seed, duration_s, policy, nullptr, 0, t_max, nullptr).metrics;
}

TrainResult train(const Network& net, TrainOptions opts,
                  const std::function<void(const CurvePoint&)>& on_round) {
  tune_allocator();
  opts.schedule.validate();
  opts.flags.validate();

  EncoderConfig cfg = opts.encoder;
  cfg.action_count = kPhaseCount;
  cfg.feature_dim = 2 * kMovementsPerIntersection;
  cfg.use_priors = opts.flags.priors;
  cfg.use_cone_decay = opts.flags.priors && opts.flags.cone_decay;

  TrainResult result;
  result.model = std::make_unique<DeptModel>(cfg, net.graph(), opts.prefit.mean_speed,
                                             derive_seed(opts.seed, "model"));
  DeptModel& model = *result.model;
  if (opts.flags.priors && opts.flags.pre_fit)
    result.prefit_report = model.run_prefit(opts.prefit, derive_seed(opts.seed, "prefit"));

  std::unique_ptr<DeptModel> target = model.clone();
  MaxPressureController teacher;
  ReplayBuffer replay(static_cast<size_t>(opts.schedule.replay_capacity));
  Rng explore_rng(derive_seed(opts.seed, "explore"));
  Rng sample_rng(derive_seed(opts.seed, "replay"));

  auto make_optimizer = [&](double lr) {
    std::vector<Parameter*> params;
    for (const auto& p : model.params().all()) params.push_back(p.get());
    return AdamOptimizer(std::move(params), {.learning_rate = lr});
  };
  AdamOptimizer il_opt = make_optimizer(opts.schedule.il_learning_rate);
  AdamOptimizer rl_opt = make_optimizer(opts.schedule.rl_learning_rate);

  const uint64_t eval_seed = derive_seed(opts.seed, "eval");
  const double eval_duration =
      opts.eval_duration_s > 0.0 ? opts.eval_duration_s : opts.schedule.round_duration_s;
  const int rl_rounds = opts.schedule.total_rounds - opts.schedule.il_rounds;
  int updates_done = 0;

  for (int round = 0; round < opts.schedule.total_rounds; ++round) {
    const bool il_stage = round < opts.schedule.il_rounds;
    const uint64_t env_seed = derive_seed(opts.seed, "round", static_cast<uint64_t>(round));
    double epsilon = 0.0;

    ActionFn policy;
    if (il_stage) {
      policy = controller_policy(teacher);
    } else {
      const int k = round - opts.schedule.il_rounds;
      const double frac = rl_rounds > 1 ? static_cast<double>(k) / (rl_rounds - 1) : 0.0;
      epsilon = opts.schedule.eps_start + (opts.schedule.eps_end - opts.schedule.eps_start) * frac;
      policy = epsilon_greedy_policy(model, epsilon, explore_rng);
    }
    collect_round(net, env_seed, opts.schedule.round_duration_s, policy, replay, round,
                  cfg.t_max, opts.workers);

    double loss_sum = 0.0;
    int losses = 0;
    for (int u = 0; u < opts.schedule.epochs_per_round && replay.size() > 0; ++u) {
      const auto batch =
          replay.sample_indices(static_cast<size_t>(opts.schedule.batch_size), sample_rng);
      double loss;
      if (il_stage) {
        loss = il_update(model, il_opt, replay, batch);
      } else {
        loss = ddqn_update(model, *target, rl_opt, replay, batch, opts.schedule.discount);
        if (++updates_done % opts.schedule.target_sync_period == 0)
          target->params().copy_values_from(model.params());
      }
      loss_sum += loss;
      ++losses;
    }
    const double mean_loss = losses > 0 ? loss_sum / losses : 0.0;

    const Metrics eval = [&] {
      auto greedy = greedy_policy(model);
      return run_episode_impl(net, eval_seed, eval_duration, greedy, nullptr, round, cfg.t_max,
                              nullptr)
          .metrics;
    }();

    CurvePoint point{round,        il_stage ? "il" : "rl",
                     mean_loss,    eval.avg_travel_time_s,
                     eval.avg_queue_veh, epsilon,
                     eval.vehicles_exited};
    result.curve.push_back(point);
    if (on_round) on_round(point);

    if (!std::isfinite(mean_loss)) {
      result.diverged = true;
      break;
    }
  }
  return result;
}

EpisodeResult collect_round(const Network& net, uint64_t env_seed, double duration_s,
                            const ActionFn& policy, ReplayBuffer& replay, int round_tag,
                            int t_max, int workers) {
  if (workers <= 1) {
    return run_episode_impl(net, env_seed, duration_s, policy, &replay, round_tag, t_max,
                            nullptr);
  }
  std::vector<std::vector<Transition>> sinks(static_cast<size_t>(workers));
  std::vector<EpisodeResult> results(static_cast<size_t>(workers));
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      const uint64_t seed = derive_seed(env_seed, "worker", static_cast<uint64_t>(w));
      results[static_cast<size_t>(w)] =
          run_episode_impl(net, seed, duration_s, policy, nullptr, round_tag,
                           t_max, &sinks[static_cast<size_t>(w)]);
    });
  }
  for (auto& t : threads) t.join();

  EpisodeResult merged;
  for (int w = 0; w < workers; ++w) {
    for (Transition& tr : sinks[static_cast<size_t>(w)]) replay.push(std::move(tr));
    merged.transitions += results[static_cast<size_t>(w)].transitions;
    merged.metrics.avg_travel_time_s += results[static_cast<size_t>(w)].metrics.avg_travel_time_s;
    merged.metrics.avg_queue_veh += results[static_cast<size_t>(w)].metrics.avg_queue_veh;
    merged.metrics.vehicles_entered += results[static_cast<size_t>(w)].metrics.vehicles_entered;
    merged.metrics.vehicles_exited += results[static_cast<size_t>(w)].metrics.vehicles_exited;
  }
  merged.metrics.avg_travel_time_s /= workers;
  merged.metrics.avg_queue_veh /= workers;
  return merged;
}

}  // namespace dept
