#include "dept/controllers.hpp"

#include <cmath>
#include <stdexcept>

namespace dept {

double FixedTimePlan::cycle_s() const {
  double total = 0.0;
  for (double g : green_s) total += g;
  return total;
}

void FixedTimePlan::validate(int phase_count) const {
  if (phase_sequence.size() != green_s.size() || phase_sequence.empty())
    throw std::invalid_argument("FixedTimePlan: sequence/duration size mismatch");
  for (double g : green_s)
    if (g <= 0.0) throw std::invalid_argument("FixedTimePlan: green durations must be positive");
  std::vector<bool> seen(static_cast<size_t>(phase_count), false);
  for (int p : phase_sequence) {
    if (p < 0 || p >= phase_count)
      throw std::invalid_argument("FixedTimePlan: phase index out of range");
    seen[static_cast<size_t>(p)] = true;
  }
  for (bool s : seen)
    if (!s) throw std::invalid_argument("FixedTimePlan: sequence must cover all phases");
}

int fixed_time_phase(const FixedTimePlan& plan, double clock_s) {
  const double cycle = plan.cycle_s();
  double pos = std::fmod(clock_s, cycle);
  if (pos < 0.0) pos += cycle;
  for (size_t i = 0; i < plan.green_s.size(); ++i) {
    pos -= plan.green_s[i];
    if (pos < 0.0) return plan.phase_sequence[i];
  }
  return plan.phase_sequence.front();  // pos == cycle boundary
}

FixedTimePlan derive_fixed_time_plan(const Network& net, int intersection, double cycle_s,
                                     double quantum_s) {
  if (intersection < 0 || intersection >= net.intersection_count())
    throw std::out_of_range("derive_fixed_time_plan: intersection out of range");
  const int quanta = static_cast<int>(std::lround(cycle_s / quantum_s));
  if (quanta < kPhaseCount)
    throw std::invalid_argument("derive_fixed_time_plan: cycle too short for all phases");

  // Nominal demand per movement from the routed flows.
  std::vector<double> demand(kMovementsPerIntersection, 0.0);
  const Intersection& in = net.intersections[static_cast<size_t>(intersection)];
  for (const FlowSpec& flow : net.flows)
    for (int lane : flow.route) {
      if (net.lanes[static_cast<size_t>(lane)].intersection != intersection) continue;
      demand[static_cast<size_t>(net.lanes[static_cast<size_t>(lane)].movement)] +=
          flow.rate_veh_per_hour;
    }
  (void)in;

  std::vector<double> phase_demand(kPhaseCount, 0.0);
  for (int p = 0; p < kPhaseCount; ++p)
    for (int m : phase_table()[static_cast<size_t>(p)])
      phase_demand[static_cast<size_t>(p)] += demand[static_cast<size_t>(m)];

  // One quantum minimum per phase, remainder by highest-averages apportionment.
  std::vector<int> assigned(kPhaseCount, 1);
  for (int q = kPhaseCount; q < quanta; ++q) {
    int best = 0;
    double best_score = -1.0;
    for (int p = 0; p < kPhaseCount; ++p) {
      const double score =
          phase_demand[static_cast<size_t>(p)] / static_cast<double>(assigned[static_cast<size_t>(p)]);
      if (score > best_score) {
        best_score = score;
        best = p;
      }
    }
    assigned[static_cast<size_t>(best)] += 1;
  }

  FixedTimePlan plan;
  for (int p = 0; p < kPhaseCount; ++p) {
    plan.phase_sequence.push_back(p);
    plan.green_s.push_back(quantum_s * assigned[static_cast<size_t>(p)]);
  }
  plan.validate(kPhaseCount);
  return plan;
}

int max_pressure_phase(const MovementQueues& queues) {
  if (static_cast<int>(queues.size()) != kMovementsPerIntersection)
    throw std::invalid_argument("max_pressure_phase: expected one queue pair per movement");
  int best = 0;
  double best_pressure = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < kPhaseCount; ++p) {
    double pressure = 0.0;
    for (int m : phase_table()[static_cast<size_t>(p)])
      pressure += queues[static_cast<size_t>(m)].first - queues[static_cast<size_t>(m)].second;
    if (pressure > best_pressure) {
      best_pressure = pressure;
      best = p;
    }
  }
  return best;
}

std::vector<int> max_pressure_act(const std::vector<MovementQueues>& per_intersection) {
  std::vector<int> actions;
  actions.reserve(per_intersection.size());
  for (const MovementQueues& q : per_intersection) actions.push_back(max_pressure_phase(q));
  return actions;
}

std::vector<MovementQueues> movement_queues(const Network& net, const SimState& state) {
  std::vector<MovementQueues> out(static_cast<size_t>(net.intersection_count()));
  for (const Intersection& in : net.intersections) {
    MovementQueues q(kMovementsPerIntersection);
    for (int m = 0; m < kMovementsPerIntersection; ++m) {
      const Lane& lane = net.lanes[static_cast<size_t>(in.lanes[static_cast<size_t>(m)])];
      const double up =
          static_cast<double>(state.queue[static_cast<size_t>(in.lanes[static_cast<size_t>(m)])].size());
      const double down =
          lane.downstream_lane >= 0
              ? static_cast<double>(state.queue[static_cast<size_t>(lane.downstream_lane)].size())
              : 0.0;
      q[static_cast<size_t>(m)] = {up, down};
    }
    out[static_cast<size_t>(in.id)] = std::move(q);
  }
  return out;
}

FixedTimeController::FixedTimeController(const Network& net, double cycle_s, double quantum_s) {
  for (int i = 0; i < net.intersection_count(); ++i)
    plans_.push_back(derive_fixed_time_plan(net, i, cycle_s, quantum_s));
}

std::vector<int> FixedTimeController::decide(const Network& net, const SimState& state) {
  std::vector<int> actions;
  actions.reserve(plans_.size());
  for (int i = 0; i < net.intersection_count(); ++i)
    actions.push_back(fixed_time_phase(plans_[static_cast<size_t>(i)],
                                       static_cast<double>(state.clock_s)));
  return actions;
}

std::vector<int> MaxPressureController::decide(const Network& net, const SimState& state) {
  return max_pressure_act(movement_queues(net, state));
}

}  // namespace dept
