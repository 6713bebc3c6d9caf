#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "dept/sim.hpp"

namespace dept {

/// Cyclic pre-timed plan for one intersection.
struct FixedTimePlan {
  std::vector<int> phase_sequence;
  std::vector<double> green_s;  // per sequence entry, > 0

  double cycle_s() const;
  void validate(int phase_count) const;
};

/// Phase active at the given clock position within the cycle.
int fixed_time_phase(const FixedTimePlan& plan, double clock_s);

/// Plan derivation: greens proportional to the phase's nominal demand from
/// the flow specs, quantized to the decision interval, minimum one quantum
/// per phase, fixed cycle.
FixedTimePlan derive_fixed_time_plan(const Network& net, int intersection, double cycle_s = 60.0,
                                     double quantum_s = 10.0);

/// Per-movement (upstream, downstream) queue counts of one intersection.
using MovementQueues = std::vector<std::pair<double, double>>;

/// Argmax over phases of the summed movement pressure (upstream minus
/// downstream); ties break to the lowest phase index.
int max_pressure_phase(const MovementQueues& queues);
std::vector<int> max_pressure_act(const std::vector<MovementQueues>& per_intersection);

/// Reads (upstream, downstream) queue pairs out of the simulator state;
/// boundary-exiting movements see an empty sink downstream.
std::vector<MovementQueues> movement_queues(const Network& net, const SimState& state);

class SignalController {
 public:
  virtual ~SignalController() = default;
  virtual std::vector<int> decide(const Network& net, const SimState& state) = 0;
};

class FixedTimeController : public SignalController {
 public:
  explicit FixedTimeController(const Network& net, double cycle_s = 60.0, double quantum_s = 10.0);
  std::vector<int> decide(const Network& net, const SimState& state) override;
  const std::vector<FixedTimePlan>& plans() const { return plans_; }

 private:
  std::vector<FixedTimePlan> plans_;
};

class MaxPressureController : public SignalController {
 public:
  std::vector<int> decide(const Network& net, const SimState& state) override;
};

}  // namespace dept
