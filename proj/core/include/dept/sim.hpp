#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "dept/cps_graph.hpp"
#include "dept/rng.hpp"

namespace dept {

enum class Dir : int { West = 0, East = 1, South = 2, North = 3 };

struct Movement {
  Dir from;  // approach the traffic arrives from
  Dir to;    // heading after crossing
};

inline constexpr int kMovementsPerIntersection = 12;
inline constexpr int kPhaseCount = 4;

/// Canonical movement order.
const std::array<Movement, kMovementsPerIntersection>& movement_table();

/// Movements served by each phase: {through+right W/E, left W/E,
/// through+right S/N, left S/N}.
const std::array<std::vector<int>, kPhaseCount>& phase_table();

struct Lane {
  int intersection = 0;
  int movement = 0;
  double length_m = 300.0;
  int capacity = 40;          // length / jam spacing
  int downstream_lane = -1;   // straight continuation; -1 exits the network
};

struct Intersection {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  std::array<int, kMovementsPerIntersection> lanes{};  // global lane ids
};

/// A demand source: a fixed lane route crossed at free-flow speed, fed by a
/// Poisson arrival process.
struct FlowSpec {
  std::vector<int> route;  // ordered global lane ids
  double rate_veh_per_hour = 0.0;
};

struct SimParams {
  double free_flow_mps = 10.0;
  double saturation_veh_per_s = 0.5;  // per movement while green
  double jam_spacing_m = 7.5;
  int tick_s = 1;
  int decision_interval_s = 10;
};

enum class FlowPreset { GridBi, GridUni };
FlowPreset parse_flow_preset(const std::string& name);

struct Network {
  int rows = 0;
  int cols = 0;
  double lane_length_m = 300.0;
  SimParams params;
  std::vector<Intersection> intersections;
  std::vector<Lane> lanes;
  std::vector<FlowSpec> flows;

  int intersection_count() const { return static_cast<int>(intersections.size()); }
  int lane_count() const { return static_cast<int>(lanes.size()); }
  int travel_time_s() const;
  /// Physical graph: intersections with locations, road edges between
  /// adjacent intersections.
  CpsGraph graph() const;
};

struct VehicleRecord {
  int flow = 0;
  double entry_s = 0.0;
  double exit_s = -1.0;  // negative while in the network
  int route_pos = 0;
};

/// Point-queue state: per-lane FIFO queues plus in-flight vehicles that join
/// the queue tail after free-flow link traversal.
struct SimState {
  long clock_s = 0;
  std::vector<std::deque<int>> queue;  // per lane, vehicle ids
  std::vector<std::deque<std::pair<int, long>>> inflight;  // per lane (vehicle, arrival)
  std::vector<std::deque<int>> backlog;  // per flow, generated but not yet on the entry lane
  std::vector<int> phase;                // per intersection
  std::vector<double> credit;            // per-lane discharge credit
  std::vector<VehicleRecord> vehicles;
  Rng rng{0};

  long entered = 0;
  long exited = 0;
  double queue_integral = 0.0;
  long ticks_observed = 0;

  int lane_occupancy(int lane) const {
    return static_cast<int>(queue[static_cast<size_t>(lane)].size() +
                            inflight[static_cast<size_t>(lane)].size());
  }
  long in_network() const;
};

struct LocalState {
  double cur_time = 0.0;
  std::vector<int> num_in;   // vehicles on each incoming lane
  std::vector<int> num_que;  // stopped vehicles on each incoming lane
};

struct Metrics {
  double avg_travel_time_s = 0.0;
  double avg_queue_veh = 0.0;
  long vehicles_entered = 0;
  long vehicles_exited = 0;
};

Network build_grid_network(int rows, int cols, double lane_length_m, FlowPreset preset);
SimState init_state(const Network& net, uint64_t seed);
std::pair<Network, SimState> build_grid(int rows, int cols, double lane_length_m,
                                        FlowPreset preset, uint64_t seed);

/// Advances the simulation by `duration_s` one-second ticks under the given
/// joint action (phase per intersection, 0-based).
void step(const Network& net, SimState& state, const std::vector<int>& actions, int duration_s);

LocalState observe(const Network& net, const SimState& state, int intersection);

/// AvgTT over all generated vehicles (pending ones credited horizon - entry)
/// and the time-average per-lane queue length.
Metrics metrics(const Network& net, const SimState& state, double horizon_s);

}  // namespace dept
