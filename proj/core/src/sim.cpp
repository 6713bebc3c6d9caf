#include "dept/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dept {

const std::array<Movement, kMovementsPerIntersection>& movement_table() {
  static const std::array<Movement, kMovementsPerIntersection> table = {{
      {Dir::West, Dir::East},   {Dir::West, Dir::North},  {Dir::West, Dir::South},
      {Dir::East, Dir::West},   {Dir::East, Dir::South},  {Dir::East, Dir::North},
      {Dir::South, Dir::North}, {Dir::South, Dir::West},  {Dir::South, Dir::East},
      {Dir::North, Dir::South}, {Dir::North, Dir::East},  {Dir::North, Dir::West},
  }};
  return table;
}

const std::array<std::vector<int>, kPhaseCount>& phase_table() {
  static const std::array<std::vector<int>, kPhaseCount> table = {{
      {0, 2, 3, 5},    // W->E, W->S, E->W, E->N
      {1, 4},          // W->N, E->S
      {6, 8, 9, 11},   // S->N, S->E, N->S, N->W
      {7, 10},         // S->W, N->E
  }};
  return table;
}

FlowPreset parse_flow_preset(const std::string& name) {
  if (name == "grid-bi") return FlowPreset::GridBi;
  if (name == "grid-uni") return FlowPreset::GridUni;
  throw std::invalid_argument("unknown flow preset '" + name + "' (grid-bi|grid-uni)");
}

int Network::travel_time_s() const {
  return static_cast<int>(std::lround(lane_length_m / params.free_flow_mps));
}

CpsGraph Network::graph() const {
  std::vector<GraphNode> nodes;
  for (const Intersection& in : intersections) nodes.push_back({in.id, in.x, in.y});
  std::vector<GraphEdge> edges;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int id = r * cols + c;
      if (c + 1 < cols) {
        edges.push_back({id, id + 1, lane_length_m});
        edges.push_back({id + 1, id, lane_length_m});
      }
      if (r + 1 < rows) {
        edges.push_back({id, id + cols, lane_length_m});
        edges.push_back({id + cols, id, lane_length_m});
      }
    }
  return CpsGraph::build(std::move(nodes), std::move(edges));
}

long SimState::in_network() const {
  long n = 0;
  for (const auto& q : queue) n += static_cast<long>(q.size());
  for (const auto& f : inflight) n += static_cast<long>(f.size());
  for (const auto& b : backlog) n += static_cast<long>(b.size());
  return n;
}

namespace {

// Grid neighbor in the heading direction; row 0 is the northern edge.
int neighbor_of(int rows, int cols, int id, Dir heading) {
  const int r = id / cols;
  const int c = id % cols;
  switch (heading) {
    case Dir::East:
      return c + 1 < cols ? id + 1 : -1;
    case Dir::West:
      return c > 0 ? id - 1 : -1;
    case Dir::North:
      return r > 0 ? id - cols : -1;
    case Dir::South:
      return r + 1 < rows ? id + cols : -1;
  }
  return -1;
}

Dir opposite(Dir d) {
  switch (d) {
    case Dir::West:
      return Dir::East;
    case Dir::East:
      return Dir::West;
    case Dir::South:
      return Dir::North;
    case Dir::North:
      return Dir::South;
  }
  return Dir::West;
}

int movement_id(Dir from, Dir to) {
  const auto& table = movement_table();
  for (int m = 0; m < kMovementsPerIntersection; ++m)
    if (table[static_cast<size_t>(m)].from == from && table[static_cast<size_t>(m)].to == to)
      return m;
  throw std::logic_error("movement_id: no such movement");
}

}  // namespace

Network build_grid_network(int rows, int cols, double lane_length_m, FlowPreset preset) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("build_grid_network: grid must be at least 1x1");
  if (lane_length_m <= 0.0)
    throw std::invalid_argument("build_grid_network: lane length must be positive");

  Network net;
  net.rows = rows;
  net.cols = cols;
  net.lane_length_m = lane_length_m;
  const int capacity =
      std::max(1, static_cast<int>(lane_length_m / net.params.jam_spacing_m));

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      Intersection in;
      in.id = r * cols + c;
      in.x = static_cast<double>(c) * lane_length_m;
      in.y = -static_cast<double>(r) * lane_length_m;
      for (int m = 0; m < kMovementsPerIntersection; ++m) {
        Lane lane;
        lane.intersection = in.id;
        lane.movement = m;
        lane.length_m = lane_length_m;
        lane.capacity = capacity;
        in.lanes[static_cast<size_t>(m)] = static_cast<int>(net.lanes.size());
        net.lanes.push_back(lane);
      }
      net.intersections.push_back(in);
    }

  // Straight-continuation downstream lane for each movement.
  for (Lane& lane : net.lanes) {
    const Movement mv = movement_table()[static_cast<size_t>(lane.movement)];
    const int next = neighbor_of(rows, cols, lane.intersection, mv.to);
    if (next >= 0) {
      const int cont = movement_id(opposite(mv.to), mv.to);
      lane.downstream_lane =
          net.intersections[static_cast<size_t>(next)].lanes[static_cast<size_t>(cont)];
    }
  }

  // Straight-line flows; rates follow the bi-/uni-directional presets.
  auto straight_route = [&](int start, Dir heading) {
    std::vector<int> route;
    const int m = movement_id(opposite(heading), heading);
    for (int id = start; id >= 0; id = neighbor_of(rows, cols, id, heading))
      route.push_back(net.intersections[static_cast<size_t>(id)].lanes[static_cast<size_t>(m)]);
    return route;
  };
  const double kMajorRate = 300.0;  // veh/lane/hour, W-E corridors
  const double kMinorRate = 90.0;   // veh/lane/hour, S-N corridors
  for (int r = 0; r < rows; ++r) {
    net.flows.push_back({straight_route(r * cols, Dir::East), kMajorRate});
    if (preset == FlowPreset::GridBi)
      net.flows.push_back({straight_route(r * cols + cols - 1, Dir::West), kMajorRate});
  }
  for (int c = 0; c < cols; ++c) {
    net.flows.push_back({straight_route(c, Dir::South), kMinorRate});  // N->S
    if (preset == FlowPreset::GridBi)
      net.flows.push_back({straight_route((rows - 1) * cols + c, Dir::North), kMinorRate});
  }
  return net;
}

SimState init_state(const Network& net, uint64_t seed) {
  SimState s;
  s.queue.resize(static_cast<size_t>(net.lane_count()));
  s.inflight.resize(static_cast<size_t>(net.lane_count()));
  s.backlog.resize(net.flows.size());
  s.phase.assign(static_cast<size_t>(net.intersection_count()), 0);
  s.credit.assign(static_cast<size_t>(net.lane_count()), 0.0);
  s.rng = Rng(derive_seed(seed, "sim"));
  return s;
}

std::pair<Network, SimState> build_grid(int rows, int cols, double lane_length_m,
                                        FlowPreset preset, uint64_t seed) {
  Network net = build_grid_network(rows, cols, lane_length_m, preset);
  SimState state = init_state(net, seed);
  return {std::move(net), std::move(state)};
}

void step(const Network& net, SimState& state, const std::vector<int>& actions, int duration_s) {
  if (static_cast<int>(actions.size()) != net.intersection_count())
    throw std::invalid_argument("step: joint action size mismatch");
  for (int a : actions)
    if (a < 0 || a >= kPhaseCount)
      throw std::invalid_argument("step: invalid phase index " + std::to_string(a));
  for (size_t i = 0; i < actions.size(); ++i) state.phase[i] = actions[static_cast<size_t>(i)];

  const int travel = net.travel_time_s();
  std::vector<uint8_t> green(static_cast<size_t>(net.lane_count()), 0);
  for (const Intersection& in : net.intersections)
    for (int m : phase_table()[static_cast<size_t>(state.phase[static_cast<size_t>(in.id)])])
      green[static_cast<size_t>(in.lanes[static_cast<size_t>(m)])] = 1;

  for (int tick = 0; tick < duration_s; ++tick) {
    // Boundary arrivals into per-flow backlogs.
    for (size_t f = 0; f < net.flows.size(); ++f) {
      const int n = state.rng.poisson(net.flows[f].rate_veh_per_hour / 3600.0);
      for (int k = 0; k < n; ++k) {
        const int id = static_cast<int>(state.vehicles.size());
        state.vehicles.push_back({static_cast<int>(f), static_cast<double>(state.clock_s), -1.0, 0});
        state.backlog[f].push_back(id);
        ++state.entered;
      }
    }

    // Backlog vehicles enter the first lane while it has space.
    for (size_t f = 0; f < net.flows.size(); ++f) {
      const int entry = net.flows[f].route.front();
      while (!state.backlog[f].empty() &&
             state.lane_occupancy(entry) < net.lanes[static_cast<size_t>(entry)].capacity) {
        const int id = state.backlog[f].front();
        state.backlog[f].pop_front();
        state.inflight[static_cast<size_t>(entry)].push_back({id, state.clock_s + travel});
      }
    }

    // Link traversal completes: join the queue tail.
    for (auto& fl : state.inflight) {
      while (!fl.empty() && fl.front().second <= state.clock_s) {
        const int id = fl.front().first;
        const int lane =
            net.flows[static_cast<size_t>(state.vehicles[static_cast<size_t>(id)].flow)]
                .route[static_cast<size_t>(state.vehicles[static_cast<size_t>(id)].route_pos)];
        state.queue[static_cast<size_t>(lane)].push_back(id);
        fl.pop_front();
      }
    }

    // Signal-gated discharge at saturation rate, capped by downstream space.
    for (int lane = 0; lane < net.lane_count(); ++lane) {
      if (!green[static_cast<size_t>(lane)]) {
        state.credit[static_cast<size_t>(lane)] = 0.0;
        continue;
      }
      double& credit = state.credit[static_cast<size_t>(lane)];
      credit = std::min(credit + net.params.saturation_veh_per_s, 1.0);
      auto& q = state.queue[static_cast<size_t>(lane)];
      while (credit >= 1.0 && !q.empty()) {
        const int id = q.front();
        VehicleRecord& veh = state.vehicles[static_cast<size_t>(id)];
        const auto& route = net.flows[static_cast<size_t>(veh.flow)].route;
        if (veh.route_pos + 1 < static_cast<int>(route.size())) {
          const int next = route[static_cast<size_t>(veh.route_pos + 1)];
          if (state.lane_occupancy(next) >= net.lanes[static_cast<size_t>(next)].capacity)
            break;  // blocked by downstream jam
          q.pop_front();
          veh.route_pos += 1;
          state.inflight[static_cast<size_t>(next)].push_back({id, state.clock_s + travel});
        } else {
          q.pop_front();
          veh.exit_s = static_cast<double>(state.clock_s);
          ++state.exited;
        }
        credit -= 1.0;
      }
    }

    for (const auto& q : state.queue) state.queue_integral += static_cast<double>(q.size());
    ++state.ticks_observed;
    ++state.clock_s;
  }
}

LocalState observe(const Network& net, const SimState& state, int intersection) {
  if (intersection < 0 || intersection >= net.intersection_count())
    throw std::out_of_range("observe: intersection out of range");
  LocalState ls;
  ls.cur_time = static_cast<double>(state.clock_s);
  const Intersection& in = net.intersections[static_cast<size_t>(intersection)];
  for (int m = 0; m < kMovementsPerIntersection; ++m) {
    const int lane = in.lanes[static_cast<size_t>(m)];
    ls.num_in.push_back(state.lane_occupancy(lane));
    ls.num_que.push_back(static_cast<int>(state.queue[static_cast<size_t>(lane)].size()));
  }
  return ls;
}

Metrics metrics(const Network& net, const SimState& state, double horizon_s) {
  Metrics m;
  m.vehicles_entered = state.entered;
  m.vehicles_exited = state.exited;
  if (!state.vehicles.empty()) {
    double total = 0.0;
    for (const VehicleRecord& v : state.vehicles)
      total += (v.exit_s >= 0.0 ? v.exit_s : horizon_s) - v.entry_s;
    m.avg_travel_time_s = total / static_cast<double>(state.vehicles.size());
  }
  if (state.ticks_observed > 0)
    m.avg_queue_veh = state.queue_integral /
                      (static_cast<double>(state.ticks_observed) * net.lane_count());
  return m;
}

}  // namespace dept
