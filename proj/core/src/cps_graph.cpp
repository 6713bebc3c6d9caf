#include "dept/cps_graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dept {

CpsGraph CpsGraph::build(std::vector<GraphNode> nodes, std::vector<GraphEdge> edges) {
  if (nodes.empty()) throw std::invalid_argument("CpsGraph: at least one node required");
  const int n = static_cast<int>(nodes.size());
  std::vector<bool> seen(static_cast<size_t>(n), false);
  for (const GraphNode& node : nodes) {
    if (node.id < 0 || node.id >= n)
      throw std::invalid_argument("CpsGraph: node id " + std::to_string(node.id) +
                                  " outside dense range 0.." + std::to_string(n - 1));
    if (seen[static_cast<size_t>(node.id)])
      throw std::invalid_argument("CpsGraph: duplicate node id " + std::to_string(node.id));
    seen[static_cast<size_t>(node.id)] = true;
  }
  for (const GraphEdge& e : edges) {
    if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n)
      throw std::invalid_argument("CpsGraph: dangling edge endpoint " + std::to_string(e.from) +
                                  "->" + std::to_string(e.to));
  }

  CpsGraph g;
  g.nodes_.resize(static_cast<size_t>(n));
  for (GraphNode& node : nodes) g.nodes_[static_cast<size_t>(node.id)] = node;
  g.edges_ = std::move(edges);
  g.dist_.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = g.nodes_[static_cast<size_t>(i)].x - g.nodes_[static_cast<size_t>(j)].x;
      const double dy = g.nodes_[static_cast<size_t>(i)].y - g.nodes_[static_cast<size_t>(j)].y;
      g.dist_[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)] =
          std::sqrt(dx * dx + dy * dy);
    }
  return g;
}

double CpsGraph::distance(int i, int j) const {
  const int n = node_count();
  if (i < 0 || i >= n || j < 0 || j >= n)
    throw std::out_of_range("CpsGraph::distance: node out of range");
  return dist_[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)];
}

int64_t token_index(int node, int lag, int node_count, int t_max) {
  if (node < 0 || node >= node_count)
    throw std::out_of_range("token_index: node " + std::to_string(node) + " out of range");
  if (lag < 0 || lag >= t_max)
    throw std::out_of_range("token_index: lag " + std::to_string(lag) + " outside 0.." +
                            std::to_string(t_max - 1));
  return static_cast<int64_t>(lag) * node_count + node;
}

TokenIndex token_coords(int64_t flat, int node_count, int t_max) {
  if (flat < 0 || flat >= static_cast<int64_t>(node_count) * t_max)
    throw std::out_of_range("token_coords: flat index out of range");
  TokenIndex t;
  t.node = static_cast<int>(flat % node_count);
  t.lag = static_cast<int>(flat / node_count);
  return t;
}

std::vector<uint8_t> causal_mask(int node_count, int t_max) {
  if (node_count <= 0 || t_max <= 0)
    throw std::invalid_argument("causal_mask: sizes must be positive");
  const int64_t n = static_cast<int64_t>(node_count) * t_max;
  std::vector<uint8_t> mask(static_cast<size_t>(n * n), 0);
  for (int64_t q = 0; q < n; ++q) {
    const int query_lag = static_cast<int>(q / node_count);
    for (int64_t k = 0; k < n; ++k) {
      const int key_lag = static_cast<int>(k / node_count);
      if (key_lag < query_lag) mask[static_cast<size_t>(q * n + k)] = 1;
    }
  }
  return mask;
}

}  // namespace dept
