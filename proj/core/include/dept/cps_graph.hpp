#pragma once

#include <cstdint>
#include <vector>

#include "dept/tensor.hpp"

namespace dept {

/// A physical agent with an immutable 2-D location in meters.
struct GraphNode {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
};

struct GraphEdge {
  int from = 0;
  int to = 0;
  double length_m = 0.0;
};

struct TokenIndex {
  int node = 0;
  int lag = 0;  // 0 = current decision step, larger = further past
};

/// The physical-world graph: node locations, directed road edges, and the
/// Euclidean distance table. Immutable after construction.
class CpsGraph {
 public:
  static CpsGraph build(std::vector<GraphNode> nodes, std::vector<GraphEdge> edges);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }

  double distance(int i, int j) const;

  CpsGraph() = default;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
  std::vector<double> dist_;  // row-major |V| x |V|
};

/// Flat token id for node i at lag tau; lag-major layout: tau * |V| + i.
int64_t token_index(int node, int lag, int node_count, int t_max);
TokenIndex token_coords(int64_t flat, int node_count, int t_max);

/// Temporal visibility over token pairs, row = query, col = key. An entry is
/// true (masked) iff the key's timestamp lies strictly in the query's future,
/// i.e. the key lag is smaller than the query lag. Size (V*T)^2, row-major.
std::vector<uint8_t> causal_mask(int node_count, int t_max);

}  // namespace dept
