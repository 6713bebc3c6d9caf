#include <doctest.h>

#include <cmath>

#include "dept/cps_graph.hpp"
#include "dept/rng.hpp"

using namespace dept;

namespace {

CpsGraph grid_graph(int rows, int cols, double spacing, double dx = 0.0, double dy = 0.0) {
  std::vector<GraphNode> nodes;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      nodes.push_back({r * cols + c, c * spacing + dx, -r * spacing + dy});
  return CpsGraph::build(std::move(nodes), {});
}

}  // namespace

TEST_CASE("two nodes 300 m apart") {
  CpsGraph g = CpsGraph::build({{0, 0.0, 0.0}, {1, 300.0, 0.0}}, {{0, 1, 300.0}});
  CHECK(g.distance(0, 1) == doctest::Approx(300.0));
  CHECK(g.distance(1, 0) == doctest::Approx(300.0));
}

TEST_CASE("self distance is zero") {
  CpsGraph g = grid_graph(2, 2, 250.0);
  for (int i = 0; i < 4; ++i) CHECK(g.distance(i, i) == 0.0);
}

TEST_CASE("3x3 grid corner to corner") {
  CpsGraph g = grid_graph(3, 3, 300.0);
  CHECK(g.distance(0, 8) == doctest::Approx(300.0 * std::sqrt(8.0)));
}

TEST_CASE("duplicate and dangling inputs are rejected") {
  CHECK_THROWS_AS(CpsGraph::build({{0, 0, 0}, {0, 1, 1}}, {}), std::invalid_argument);
  CHECK_THROWS_AS(CpsGraph::build({{0, 0, 0}}, {{0, 3, 10.0}}), std::invalid_argument);
  CHECK_THROWS_AS(CpsGraph::build({}, {}), std::invalid_argument);
}

TEST_CASE("distance table is symmetric and obeys the triangle inequality") {
  Rng rng(5);
  std::vector<GraphNode> nodes;
  for (int i = 0; i < 7; ++i) nodes.push_back({i, rng.uniform(-500, 500), rng.uniform(-500, 500)});
  CpsGraph g = CpsGraph::build(std::move(nodes), {});
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      CHECK(g.distance(i, j) == doctest::Approx(g.distance(j, i)));
      for (int k = 0; k < 7; ++k)
        CHECK(g.distance(i, j) <= g.distance(i, k) + g.distance(k, j) + 1e-9);
    }
}

TEST_CASE("distance table invariant under rigid translation") {
  CpsGraph a = grid_graph(3, 2, 300.0);
  CpsGraph b = grid_graph(3, 2, 300.0, 12345.0, -678.0);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) CHECK(a.distance(i, j) == doctest::Approx(b.distance(i, j)));
}

TEST_CASE("token index layout contract") {
  CHECK(token_index(0, 0, 4, 3) == 0);
  CHECK(token_index(2, 1, 4, 3) == 6);
  // paper-scale token count: 36 nodes, 10 lags
  CHECK(token_index(35, 9, 36, 10) == 359);
}

TEST_CASE("token index rejects out-of-range coordinates") {
  CHECK_THROWS_AS(token_index(4, 0, 4, 3), std::out_of_range);
  CHECK_THROWS_AS(token_index(0, 3, 4, 3), std::out_of_range);
  CHECK_THROWS_AS(token_index(-1, 0, 4, 3), std::out_of_range);
}

TEST_CASE("token index is a bijection") {
  const int v = 5, t = 4;
  std::vector<bool> hit(static_cast<size_t>(v * t), false);
  for (int lag = 0; lag < t; ++lag)
    for (int node = 0; node < v; ++node) {
      const int64_t flat = token_index(node, lag, v, t);
      CHECK_FALSE(hit[static_cast<size_t>(flat)]);
      hit[static_cast<size_t>(flat)] = true;
      const TokenIndex back = token_coords(flat, v, t);
      CHECK(back.node == node);
      CHECK(back.lag == lag);
    }
}

TEST_CASE("causal mask follows the future-key rule") {
  const int v = 3, t = 4;
  const auto mask = causal_mask(v, t);
  const int64_t n = static_cast<int64_t>(v) * t;
  for (int64_t q = 0; q < n; ++q)
    for (int64_t k = 0; k < n; ++k) {
      const TokenIndex tq = token_coords(q, v, t);
      const TokenIndex tk = token_coords(k, v, t);
      const bool masked = mask[static_cast<size_t>(q * n + k)] != 0;
      CHECK(masked == (tk.lag < tq.lag));
    }
}

TEST_CASE("causal mask: current-time queries see all history") {
  const int v = 2, t = 5;
  const auto mask = causal_mask(v, t);
  const int64_t n = static_cast<int64_t>(v) * t;
  for (int i = 0; i < v; ++i) {
    const int64_t q = token_index(i, 0, v, t);
    for (int64_t k = 0; k < n; ++k) CHECK(mask[static_cast<size_t>(q * n + k)] == 0);
  }
}

TEST_CASE("causal mask: oldest query sees only the oldest lag") {
  const int v = 2, t = 5;
  const auto mask = causal_mask(v, t);
  const int64_t n = static_cast<int64_t>(v) * t;
  const int64_t q = token_index(0, t - 1, v, t);
  for (int64_t k = 0; k < n; ++k) {
    const TokenIndex tk = token_coords(k, v, t);
    CHECK((mask[static_cast<size_t>(q * n + k)] != 0) == (tk.lag < t - 1));
  }
}

TEST_CASE("equal lags are never masked") {
  const int v = 4, t = 3;
  const auto mask = causal_mask(v, t);
  const int64_t n = static_cast<int64_t>(v) * t;
  for (int lag = 0; lag < t; ++lag)
    for (int i = 0; i < v; ++i)
      for (int j = 0; j < v; ++j) {
        const int64_t q = token_index(i, lag, v, t);
        const int64_t k = token_index(j, lag, v, t);
        CHECK(mask[static_cast<size_t>(q * n + k)] == 0);
      }
}

TEST_CASE("causal mask visibility is monotone in the key lag") {
  const int v = 3, t = 5;
  const auto mask = causal_mask(v, t);
  const int64_t n = static_cast<int64_t>(v) * t;
  for (int64_t q = 0; q < n; ++q)
    for (int j = 0; j < v; ++j)
      for (int rho = 0; rho + 1 < t; ++rho) {
        const bool visible = mask[static_cast<size_t>(q * n + token_index(j, rho, v, t))] == 0;
        const bool visible_older =
            mask[static_cast<size_t>(q * n + token_index(j, rho + 1, v, t))] == 0;
        if (visible) CHECK(visible_older);
      }
}
