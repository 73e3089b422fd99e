#include "cotrate/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace cotrate::planner {

namespace {

bool in_grid(const mapping::ElevationMap& map, Cell c) {
  return c.row >= 0 && c.col >= 0 && c.row < map.rows() && c.col < map.cols();
}

bool is_node(const mapping::ElevationMap& map, Cell c) { return in_grid(map, c) && map.observed(c.row, c.col); }

double segment_length(const mapping::ElevationMap& map, Cell a, Cell b) {
  const double res = map.geometry.resolution;
  const double dx = (b.col - a.col) * res, dy = (b.row - a.row) * res;
  const double dz = map.height(b.row, b.col) - map.height(a.row, a.col);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

double edge_cost(const mapping::ElevationMap& map, Cell a, Cell b, double w_trav) {
  require(w_trav >= 0.0, ErrorKind::InvalidInput, "w_trav must be non-negative");
  require(is_node(map, a) && is_node(map, b), ErrorKind::InvalidEdge, "edge endpoint is not an observed cell");
  require(a != b && std::abs(a.row - b.row) <= 1 && std::abs(a.col - b.col) <= 1, ErrorKind::InvalidEdge,
          "cells are not 8-adjacent");
  const double t = 0.5 * (map.trav(a.row, a.col) + map.trav(b.row, b.col));
  return segment_length(map, a, b) * (1.0 + (1.0 - t) * w_trav);
}

Path evaluate_path(const mapping::ElevationMap& map, const std::vector<Cell>& cells, double w_trav) {
  Path p;
  p.cells = cells;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    p.total_cost += edge_cost(map, cells[i - 1], cells[i], w_trav);
    p.total_length += segment_length(map, cells[i - 1], cells[i]);
  }
  return p;
}

std::optional<Path> plan(const mapping::ElevationMap& map, const PlanQuery& query) {
  require(query.w_trav >= 0.0, ErrorKind::InvalidInput, "w_trav must be non-negative");
  require(is_node(map, query.start) && is_node(map, query.goal), ErrorKind::InvalidInput,
          "start and goal must be observed cells");
  require(query.start != query.goal, ErrorKind::InvalidInput, "start equals goal");
  const int rows = map.rows(), cols = map.cols();
  const double res = map.geometry.resolution;
  auto index = [cols](Cell c) { return c.row * cols + c.col; };
  auto heuristic = [&](Cell c) {
    return res * std::hypot(static_cast<double>(c.row - query.goal.row), static_cast<double>(c.col - query.goal.col));
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(static_cast<std::size_t>(rows * cols), inf);
  std::vector<int> parent(static_cast<std::size_t>(rows * cols), -1);
  std::vector<char> closed(static_cast<std::size_t>(rows * cols), 0);

  using Entry = std::tuple<double, double, int>;  // f, g, index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  g[static_cast<std::size_t>(index(query.start))] = 0.0;
  open.emplace(heuristic(query.start), 0.0, index(query.start));
  const int goal = index(query.goal);
  while (!open.empty()) {
    const auto [f, gc, idx] = open.top();
    open.pop();
    if (gc > g[static_cast<std::size_t>(idx)] || closed[static_cast<std::size_t>(idx)]) continue;
    if (idx == goal) break;
    closed[static_cast<std::size_t>(idx)] = 1;
    const Cell cur{idx / cols, idx % cols};
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const Cell nb{cur.row + dr, cur.col + dc};
        if (!is_node(map, nb)) continue;
        const int ni = index(nb);
        const double cand = gc + edge_cost(map, cur, nb, query.w_trav);
        if (cand < g[static_cast<std::size_t>(ni)]) {
          g[static_cast<std::size_t>(ni)] = cand;
          parent[static_cast<std::size_t>(ni)] = idx;
          closed[static_cast<std::size_t>(ni)] = 0;  // reopen
          open.emplace(cand + heuristic(nb), cand, ni);
        }
      }
    }
  }
  if (!std::isfinite(g[static_cast<std::size_t>(goal)])) return std::nullopt;
  std::vector<Cell> cells;
  for (int i = goal; i >= 0; i = parent[static_cast<std::size_t>(i)]) cells.push_back({i / cols, i % cols});
  std::reverse(cells.begin(), cells.end());
  Path p = evaluate_path(map, cells, query.w_trav);
  p.total_cost = g[static_cast<std::size_t>(goal)];
  return p;
}

}  // namespace cotrate::planner
