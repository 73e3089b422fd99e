#pragma once

// Terrain-aware A* over an 8-connected elevation grid.

#include <optional>
#include <vector>

#include "cotrate/mapping.hpp"

namespace cotrate::planner {

struct Cell {
  int row = 0;
  int col = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct PlanQuery {
  Cell start;
  Cell goal;
  double w_trav = 1.0;
};

struct Path {
  std::vector<Cell> cells;
  double total_cost = 0.0;
  double total_length = 0.0;  // 3D meters
};

/// sqrt(l^2 + dz^2) * (1 + (1 - mean trav) * w_trav) between adjacent observed cells.
double edge_cost(const mapping::ElevationMap& map, Cell a, Cell b, double w_trav);

/// Minimum-cost path; nullopt when the goal is unreachable.
std::optional<Path> plan(const mapping::ElevationMap& map, const PlanQuery& query);

/// Sum of edge costs and 3D length along `cells`.
Path evaluate_path(const mapping::ElevationMap& map, const std::vector<Cell>& cells, double w_trav);

}  // namespace cotrate::planner
