#pragma once

// Effort, segmentation mIoU, forgetting curves and score-quality metrics.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotrate/planner.hpp"
#include "cotrate/supervision.hpp"
#include "cotrate/synthworld.hpp"

namespace cotrate::eval {

using EffortTable = std::map<int, double>;

EffortTable effort_table(const synth::WorldMap& world);

struct EffortResult {
  double effort = 0.0;
  double epl = 0.0;
  double length = 0.0;
  bool empty = false;
};

/// U = sum over segments of u * ds with u split evenly between the segment's
/// end cells; ds is the 3D length on the world's elevation.
EffortResult path_effort(const planner::Path& path, const mapping::GridGeometry& grid, const synth::WorldMap& world,
                         const EffortTable& table);

/// Same metric over world-frame polyline vertices.
EffortResult polyline_effort(std::span<const Eigen::Vector2d> vertices, const synth::WorldMap& world,
                             const EffortTable& table);

struct IntervalStat {
  double mean = 0.0;
  double std = 0.0;
};
using TerrainStats = std::map<int, IntervalStat>;

/// Mean and population std of supervision values per ground-truth terrain.
TerrainStats terrain_stats(std::span<const supervision::SupervisionMask> masks, std::span<const Eigen::MatrixXi> labels);

/// Terrain whose mean +- 2 std interval contains v (nearest center on overlap,
/// lower id on equal distance); nullopt when no interval contains v.
std::optional<int> classify(double v, const TerrainStats& stats);

struct SegmentationResult {
  std::map<int, double> iou;  // percent
  double miou = 0.0;          // percent
  std::vector<int> missing_stats;
};

SegmentationResult segm_2d(std::span<const Matrix> predictions, std::span<const Eigen::MatrixXi> labels,
                           const TerrainStats& stats);

/// Over observed cells; `labels` indexed like the map grid.
SegmentationResult segm_25d(const mapping::ElevationMap& map, const Eigen::MatrixXi& labels, const TerrainStats& stats);

/// Ground-truth terrain of every elevation-map cell (cells outside the world get -1).
Eigen::MatrixXi grid_labels(const mapping::GridGeometry& grid, const synth::WorldMap& world);

using TerrainScores = std::map<int, std::vector<double>>;

struct ScoreQuality {
  double pairwise_overlap = 0.0;
  double avg_range = 0.0;
  double stability = 1.0;
  double correlation = 0.0;
  bool overlap_defined = true;
  bool correlation_defined = true;
};

/// Histogram intersection of two score sets over `bins` uniform bins in [0,1].
double histogram_overlap(std::span<const double> a, std::span<const double> b, int bins = 32);

double pearson(std::span<const double> x, std::span<const double> y);

ScoreQuality score_quality(const TerrainScores& after, const TerrainScores* before, const EffortTable& table,
                           int bins = 32);

double hyper_objective(const ScoreQuality& q);

/// segm_2d mIoU after each increment; `predictions[i]` holds increment i's test-set predictions.
std::vector<double> forgetting_curve(std::span<const std::vector<Matrix>> predictions,
                                     std::span<const Eigen::MatrixXi> labels, const TerrainStats& stats);

struct MetricReport {
  double effort = 0.0;
  double epl = 0.0;
  double effort_baseline = 0.0;
  double epl_baseline = 0.0;
  double miou_2d = 0.0;
  double miou_25d = 0.0;
  std::vector<double> forgetting;
  ScoreQuality score;
  double hyper = 0.0;
  std::map<int, double> terrain_mean_score;
  std::map<std::string, std::string> notes;
};

}  // namespace cotrate::eval
