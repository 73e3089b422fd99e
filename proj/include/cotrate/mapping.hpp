#pragma once

// Voxel fusion of point-wise traversability, RANSAC ground plane and the
// 2.5D elevation map.

#include <array>
#include <map>
#include <optional>

#include "cotrate/synthworld.hpp"
#include "cotrate/visual.hpp"

namespace cotrate::mapping {

enum class Fusion { Ema, Count };

struct Voxel {
  double trav = 0.0;
  double weight = 0.0;  // number of updates
  double mean_z = 0.0;  // mean world z of the points that hit the voxel
};

struct VoxelMap {
  double resolution = 0.25;
  double lambda = 0.2;
  Fusion fusion = Fusion::Ema;
  std::map<std::array<int, 3>, Voxel> voxels;

  std::array<int, 3> key_of(const Eigen::Vector3d& p) const;
};

VoxelMap make_voxel_map(double resolution, double lambda = 0.2, Fusion fusion = Fusion::Ema);

struct ScoredPoints {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;  // sensor frame
  Vector scores;
};

/// Sensor frame -> continuous prediction-map pixel coordinates (row, col).
struct AffineCamera {
  Eigen::Matrix<double, 2, 3> sensor_to_pixel;

  Eigen::Vector2d project(const Eigen::Vector3d& p) const;
};

/// Camera for an axis-aligned top-down window viewed from `pose`, for a
/// prediction map upsampled by `factor` with aligned corners.
AffineCamera make_camera(const synth::Pose& pose, const synth::ImageWindow& window, int factor = 1);

/// Bilinear value of a grid at continuous (row, col); coordinates within half
/// a pixel outside the pixel-center hull clamp to the border.
double bilinear(const Matrix& grid, double row, double col);

/// Points landing on the prediction map get its bilinearly interpolated value; others are dropped.
ScoredPoints project_points(const synth::PointCloud& cloud, const visual::PredictionMap& prediction,
                            const AffineCamera& camera);

/// Fuses scored points (sensor frame) into the map after transforming them by `pose`.
void integrate(VoxelMap& map, const ScoredPoints& points, const synth::Pose& pose);

struct PlaneModel {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;  // plane: normal . p = offset
  double inlier_fraction = 0.0;

  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) - offset; }
};

/// RANSAC over 3-point hypotheses followed by a least-squares refit on the inliers.
PlaneModel fit_ground_plane(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, int iterations = 200,
                            double inlier_tol = 0.05, std::uint64_t seed = 0);

struct GridGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double resolution = 0.25;
  int rows = 0;
  int cols = 0;
};

struct ElevationMap {
  GridGeometry geometry;
  Matrix height;
  Matrix trav;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> observed;

  int rows() const { return geometry.rows; }
  int cols() const { return geometry.cols; }
};

/// Column-wise reduction over voxels between the plane and h_max (a small
/// negative tolerance admits ground voxels). Cell height is the highest
/// qualifying voxel, traversability the weight-averaged voxel value.
ElevationMap reduce_to_elevation(const VoxelMap& map, const PlaneModel& plane, double h_max = 1.0,
                                 std::optional<GridGeometry> geometry = std::nullopt, double ground_tol = 0.05);

/// All voxel mean points, for plane fitting.
Eigen::Matrix<double, Eigen::Dynamic, 3> voxel_points(const VoxelMap& map);

}  // namespace cotrate::mapping
