#pragma once

// Deterministic synthetic terrain world: terrain layout, robot trajectories,
// multimodal sensor ticks, backbone-feature stand-in images and LiDAR clouds.
// Every generator is a pure function of its inputs and seed.

#include <cstdint>
#include <string>
#include <vector>

#include "cotrate/common.hpp"

namespace cotrate::synth {

/// Per-channel sinusoid driving sensor synthesis.
struct ChannelSignature {
  double amplitude = 1.0;
  double frequency = 1.0;  // Hz
  double phase = 0.0;      // rad
  double noise_std = 0.0;
};

struct ChannelGroup {
  std::string name;
  int channels = 1;
  double rate_hz = 100.0;
  bool torque = false;
};

using SensorLayout = std::vector<ChannelGroup>;

/// imu(6@100Hz) joint(4@50) contact(2@25) torque(4@50) cmd_vel(2@10) velocity(2@20).
SensorLayout default_sensor_layout();
int channel_count(const SensorLayout& layout);

struct TerrainSpec {
  int id = 0;
  std::string name;
  double effort_u = 0.0;
  std::vector<ChannelSignature> signature;
  std::uint64_t proto_seed = 0;
};

/// Builds a terrain whose sensor signature grows with effort: rougher terrain
/// shakes harder and faster. Jitter from `seed` keeps signatures distinct.
TerrainSpec make_terrain(int id, std::string name, double effort_u, const SensorLayout& layout,
                         std::uint64_t seed, double noise_std);

/// Six terrains in learning order; terrain 0 is the smooth reference.
std::vector<TerrainSpec> default_terrains(const SensorLayout& layout, double noise_std = 0.05,
                                          std::uint64_t seed = 1);

/// Axis-aligned top-down patch window.
struct ImageWindow {
  double center_x = 0.0;
  double center_y = 0.0;
  double patch_size = 0.25;
  int rows = 16;
  int cols = 16;

  /// Continuous (row, col) coordinates of a world point; integers are patch centers.
  Eigen::Vector2d to_patch(double x, double y) const;
  Eigen::Vector2d patch_center(int row, int col) const;
  bool contains(double x, double y) const;
};

struct SensingSpec {
  double torque_gain = 1.0;
  int feature_dim = 64;
  /// Expected norm of the additive feature noise before renormalization.
  double feature_noise = 0.05;
  int window_rows = 16;
  int window_cols = 16;
  double patch_size = 0.25;
  double look_ahead = 0.0;
  double lidar_range = 3.0;
};

struct WorldMap {
  Eigen::MatrixXi cells;  // terrain ids
  Matrix elevation;       // meters
  double resolution = 0.25;
  std::vector<TerrainSpec> terrains;
  SensorLayout layout;
  SensingSpec sensing;

  int rows() const { return static_cast<int>(cells.rows()); }
  int cols() const { return static_cast<int>(cells.cols()); }
  bool inside(double x, double y) const;
  /// Cell index (row, col) containing a world point; throws out-of-bounds.
  std::pair<int, int> cell_of(double x, double y) const;
  int terrain_at(double x, double y) const;
  double elevation_at(double x, double y) const;
  const TerrainSpec& terrain(int id) const;
  Eigen::Vector2d cell_center(int row, int col) const;
};

struct WorldConfig {
  std::vector<TerrainSpec> terrains;
  SensorLayout layout;
  SensingSpec sensing;
  double resolution = 0.25;
  double elevation_amplitude = 0.0;
};

WorldConfig default_world_config(double noise_std = 0.05);

struct Pose {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

struct SensorTick {
  double t = 0.0;
  std::vector<double> channels;
};

/// Ticks of one channel group at its native rate.
struct SensorStream {
  ChannelGroup group;
  std::vector<double> timestamps;
  Matrix values;  // ticks x group channels
};

struct PatchFeatureImage {
  ImageWindow window;
  Matrix features;             // (rows*cols) x C, patch index = row*cols + col
  Eigen::MatrixXi terrain_gt;  // rows x cols, evaluation only
  double t = 0.0;

  int rows() const { return window.rows; }
  int cols() const { return window.cols; }
};

struct PointCloud {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;  // sensor frame
  std::vector<int> terrain;
};

/// Voronoi partition over well-spread sites; site i carries terrains[i].
WorldMap gen_world(const WorldConfig& config, std::uint64_t seed, int n_terrains, int rows, int cols);

/// High-effort block filling the map except a U-shaped low-effort corridor
/// (three-cell-wide bands along the first and last columns and the last rows).
WorldMap gen_corridor_world(const WorldConfig& config, int rows, int cols, int corridor_terrain,
                            int block_terrain);

struct MotionSpec {
  double speed = 0.5;  // m/s
};

/// Tour through every terrain region, then random waypoints.
std::vector<Pose> gen_trajectory(const WorldMap& world, std::uint64_t seed, double duration, double rate,
                                 const MotionSpec& motion = {});

/// Random waypoint walk confined to one terrain's interior cells.
std::vector<Pose> gen_terrain_sequence(const WorldMap& world, int terrain_id, std::uint64_t seed,
                                       double duration, double rate, double start_time = 0.0,
                                       const MotionSpec& motion = {});

SensorTick sample_sensor_tick(const WorldMap& world, const Pose& pose, std::uint64_t seed);

/// Pose at time t by linear interpolation along a trajectory (clamped at the ends).
Pose pose_at(const std::vector<Pose>& trajectory, double t);

/// Samples every channel group at its native rate over the trajectory's span.
std::vector<SensorStream> sample_sensor_streams(const WorldMap& world, const std::vector<Pose>& trajectory,
                                                std::uint64_t seed);

/// Unit-norm visual prototype of a terrain.
Vector terrain_prototype(const TerrainSpec& terrain, int dim);

ImageWindow image_window(const WorldMap& world, const Pose& pose);

PatchFeatureImage render_patch_features(const WorldMap& world, const Pose& pose, std::uint64_t seed);

PointCloud sample_lidar(const WorldMap& world, const Pose& pose, int n_points, std::uint64_t seed);

/// Sensor frame -> world frame.
Eigen::Vector3d sensor_to_world(const Pose& pose, const Eigen::Vector3d& p);

}  // namespace cotrate::synth
