#include "cotrate/synthworld.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <numbers>
#include <random>

namespace cotrate::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t time_key(double t) {
  // microsecond grid keeps ticks at identical timestamps on identical noise
  return static_cast<std::uint64_t>(std::llround(t * 1e6));
}

}  // namespace

SensorLayout default_sensor_layout() {
  return {
      {"imu", 6, 100.0, false},   {"joint", 4, 50.0, false},   {"contact", 2, 25.0, false},
      {"torque", 4, 50.0, true},  {"cmd_vel", 2, 10.0, false}, {"velocity", 2, 20.0, false},
  };
}

int channel_count(const SensorLayout& layout) {
  int s = 0;
  for (const auto& g : layout) s += g.channels;
  return s;
}

TerrainSpec make_terrain(int id, std::string name, double effort_u, const SensorLayout& layout,
                         std::uint64_t seed, double noise_std) {
  require(effort_u >= 0.0 && effort_u <= 1.0, ErrorKind::InvalidConfig, "effort_u outside [0,1]");
  require(noise_std >= 0.0, ErrorKind::InvalidConfig, "negative noise_std");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(id) + 17));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);

  TerrainSpec spec;
  spec.id = id;
  spec.name = std::move(name);
  spec.effort_u = effort_u;
  spec.proto_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(id));
  for (const auto& group : layout) {
    // keep every sinusoid well below the group's Nyquist rate
    const double base_freq = std::min(2.0, 0.12 * group.rate_hz);
    for (int c = 0; c < group.channels; ++c) {
      ChannelSignature sig;
      sig.noise_std = noise_std;
      sig.phase = phase(rng);
      if (group.torque) {
        sig.amplitude = 0.2 + 0.8 * effort_u;
        sig.frequency = base_freq * (0.6 + 1.2 * effort_u);
      } else if (group.name == "cmd_vel") {
        sig.amplitude = 0.1;
        sig.frequency = 0.1;
      } else {
        sig.amplitude = 0.3 + 1.2 * effort_u + 0.1 * jitter(rng);
        sig.frequency = base_freq * (0.6 + 1.2 * effort_u) * (1.0 + 0.05 * jitter(rng));
      }
      spec.signature.push_back(sig);
    }
  }
  return spec;
}

std::vector<TerrainSpec> default_terrains(const SensorLayout& layout, double noise_std, std::uint64_t seed) {
  struct Entry {
    const char* name;
    double effort;
  };
  static constexpr Entry kEntries[] = {
      {"asphalt", 0.10}, {"cobble_grass", 0.40}, {"grass", 0.65},
      {"gravel", 0.50},  {"dirt", 0.25},         {"tall_grass", 0.90},
  };
  std::vector<TerrainSpec> out;
  int id = 0;
  for (const auto& e : kEntries) {
    out.push_back(make_terrain(id, e.name, e.effort, layout, seed, noise_std));
    ++id;
  }
  return out;
}

WorldConfig default_world_config(double noise_std) {
  WorldConfig config;
  config.layout = default_sensor_layout();
  config.terrains = default_terrains(config.layout, noise_std);
  return config;
}

Eigen::Vector2d ImageWindow::to_patch(double x, double y) const {
  const double row = (y - center_y) / patch_size + (rows - 1) / 2.0;
  const double col = (x - center_x) / patch_size + (cols - 1) / 2.0;
  return {row, col};
}

Eigen::Vector2d ImageWindow::patch_center(int row, int col) const {
  return {center_x + (col - (cols - 1) / 2.0) * patch_size, center_y + (row - (rows - 1) / 2.0) * patch_size};
}

bool ImageWindow::contains(double x, double y) const {
  const Eigen::Vector2d rc = to_patch(x, y);
  return rc(0) >= -0.5 && rc(0) < rows - 0.5 && rc(1) >= -0.5 && rc(1) < cols - 0.5;
}

bool WorldMap::inside(double x, double y) const {
  return std::isfinite(x) && std::isfinite(y) && x >= 0.0 && y >= 0.0 && x < cols() * resolution &&
         y < rows() * resolution;
}

std::pair<int, int> WorldMap::cell_of(double x, double y) const {
  require(inside(x, y), ErrorKind::OutOfBounds,
          "point (" + std::to_string(x) + ", " + std::to_string(y) + ") outside the world");
  const int col = std::min(cols() - 1, static_cast<int>(std::floor(x / resolution)));
  const int row = std::min(rows() - 1, static_cast<int>(std::floor(y / resolution)));
  return {row, col};
}

int WorldMap::terrain_at(double x, double y) const {
  const auto [r, c] = cell_of(x, y);
  return cells(r, c);
}

double WorldMap::elevation_at(double x, double y) const {
  const auto [r, c] = cell_of(x, y);
  return elevation(r, c);
}

const TerrainSpec& WorldMap::terrain(int id) const {
  for (const auto& t : terrains) {
    if (t.id == id) return t;
  }
  throw Error(ErrorKind::InvalidInput, "unknown terrain id " + std::to_string(id));
}

Eigen::Vector2d WorldMap::cell_center(int row, int col) const {
  return {(col + 0.5) * resolution, (row + 0.5) * resolution};
}

namespace {

WorldMap empty_world(const WorldConfig& config, int rows, int cols) {
  require(config.resolution > 0.0, ErrorKind::InvalidConfig, "resolution must be positive");
  WorldMap world;
  world.cells = Eigen::MatrixXi::Zero(rows, cols);
  world.elevation = Matrix::Zero(rows, cols);
  world.resolution = config.resolution;
  world.layout = config.layout;
  world.sensing = config.sensing;
  return world;
}

void fill_elevation(WorldMap& world, double amplitude, std::uint64_t seed) {
  if (amplitude == 0.0) return;
  std::mt19937_64 rng(mix_seed(seed, 77));
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const double p1 = phase(rng), p2 = phase(rng);
  const double lx = world.cols() * world.resolution, ly = world.rows() * world.resolution;
  for (int r = 0; r < world.rows(); ++r) {
    for (int c = 0; c < world.cols(); ++c) {
      const Eigen::Vector2d p = world.cell_center(r, c);
      world.elevation(r, c) = amplitude * std::sin(kTwoPi * 1.3 * p.x() / lx + p1) * std::cos(kTwoPi * 0.9 * p.y() / ly + p2);
    }
  }
}

}  // namespace

WorldMap gen_world(const WorldConfig& config, std::uint64_t seed, int n_terrains, int rows, int cols) {
  require(n_terrains >= 2, ErrorKind::InvalidInput, "need at least two terrains");
  require(rows >= 8 && cols >= 8, ErrorKind::InvalidInput, "world must be at least 8x8");
  require(static_cast<std::size_t>(n_terrains) <= config.terrains.size(), ErrorKind::InvalidConfig,
          "n_terrains exceeds configured terrain list");
  WorldMap world = empty_world(config, rows, cols);
  world.terrains.assign(config.terrains.begin(), config.terrains.begin() + n_terrains);

  // best-candidate sampling spreads the Voronoi sites evenly
  std::mt19937_64 rng(mix_seed(seed, 1));
  std::uniform_int_distribution<int> rdist(0, rows - 1), cdist(0, cols - 1);
  std::vector<Eigen::Vector2i> sites;
  while (static_cast<int>(sites.size()) < n_terrains) {
    Eigen::Vector2i best(-1, -1);
    double best_d = -1.0;
    for (int k = 0; k < 12; ++k) {
      Eigen::Vector2i cand(rdist(rng), cdist(rng));
      double d = std::numeric_limits<double>::infinity();
      for (const auto& s : sites) d = std::min(d, static_cast<double>((s - cand).squaredNorm()));
      if (d > 0.0 && d > best_d) {
        best_d = d;
        best = cand;
      }
    }
    if (best(0) >= 0) sites.push_back(best);
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      int owner = 0;
      int best_d = std::numeric_limits<int>::max();
      for (int s = 0; s < n_terrains; ++s) {
        const int d = (sites[s] - Eigen::Vector2i(r, c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          owner = s;
        }
      }
      world.cells(r, c) = world.terrains[static_cast<std::size_t>(owner)].id;
    }
  }
  fill_elevation(world, config.elevation_amplitude, seed);
  return world;
}

WorldMap gen_corridor_world(const WorldConfig& config, int rows, int cols, int corridor_terrain, int block_terrain) {
  require(rows >= 8 && cols >= 8, ErrorKind::InvalidInput, "world must be at least 8x8");
  WorldMap world = empty_world(config, rows, cols);
  for (const auto& t : config.terrains) {
    if (t.id == corridor_terrain || t.id == block_terrain) world.terrains.push_back(t);
  }
  require(world.terrains.size() == 2, ErrorKind::InvalidConfig, "corridor/block terrains must be distinct and configured");
  constexpr int kBand = 3;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const bool corridor = c < kBand || c >= cols - kBand || r >= rows - kBand;
      world.cells(r, c) = corridor ? corridor_terrain : block_terrain;
    }
  }
  return world;
}

namespace {

std::vector<Eigen::Vector2i> cells_of_terrain(const WorldMap& world, int terrain_id, bool interior) {
  std::vector<Eigen::Vector2i> out;
  for (int r = 0; r < world.rows(); ++r) {
    for (int c = 0; c < world.cols(); ++c) {
      if (world.cells(r, c) != terrain_id) continue;
      bool ok = true;
      if (interior) {
        for (int dr = -2; dr <= 2 && ok; ++dr) {
          for (int dc = -2; dc <= 2 && ok; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= world.rows() || cc >= world.cols()) continue;
            ok = world.cells(rr, cc) == terrain_id;
          }
        }
      }
      if (ok) out.emplace_back(r, c);
    }
  }
  return out;
}

/// Drives toward successive waypoints at constant speed, sampling at `rate`.
std::vector<Pose> follow_waypoints(const WorldMap& world, Eigen::Vector2d start, double start_time, int n,
                                   double rate, double speed,
                                   const std::function<Eigen::Vector2d()>& next_waypoint) {
  std::vector<Pose> poses;
  poses.reserve(static_cast<std::size_t>(n));
  Eigen::Vector2d pos = start;
  Eigen::Vector2d target = next_waypoint();
  double yaw = 0.0;
  const double step = speed / rate;
  for (int i = 0; i < n; ++i) {
    Pose p;
    p.t = start_time + i / rate;
    p.x = pos.x();
    p.y = pos.y();
    Eigen::Vector2d delta = target - pos;
    int guard = 0;
    while (delta.norm() < 1e-9 && guard++ < 8) {
      target = next_waypoint();
      delta = target - pos;
    }
    if (delta.norm() > 1e-9) yaw = std::atan2(delta.y(), delta.x());
    p.yaw = yaw;
    poses.push_back(p);
    if (delta.norm() <= step) {
      pos = target;
      target = next_waypoint();
    } else {
      pos += delta.normalized() * step;
    }
    (void)world;
  }
  return poses;
}

}  // namespace

std::vector<Pose> gen_trajectory(const WorldMap& world, std::uint64_t seed, double duration, double rate,
                                 const MotionSpec& motion) {
  require(duration > 0.0 && rate > 0.0, ErrorKind::InvalidInput, "duration and rate must be positive");
  require(world.rows() > 0 && world.cols() > 0 && !world.terrains.empty(), ErrorKind::InvalidInput, "empty world");
  std::mt19937_64 rng(mix_seed(seed, 2));

  // one representative cell per terrain: the cell nearest the region centroid
  std::vector<Eigen::Vector2d> tour;
  for (const auto& t : world.terrains) {
    auto cells = cells_of_terrain(world, t.id, false);
    if (cells.empty()) continue;
    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (const auto& c : cells) centroid += c.cast<double>();
    centroid /= static_cast<double>(cells.size());
    const auto best = *std::min_element(cells.begin(), cells.end(), [&](const auto& a, const auto& b) {
      return (a.template cast<double>() - centroid).squaredNorm() < (b.template cast<double>() - centroid).squaredNorm();
    });
    tour.push_back(world.cell_center(best(0), best(1)));
  }
  std::shuffle(tour.begin(), tour.end(), rng);

  std::uniform_int_distribution<int> rdist(0, world.rows() - 1), cdist(0, world.cols() - 1);
  std::size_t next = 0;
  auto waypoint = [&]() -> Eigen::Vector2d {
    if (next < tour.size()) return tour[next++];
    return world.cell_center(rdist(rng), cdist(rng));
  };
  const Eigen::Vector2d start = world.cell_center(rdist(rng), cdist(rng));
  const int n = static_cast<int>(std::llround(duration * rate));
  return follow_waypoints(world, start, 0.0, n, rate, motion.speed, waypoint);
}

std::vector<Pose> gen_terrain_sequence(const WorldMap& world, int terrain_id, std::uint64_t seed, double duration,
                                       double rate, double start_time, const MotionSpec& motion) {
  require(duration > 0.0 && rate > 0.0, ErrorKind::InvalidInput, "duration and rate must be positive");
  auto cells = cells_of_terrain(world, terrain_id, true);
  if (cells.empty()) cells = cells_of_terrain(world, terrain_id, false);
  require(!cells.empty(), ErrorKind::InvalidInput, "terrain " + std::to_string(terrain_id) + " absent from world");
  std::mt19937_64 rng(mix_seed(seed, 3 + static_cast<std::uint64_t>(terrain_id)));
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
  auto waypoint = [&]() -> Eigen::Vector2d {
    const auto& c = cells[pick(rng)];
    return world.cell_center(c(0), c(1));
  };
  const Eigen::Vector2d start = waypoint();
  const int n = static_cast<int>(std::llround(duration * rate));
  return follow_waypoints(world, start, start_time, n, rate, motion.speed, waypoint);
}

SensorTick sample_sensor_tick(const WorldMap& world, const Pose& pose, std::uint64_t seed) {
  const TerrainSpec& terrain = world.terrain(world.terrain_at(pose.x, pose.y));
  std::mt19937_64 rng(mix_seed(seed, time_key(pose.t)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  SensorTick tick;
  tick.t = pose.t;
  tick.channels.reserve(terrain.signature.size());
  std::size_t k = 0;
  for (const auto& group : world.layout) {
    for (int c = 0; c < group.channels; ++c, ++k) {
      require(k < terrain.signature.size(), ErrorKind::InvalidConfig, "terrain signature shorter than sensor layout");
      const auto& sig = terrain.signature[k];
      double v = sig.amplitude * std::sin(kTwoPi * sig.frequency * pose.t + sig.phase);
      const double n = gauss(rng);
      if (sig.noise_std > 0.0) v += sig.noise_std * n;
      if (group.torque) v += terrain.effort_u * world.sensing.torque_gain;
      tick.channels.push_back(v);
    }
  }
  return tick;
}

Pose pose_at(const std::vector<Pose>& trajectory, double t) {
  require(!trajectory.empty(), ErrorKind::InvalidInput, "empty trajectory");
  if (t <= trajectory.front().t) return trajectory.front();
  if (t >= trajectory.back().t) return trajectory.back();
  auto it = std::upper_bound(trajectory.begin(), trajectory.end(), t,
                             [](double v, const Pose& p) { return v < p.t; });
  const Pose& b = *it;
  const Pose& a = *(it - 1);
  const double w = (t - a.t) / (b.t - a.t);
  Pose p;
  p.t = t;
  p.x = a.x + w * (b.x - a.x);
  p.y = a.y + w * (b.y - a.y);
  p.yaw = w < 0.5 ? a.yaw : b.yaw;
  return p;
}

std::vector<SensorStream> sample_sensor_streams(const WorldMap& world, const std::vector<Pose>& trajectory,
                                                std::uint64_t seed) {
  require(!trajectory.empty(), ErrorKind::InvalidInput, "empty trajectory");
  const double t0 = trajectory.front().t, t1 = trajectory.back().t;
  std::vector<SensorStream> streams;
  int offset = 0;
  for (const auto& group : world.layout) {
    SensorStream s;
    s.group = group;
    const int n = static_cast<int>(std::floor((t1 - t0) * group.rate_hz + 1e-9)) + 1;
    s.values.resize(n, group.channels);
    for (int i = 0; i < n; ++i) {
      const double t = t0 + i / group.rate_hz;
      const SensorTick tick = sample_sensor_tick(world, pose_at(trajectory, t), seed);
      s.timestamps.push_back(t);
      for (int c = 0; c < group.channels; ++c) s.values(i, c) = tick.channels[static_cast<std::size_t>(offset + c)];
    }
    offset += group.channels;
    streams.push_back(std::move(s));
  }
  return streams;
}

Vector terrain_prototype(const TerrainSpec& terrain, int dim) {
  std::mt19937_64 rng(terrain.proto_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
  return v.normalized();
}

ImageWindow image_window(const WorldMap& world, const Pose& pose) {
  ImageWindow w;
  w.center_x = pose.x + world.sensing.look_ahead * std::cos(pose.yaw);
  w.center_y = pose.y + world.sensing.look_ahead * std::sin(pose.yaw);
  w.patch_size = world.sensing.patch_size;
  w.rows = world.sensing.window_rows;
  w.cols = world.sensing.window_cols;
  return w;
}

PatchFeatureImage render_patch_features(const WorldMap& world, const Pose& pose, std::uint64_t seed) {
  require(world.inside(pose.x, pose.y), ErrorKind::OutOfBounds, "pose outside the world");
  const int dim = world.sensing.feature_dim;
  PatchFeatureImage image;
  image.t = pose.t;
  image.window = image_window(world, pose);
  const int rows = image.window.rows, cols = image.window.cols;
  image.features.resize(rows * cols, dim);
  image.terrain_gt.resize(rows, cols);

  std::vector<std::pair<int, Vector>> protos;
  for (const auto& t : world.terrains) protos.emplace_back(t.id, terrain_prototype(t, dim));

  std::mt19937_64 rng(mix_seed(seed, time_key(pose.t) ^ 0xfeedULL));
  std::normal_distribution<double> gauss(0.0, world.sensing.feature_noise / std::sqrt(static_cast<double>(dim)));
  const double max_x = world.cols() * world.resolution - 1e-9, max_y = world.rows() * world.resolution - 1e-9;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const Eigen::Vector2d p = image.window.patch_center(r, c);
      const int id = world.terrain_at(std::clamp(p.x(), 0.0, max_x), std::clamp(p.y(), 0.0, max_y));
      image.terrain_gt(r, c) = id;
      const Vector* proto = nullptr;
      for (const auto& [pid, v] : protos) {
        if (pid == id) proto = &v;
      }
      Vector f = *proto;
      if (world.sensing.feature_noise > 0.0) {
        for (int k = 0; k < dim; ++k) f(k) += gauss(rng);
      }
      image.features.row(r * cols + c) = f.normalized().transpose();
    }
  }
  return image;
}

Eigen::Vector3d sensor_to_world(const Pose& pose, const Eigen::Vector3d& p) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  return {pose.x + c * p.x() - s * p.y(), pose.y + s * p.x() + c * p.y(), p.z()};
}

PointCloud sample_lidar(const WorldMap& world, const Pose& pose, int n_points, std::uint64_t seed) {
  require(n_points > 0, ErrorKind::InvalidInput, "n_points must be positive");
  require(world.inside(pose.x, pose.y), ErrorKind::OutOfBounds, "pose outside the world");
  std::mt19937_64 rng(mix_seed(seed, time_key(pose.t) ^ 0x1d4aULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double range = world.sensing.lidar_range;
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  PointCloud cloud;
  cloud.points.resize(n_points, 3);
  cloud.terrain.reserve(static_cast<std::size_t>(n_points));
  int k = 0;
  while (k < n_points) {
    const double rad = range * std::sqrt(unit(rng));
    const double ang = kTwoPi * unit(rng);
    const double wx = pose.x + rad * std::cos(ang), wy = pose.y + rad * std::sin(ang);
    if (!world.inside(wx, wy)) continue;
    const double wz = world.elevation_at(wx, wy);
    const double dx = wx - pose.x, dy = wy - pose.y;
    cloud.points.row(k) << c * dx + s * dy, -s * dx + c * dy, wz;
    cloud.terrain.push_back(world.terrain_at(wx, wy));
    ++k;
  }
  return cloud;
}

}  // namespace cotrate::synth
