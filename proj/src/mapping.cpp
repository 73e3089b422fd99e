#include "cotrate/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace cotrate::mapping {

std::array<int, 3> VoxelMap::key_of(const Eigen::Vector3d& p) const {
  return {static_cast<int>(std::floor(p.x() / resolution)), static_cast<int>(std::floor(p.y() / resolution)),
          static_cast<int>(std::floor(p.z() / resolution))};
}

VoxelMap make_voxel_map(double resolution, double lambda, Fusion fusion) {
  require(resolution > 0.0, ErrorKind::InvalidConfig, "voxel resolution must be positive");
  require(lambda > 0.0 && lambda <= 1.0, ErrorKind::InvalidConfig, "moving-average weight must lie in (0,1]");
  VoxelMap m;
  m.resolution = resolution;
  m.lambda = lambda;
  m.fusion = fusion;
  return m;
}

Eigen::Vector2d AffineCamera::project(const Eigen::Vector3d& p) const {
  return sensor_to_pixel * Eigen::Vector3d(p.x(), p.y(), 1.0);
}

AffineCamera make_camera(const synth::Pose& pose, const synth::ImageWindow& window, int factor) {
  require(factor >= 1, ErrorKind::InvalidInput, "upsample factor must be >= 1");
  // sensor (x, y) -> world -> patch (row, col) -> pixel
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  Eigen::Matrix3d to_world;
  to_world << c, -s, pose.x, s, c, pose.y, 0, 0, 1;
  Eigen::Matrix<double, 2, 3> to_patch;
  to_patch << 0, 1 / window.patch_size, -window.center_y / window.patch_size + (window.rows - 1) / 2.0,
      1 / window.patch_size, 0, -window.center_x / window.patch_size + (window.cols - 1) / 2.0;
  const double sr = window.rows > 1 ? (window.rows * factor - 1.0) / (window.rows - 1.0) : 1.0;
  const double sc = window.cols > 1 ? (window.cols * factor - 1.0) / (window.cols - 1.0) : 1.0;
  AffineCamera cam;
  cam.sensor_to_pixel = Eigen::DiagonalMatrix<double, 2>(sr, sc) * to_patch * to_world;
  return cam;
}

double bilinear(const Matrix& grid, double row, double col) {
  const double r = std::clamp(row, 0.0, static_cast<double>(grid.rows() - 1));
  const double c = std::clamp(col, 0.0, static_cast<double>(grid.cols() - 1));
  const int r0 = std::min(static_cast<int>(std::floor(r)), static_cast<int>(grid.rows()) - 1);
  const int c0 = std::min(static_cast<int>(std::floor(c)), static_cast<int>(grid.cols()) - 1);
  const int r1 = std::min(r0 + 1, static_cast<int>(grid.rows()) - 1);
  const int c1 = std::min(c0 + 1, static_cast<int>(grid.cols()) - 1);
  const double wr = r - r0, wc = c - c0;
  return (1 - wr) * ((1 - wc) * grid(r0, c0) + wc * grid(r0, c1)) + wr * ((1 - wc) * grid(r1, c0) + wc * grid(r1, c1));
}

ScoredPoints project_points(const synth::PointCloud& cloud, const visual::PredictionMap& prediction,
                            const AffineCamera& camera) {
  const Matrix& grid = prediction.values;
  std::vector<Eigen::Index> kept;
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    const Eigen::Vector2d rc = camera.project(cloud.points.row(i).transpose());
    if (rc(0) < -0.5 || rc(1) < -0.5 || rc(0) >= grid.rows() - 0.5 || rc(1) >= grid.cols() - 0.5) continue;
    kept.push_back(i);
    scores.push_back(bilinear(grid, rc(0), rc(1)));
  }
  ScoredPoints out;
  out.points.resize(static_cast<Eigen::Index>(kept.size()), 3);
  out.scores.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    out.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(kept[k]);
    out.scores(static_cast<Eigen::Index>(k)) = scores[k];
  }
  return out;
}

void integrate(VoxelMap& map, const ScoredPoints& points, const synth::Pose& pose) {
  require(std::isfinite(pose.x) && std::isfinite(pose.y) && std::isfinite(pose.yaw), ErrorKind::InvalidInput,
          "pose must be finite");
  for (Eigen::Index i = 0; i < points.points.rows(); ++i) {
    const Eigen::Vector3d w = synth::sensor_to_world(pose, points.points.row(i).transpose());
    const double s = points.scores(i);
    auto [it, fresh] = map.voxels.try_emplace(map.key_of(w));
    Voxel& v = it->second;
    if (fresh) {
      v.trav = s;
    } else if (map.fusion == Fusion::Ema) {
      v.trav = (1.0 - map.lambda) * v.trav + map.lambda * s;
    } else {
      v.trav += (s - v.trav) / (v.weight + 1.0);
    }
    v.mean_z += (w.z() - v.mean_z) / (v.weight + 1.0);
    v.weight += 1.0;
  }
}

PlaneModel fit_ground_plane(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, int iterations, double inlier_tol,
                            std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  require(n >= 3, ErrorKind::DegenerateGeometry, "plane fit needs at least 3 points");
  require(iterations >= 1 && inlier_tol > 0.0, ErrorKind::InvalidInput, "invalid RANSAC settings");
  std::mt19937_64 rng(mix_seed(seed, 0x9a7));
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  auto count_inliers = [&](const Eigen::Vector3d& normal, double offset) {
    int c = 0;
    for (Eigen::Index i = 0; i < n; ++i) c += std::abs(points.row(i).dot(normal) - offset) <= inlier_tol;
    return c;
  };
  int best = -1;
  Eigen::Vector3d best_normal = Eigen::Vector3d::UnitZ();
  double best_offset = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::Index a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Eigen::Vector3d pa = points.row(a), pb = points.row(b), pc = points.row(c);
    const Eigen::Vector3d cross = (pb - pa).cross(pc - pa);
    if (cross.norm() < 1e-12) continue;
    const Eigen::Vector3d normal = cross.normalized();
    const double offset = normal.dot(pa);
    const int inl = count_inliers(normal, offset);
    if (inl > best) {
      best = inl;
      best_normal = normal;
      best_offset = offset;
    }
  }
  if (best < 0) {
    // random draws may all be degenerate on tiny sets: scan exhaustively
    for (Eigen::Index a = 0; a < n && best < 0; ++a) {
      for (Eigen::Index b = a + 1; b < n && best < 0; ++b) {
        for (Eigen::Index c = b + 1; c < n && best < 0; ++c) {
          const Eigen::Vector3d pa = points.row(a);
          const Eigen::Vector3d cross = (Eigen::Vector3d(points.row(b)) - pa).cross(Eigen::Vector3d(points.row(c)) - pa);
          if (cross.norm() < 1e-12) continue;
          best_normal = cross.normalized();
          best_offset = best_normal.dot(pa);
          best = count_inliers(best_normal, best_offset);
        }
      }
    }
  }
  require(best >= 0, ErrorKind::DegenerateGeometry, "all points are collinear");

  std::vector<Eigen::Index> inliers;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(points.row(i).dot(best_normal) - best_offset) <= inlier_tol) inliers.push_back(i);
  }
  PlaneModel plane;
  plane.normal = best_normal;
  plane.offset = best_offset;
  if (inliers.size() >= 3) {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (auto i : inliers) centroid += points.row(i).transpose();
    centroid /= static_cast<double>(inliers.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto i : inliers) {
      const Eigen::Vector3d d = points.row(i).transpose() - centroid;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // eigenvalues ascend; a rank-1 inlier set leaves the hypothesis normal in place
    if (eig.eigenvalues()(1) > 1e-12 * std::max(1.0, eig.eigenvalues()(2))) {
      plane.normal = eig.eigenvectors().col(0).normalized();
      plane.offset = plane.normal.dot(centroid);
    }
  }
  if (plane.normal.z() < 0.0) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  int final_inliers = 0;
  for (Eigen::Index i = 0; i < n; ++i) final_inliers += std::abs(plane.signed_distance(points.row(i))) <= inlier_tol;
  plane.inlier_fraction = static_cast<double>(final_inliers) / static_cast<double>(n);
  return plane;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> voxel_points(const VoxelMap& map) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(static_cast<Eigen::Index>(map.voxels.size()), 3);
  Eigen::Index k = 0;
  for (const auto& [key, v] : map.voxels) {
    pts.row(k++) << (key[0] + 0.5) * map.resolution, (key[1] + 0.5) * map.resolution, v.mean_z;
  }
  return pts;
}

ElevationMap reduce_to_elevation(const VoxelMap& map, const PlaneModel& plane, double h_max,
                                 std::optional<GridGeometry> geometry, double ground_tol) {
  require(h_max > 0.0, ErrorKind::InvalidInput, "h_max must be positive");
  GridGeometry g;
  if (geometry) {
    g = *geometry;
  } else {
    int i0 = 0, i1 = -1, j0 = 0, j1 = -1;
    bool first = true;
    for (const auto& [key, v] : map.voxels) {
      if (first) {
        i0 = i1 = key[0];
        j0 = j1 = key[1];
        first = false;
      }
      i0 = std::min(i0, key[0]);
      i1 = std::max(i1, key[0]);
      j0 = std::min(j0, key[1]);
      j1 = std::max(j1, key[1]);
    }
    g.resolution = map.resolution;
    g.origin_x = i0 * map.resolution;
    g.origin_y = j0 * map.resolution;
    g.cols = i1 - i0 + 1;
    g.rows = j1 - j0 + 1;
  }
  require(g.resolution > 0.0 && g.rows >= 0 && g.cols >= 0, ErrorKind::InvalidInput, "invalid grid geometry");
  ElevationMap out;
  out.geometry = g;
  out.height = Matrix::Zero(g.rows, g.cols);
  out.trav = Matrix::Zero(g.rows, g.cols);
  out.observed = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(g.rows, g.cols, false);
  Matrix weight = Matrix::Zero(g.rows, g.cols);
  Matrix acc = Matrix::Zero(g.rows, g.cols);
  for (const auto& [key, v] : map.voxels) {
    const Eigen::Vector3d center((key[0] + 0.5) * map.resolution, (key[1] + 0.5) * map.resolution, v.mean_z);
    const int c = static_cast<int>(std::floor((center.x() - g.origin_x) / g.resolution));
    const int r = static_cast<int>(std::floor((center.y() - g.origin_y) / g.resolution));
    if (r < 0 || c < 0 || r >= g.rows || c >= g.cols) continue;
    const double h = plane.signed_distance(center);
    if (h < -ground_tol || h > h_max) continue;
    if (!out.observed(r, c) || h > out.height(r, c)) out.height(r, c) = h;
    out.observed(r, c) = true;
    acc(r, c) += v.weight * v.trav;
    weight(r, c) += v.weight;
  }
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      if (out.observed(r, c)) out.trav(r, c) = std::clamp(acc(r, c) / weight(r, c), 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace cotrate::mapping
