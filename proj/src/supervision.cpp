#include "cotrate/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace cotrate::supervision {

Footprint project_footprints(const std::vector<synth::Pose>& poses, const scoring::ScoreSeries& scores,
                             const synth::ImageWindow& window, double max_dt) {
  Footprint fp;
  if (scores.empty()) return fp;
  const auto& entries = scores.entries;
  std::map<std::pair<int, int>, std::pair<double, int>> cells;
  for (const auto& pose : poses) {
    if (!window.contains(pose.x, pose.y)) continue;
    auto it = std::lower_bound(entries.begin(), entries.end(), pose.t,
                               [](const scoring::ScoreEntry& e, double t) { return e.t < t; });
    const scoring::ScoreEntry* best = nullptr;
    if (it != entries.end()) best = &*it;
    if (it != entries.begin()) {
      const auto* prev = &*(it - 1);
      if (best == nullptr || pose.t - prev->t <= best->t - pose.t) best = prev;
    }
    if (std::abs(best->t - pose.t) > max_dt) continue;
    const Eigen::Vector2d rc = window.to_patch(pose.x, pose.y);
    const int r = std::clamp(static_cast<int>(std::lround(rc(0))), 0, window.rows - 1);
    const int c = std::clamp(static_cast<int>(std::lround(rc(1))), 0, window.cols - 1);
    auto& acc = cells[{r, c}];
    acc.first += best->score;
    acc.second += 1;
    fp.source_times.push_back(pose.t);
  }
  for (const auto& [rc, acc] : cells) fp.pixels.push_back({rc.first, rc.second, acc.first / acc.second});
  return fp;
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    i = parent[static_cast<std::size_t>(i)];
  }
  return i;
}

}  // namespace

TerrainMask segment_terrain(const synth::PatchFeatureImage& image, const Footprint& footprint, double c) {
  require(c > 0.0 && c < 1.0, ErrorKind::InvalidInput, "cosine threshold must lie in (0,1)");
  const int rows = image.rows(), cols = image.cols();
  TerrainMask mask;
  mask.segments = Eigen::MatrixXi::Zero(rows, cols);
  if (footprint.empty()) return mask;

  Matrix unit = image.features;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double n = unit.row(i).norm();
    unit.row(i) = n > 1e-12 ? Matrix(unit.row(i) / n) : Matrix::Zero(1, unit.cols());
  }
  const int k = static_cast<int>(footprint.pixels.size());
  std::vector<int> seeds;
  for (const auto& p : footprint.pixels) {
    require(p.row >= 0 && p.row < rows && p.col >= 0 && p.col < cols, ErrorKind::OutOfBounds, "footprint outside grid");
    seeds.push_back(p.row * cols + p.col);
  }

  // owner[q] = first footprint pixel whose segment contains q; later overlaps merge
  std::vector<int> parent(static_cast<std::size_t>(k));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> owner(static_cast<std::size_t>(rows * cols), -1);
  for (int s = 0; s < k; ++s) {
    const Vector sims = unit * unit.row(seeds[static_cast<std::size_t>(s)]).transpose();
    for (int q = 0; q < rows * cols; ++q) {
      if (q != seeds[static_cast<std::size_t>(s)] && !(sims(q) > c)) continue;
      int& o = owner[static_cast<std::size_t>(q)];
      if (o < 0) {
        o = s;
      } else {
        const int a = find_root(parent, o), b = find_root(parent, s);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
      }
    }
  }
  std::map<int, int> label;
  for (int s = 0; s < k; ++s) {
    const int root = find_root(parent, s);
    if (!label.count(root)) label.emplace(root, static_cast<int>(label.size()) + 1);
  }
  for (int q = 0; q < rows * cols; ++q) {
    const int o = owner[static_cast<std::size_t>(q)];
    if (o >= 0) mask.segments(q / cols, q % cols) = label.at(find_root(parent, o));
  }
  mask.count = static_cast<int>(label.size());
  return mask;
}

SupervisionMask build_supervision(const Footprint& footprint, const TerrainMask& mask) {
  SupervisionMask out;
  out.values = Matrix::Zero(mask.segments.rows(), mask.segments.cols());
  out.valid = BoolGrid::Constant(mask.segments.rows(), mask.segments.cols(), false);
  std::vector<double> sum(static_cast<std::size_t>(mask.count + 1), 0.0);
  std::vector<int> n(static_cast<std::size_t>(mask.count + 1), 0);
  for (const auto& p : footprint.pixels) {
    require(p.row >= 0 && p.row < mask.segments.rows() && p.col >= 0 && p.col < mask.segments.cols(),
            ErrorKind::OutOfBounds, "footprint outside grid");
    const int seg = mask.segments(p.row, p.col);
    require(seg > 0, ErrorKind::InternalConsistency, "footprint pixel outside every segment");
    sum[static_cast<std::size_t>(seg)] += p.score;
    n[static_cast<std::size_t>(seg)] += 1;
  }
  for (Eigen::Index r = 0; r < mask.segments.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.segments.cols(); ++c) {
      const int seg = mask.segments(r, c);
      if (seg == 0 || n[static_cast<std::size_t>(seg)] == 0) continue;
      out.values(r, c) = sum[static_cast<std::size_t>(seg)] / n[static_cast<std::size_t>(seg)];
      out.valid(r, c) = true;
    }
  }
  return out;
}

}  // namespace cotrate::supervision
