#include "cotrate/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace cotrate::eval {

EffortTable effort_table(const synth::WorldMap& world) {
  EffortTable t;
  for (const auto& spec : world.terrains) t[spec.id] = spec.effort_u;
  return t;
}

namespace {

double effort_of(const EffortTable& table, int id) {
  const auto it = table.find(id);
  require(it != table.end(), ErrorKind::InvalidInput, "no effort for terrain " + std::to_string(id));
  return it->second;
}

}  // namespace

EffortResult polyline_effort(std::span<const Eigen::Vector2d> vertices, const synth::WorldMap& world,
                             const EffortTable& table) {
  EffortResult r;
  if (vertices.size() < 2) {
    r.empty = true;
    return r;
  }
  for (std::size_t i = 1; i < vertices.size(); ++i) {
    const Eigen::Vector2d& a = vertices[i - 1];
    const Eigen::Vector2d& b = vertices[i];
    const double dz = world.elevation_at(b.x(), b.y()) - world.elevation_at(a.x(), a.y());
    const double ds = std::sqrt((b - a).squaredNorm() + dz * dz);
    const double u = 0.5 * (effort_of(table, world.terrain_at(a.x(), a.y())) +
                            effort_of(table, world.terrain_at(b.x(), b.y())));
    r.effort += u * ds;
    r.length += ds;
  }
  r.epl = r.length > 0.0 ? r.effort / r.length : 0.0;
  return r;
}

EffortResult path_effort(const planner::Path& path, const mapping::GridGeometry& grid, const synth::WorldMap& world,
                         const EffortTable& table) {
  std::vector<Eigen::Vector2d> v;
  v.reserve(path.cells.size());
  for (const auto& c : path.cells) {
    v.emplace_back(grid.origin_x + (c.col + 0.5) * grid.resolution, grid.origin_y + (c.row + 0.5) * grid.resolution);
  }
  return polyline_effort(v, world, table);
}

TerrainStats terrain_stats(std::span<const supervision::SupervisionMask> masks,
                           std::span<const Eigen::MatrixXi> labels) {
  require(masks.size() == labels.size(), ErrorKind::InvalidInput, "masks and labels differ in count");
  std::map<int, std::vector<double>> values;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    require(m.values.rows() == labels[i].rows() && m.values.cols() == labels[i].cols(), ErrorKind::InvalidInput,
            "mask and label shapes differ");
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
        if (m.valid(r, c)) values[labels[i](r, c)].push_back(m.values(r, c));
      }
    }
  }
  TerrainStats stats;
  for (const auto& [id, v] : values) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    stats[id] = {mean, std::sqrt(var / static_cast<double>(v.size()))};
  }
  return stats;
}

std::optional<int> classify(double v, const TerrainStats& stats) {
  std::optional<int> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [id, s] : stats) {
    const double d = std::abs(v - s.mean);
    if (d <= 2.0 * s.std && d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

namespace {

struct Counts {
  std::map<int, long> inter, pred, gt;

  void add(std::optional<int> p, int g) {
    ++gt[g];
    if (p) {
      ++pred[*p];
      if (*p == g) ++inter[g];
    }
  }

  SegmentationResult finish(const TerrainStats& stats) const {
    SegmentationResult r;
    double sum = 0.0;
    int n = 0;
    for (const auto& [id, count] : gt) {
      if (!stats.count(id)) {
        r.missing_stats.push_back(id);
        continue;
      }
      const long i = inter.count(id) ? inter.at(id) : 0;
      const long p = pred.count(id) ? pred.at(id) : 0;
      const double iou = 100.0 * static_cast<double>(i) / static_cast<double>(count + p - i);
      r.iou[id] = iou;
      sum += iou;
      ++n;
    }
    r.miou = n > 0 ? sum / n : 0.0;
    return r;
  }
};

}  // namespace

SegmentationResult segm_2d(std::span<const Matrix> predictions, std::span<const Eigen::MatrixXi> labels,
                           const TerrainStats& stats) {
  require(predictions.size() == labels.size(), ErrorKind::InvalidInput, "predictions and labels differ in count");
  Counts counts;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require(predictions[i].rows() == labels[i].rows() && predictions[i].cols() == labels[i].cols(),
            ErrorKind::InvalidInput, "prediction and label shapes differ");
    for (Eigen::Index r = 0; r < labels[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < labels[i].cols(); ++c) counts.add(classify(predictions[i](r, c), stats), labels[i](r, c));
    }
  }
  return counts.finish(stats);
}

SegmentationResult segm_25d(const mapping::ElevationMap& map, const Eigen::MatrixXi& labels, const TerrainStats& stats) {
  require(labels.rows() == map.rows() && labels.cols() == map.cols(), ErrorKind::InvalidInput,
          "label grid does not match the map");
  Counts counts;
  for (int r = 0; r < map.rows(); ++r) {
    for (int c = 0; c < map.cols(); ++c) {
      if (map.observed(r, c) && labels(r, c) >= 0) counts.add(classify(map.trav(r, c), stats), labels(r, c));
    }
  }
  return counts.finish(stats);
}

Eigen::MatrixXi grid_labels(const mapping::GridGeometry& grid, const synth::WorldMap& world) {
  Eigen::MatrixXi out(grid.rows, grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const double x = grid.origin_x + (c + 0.5) * grid.resolution;
      const double y = grid.origin_y + (r + 0.5) * grid.resolution;
      out(r, c) = world.inside(x, y) ? world.terrain_at(x, y) : -1;
    }
  }
  return out;
}

double histogram_overlap(std::span<const double> a, std::span<const double> b, int bins) {
  require(bins >= 1, ErrorKind::InvalidInput, "bins must be positive");
  require(!a.empty() && !b.empty(), ErrorKind::InvalidInput, "histogram overlap needs samples");
  auto hist = [bins](std::span<const double> v) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
      const int k = std::clamp(static_cast<int>(std::floor(x * bins)), 0, bins - 1);
      h[static_cast<std::size_t>(k)] += 1.0 / static_cast<double>(v.size());
    }
    return h;
  };
  const auto ha = hist(a), hb = hist(b);
  double s = 0.0;
  for (int k = 0; k < bins; ++k) s += std::min(ha[static_cast<std::size_t>(k)], hb[static_cast<std::size_t>(k)]);
  return std::clamp(s, 0.0, 1.0);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::InvalidInput, "pearson needs paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::DegenerateVector, "pearson of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

IntervalStat moments(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

ScoreQuality score_quality(const TerrainScores& after, const TerrainScores* before, const EffortTable& table,
                           int bins) {
  ScoreQuality q;
  std::vector<int> ids;
  for (const auto& [id, v] : after) {
    if (!v.empty()) ids.push_back(id);
  }
  require(!ids.empty(), ErrorKind::InvalidInput, "no terrain scores");

  if (ids.size() < 2) {
    q.overlap_defined = false;
  } else {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = i + 1; j < ids.size(); ++j) {
        s += histogram_overlap(after.at(ids[i]), after.at(ids[j]), bins);
        ++n;
      }
    }
    q.pairwise_overlap = s / n;
  }

  double range = 0.0;
  for (int id : ids) {
    const auto& v = after.at(id);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    range += *hi - *lo;
  }
  q.avg_range = range / static_cast<double>(ids.size());

  if (before) {
    double drift = 0.0;
    int n = 0;
    for (int id : ids) {
      const auto it = before->find(id);
      if (it == before->end() || it->second.empty()) continue;
      const IntervalStat a = moments(it->second), b = moments(after.at(id));
      drift += std::abs(b.mean - a.mean) + std::abs(b.std - a.std);
      ++n;
    }
    q.stability = n > 0 ? std::clamp(1.0 - drift / n, 0.0, 1.0) : 1.0;
  }

  std::vector<double> means, ease;
  for (int id : ids) {
    means.push_back(moments(after.at(id)).mean);
    ease.push_back(1.0 - effort_of(table, id));
  }
  try {
    q.correlation = ids.size() >= 2 ? pearson(means, ease) : 0.0;
    q.correlation_defined = ids.size() >= 2;
  } catch (const Error&) {
    q.correlation = 0.0;
    q.correlation_defined = false;
  }
  return q;
}

double hyper_objective(const ScoreQuality& q) {
  return q.pairwise_overlap + q.avg_range + (1.0 - q.stability) + (1.0 - q.correlation);
}

std::vector<double> forgetting_curve(std::span<const std::vector<Matrix>> predictions,
                                     std::span<const Eigen::MatrixXi> labels, const TerrainStats& stats) {
  std::vector<double> curve;
  curve.reserve(predictions.size());
  for (const auto& p : predictions) curve.push_back(segm_2d(p, labels, stats).miou);
  return curve;
}

}  // namespace cotrate::eval
