#pragma once

// Pixel-wise supervision from experienced scores: footprints, cosine-threshold
// terrain masks and per-segment averaged targets.

#include <vector>

#include "cotrate/scoring.hpp"
#include "cotrate/synthworld.hpp"

namespace cotrate::supervision {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct FootprintPixel {
  int row = 0;
  int col = 0;
  double score = 0.0;
};

/// Unique patch cells, sorted by (row, col); repeated visits average their scores.
struct Footprint {
  std::vector<FootprintPixel> pixels;
  std::vector<double> source_times;

  bool empty() const { return pixels.empty(); }
};

struct TerrainMask {
  Eigen::MatrixXi segments;  // 0 = unassigned, ids contiguous from 1
  int count = 0;
};

struct SupervisionMask {
  Matrix values;
  BoolGrid valid;

  int valid_count() const { return static_cast<int>(valid.count()); }
};

/// Maps poses inside the window onto patch cells, each carrying the score
/// nearest in time (poses with no score within `max_dt` are skipped).
Footprint project_footprints(const std::vector<synth::Pose>& poses, const scoring::ScoreSeries& scores,
                             const synth::ImageWindow& window, double max_dt = 0.5);

/// Grows a segment from every footprint pixel over all patches whose feature
/// cosine exceeds `c`; overlapping segments merge.
TerrainMask segment_terrain(const synth::PatchFeatureImage& image, const Footprint& footprint, double c = 0.95);

/// Broadcasts each segment's mean footprint score over the segment.
SupervisionMask build_supervision(const Footprint& footprint, const TerrainMask& mask);

}  // namespace cotrate::supervision
