#pragma once

// Reference-terrain calibration and latent-to-score conversion.

#include <optional>
#include <span>
#include <vector>

#include "cotrate/sensornet.hpp"

namespace cotrate::scoring {

struct ReferenceProfile {
  Vector mean_latent;
  int m_a = 0;
  int terrain_id = 0;
};

struct ScoreEntry {
  double t = 0.0;
  double score = 0.0;
  std::optional<int> terrain_gt;
};

struct ScoreSeries {
  std::vector<ScoreEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Arithmetic mean of the latent means.
ReferenceProfile calibrate_reference(std::span<const sensor::LatentEmbedding> latents, int terrain_id = 0);

/// (cos(P_t, P_A) + 1) / 2, clamped to [0,1]. Throws degenerate-vector on a near-zero norm.
double score(const Vector& latent_mean, const ReferenceProfile& ref);
double score(const sensor::LatentEmbedding& latent, const ReferenceProfile& ref);

ScoreSeries score_series(std::span<const sensor::LatentEmbedding> latents, const ReferenceProfile& ref);

/// Replaces each score by the minimum over entries with t_i - t_j < window.
ScoreSeries robustify(const ScoreSeries& series, double window);

}  // namespace cotrate::scoring
