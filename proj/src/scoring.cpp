#include "cotrate/scoring.hpp"

#include <algorithm>
#include <deque>

namespace cotrate::scoring {

ReferenceProfile calibrate_reference(std::span<const sensor::LatentEmbedding> latents, int terrain_id) {
  require(!latents.empty(), ErrorKind::InvalidInput, "no reference latents");
  ReferenceProfile ref;
  ref.mean_latent = Vector::Zero(latents.front().mean.size());
  for (const auto& z : latents) {
    require(z.mean.size() == ref.mean_latent.size(), ErrorKind::InvalidInput, "latent sizes differ");
    ref.mean_latent += z.mean;
  }
  ref.mean_latent /= static_cast<double>(latents.size());
  ref.m_a = static_cast<int>(latents.size());
  ref.terrain_id = terrain_id;
  return ref;
}

double score(const Vector& latent_mean, const ReferenceProfile& ref) {
  require(latent_mean.size() == ref.mean_latent.size(), ErrorKind::InvalidInput, "latent size mismatch");
  const double na = ref.mean_latent.norm(), nb = latent_mean.norm();
  require(na >= 1e-12 && nb >= 1e-12, ErrorKind::DegenerateVector, "latent norm below 1e-12");
  return rescale_cosine(ref.mean_latent.dot(latent_mean) / (na * nb));
}

double score(const sensor::LatentEmbedding& latent, const ReferenceProfile& ref) { return score(latent.mean, ref); }

ScoreSeries score_series(std::span<const sensor::LatentEmbedding> latents, const ReferenceProfile& ref) {
  ScoreSeries out;
  out.entries.reserve(latents.size());
  for (const auto& z : latents) out.entries.push_back({z.t, score(z, ref), z.terrain_gt});
  return out;
}

ScoreSeries robustify(const ScoreSeries& series, double window) {
  require(window > 0.0, ErrorKind::InvalidInput, "robustify window must be positive");
  ScoreSeries out = series;
  // monotone deque of candidate minima over the trailing window
  std::deque<std::size_t> q;
  for (std::size_t i = 0; i < series.entries.size(); ++i) {
    const double t = series.entries[i].t;
    while (!q.empty() && series.entries[q.back()].score >= series.entries[i].score) q.pop_back();
    q.push_back(i);
    while (t - series.entries[q.front()].t >= window) q.pop_front();
    out.entries[i].score = series.entries[q.front()].score;
  }
  return out;
}

}  // namespace cotrate::scoring
