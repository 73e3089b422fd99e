#pragma once

// Feature replay: temporary and replay buffers, farthest-point selection,
// the replay loss and feature cut-mix.

#include <optional>
#include <vector>

#include "cotrate/visual.hpp"

namespace cotrate::replay {

enum class BufferKind { Temporary, Replay };

struct BufferEntry {
  Vector feature;                // C_b backbone feature
  std::optional<Vector> target;  // stored decoder output (replay kind only)
  int origin_step = 0;
};

struct FeatureBuffer {
  BufferKind kind = BufferKind::Replay;
  int capacity = 200;  // ignored for temporary buffers
  std::vector<BufferEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  Matrix features() const;
  Matrix targets() const;
};

FeatureBuffer make_replay_buffer(int capacity);
FeatureBuffer make_temp_buffer();

struct ReplaySchedule {
  int t_b = 100;
  int t_r = 1;
  double weight = 20.0;
};

/// Greedy farthest-point sampling from the point farthest from the centroid;
/// ties go to the lowest index.
std::vector<int> fps_select(const Matrix& points, int k);

/// Replaces `replay` by FPS(replay U temp) down to capacity, refreshes every
/// stored target with the current decoder and clears `temp`.
void buffer_update(FeatureBuffer& replay, FeatureBuffer& temp, const visual::DecoderParams& params);

/// Eval-mode MSE between decoder outputs and stored targets; 0 for an empty buffer.
double loss_replay(const FeatureBuffer& replay, const visual::DecoderParams& params);

/// Score a stored target would receive: its rescaled cosine to the reference,
/// or the regression head value.
double target_score(const Vector& target, const visual::DecoderParams& params, const Vector& reference);

/// Replaces each invalid pixel, with probability `p`, by a random buffer
/// feature supervised with that entry's stored score.
visual::TrainSample feature_cutmix(const visual::TrainSample& sample, const FeatureBuffer& replay,
                                   const visual::DecoderParams& params, const Vector& reference, double p,
                                   std::uint64_t seed);

/// Adds up to `per_sample` annotated features of a sample to the temporary buffer.
void collect(FeatureBuffer& temp, const visual::TrainSample& sample, int per_sample, int step, std::uint64_t seed);

}  // namespace cotrate::replay
