#include "cotrate/replay.hpp"

#include <algorithm>
#include <limits>
#include <random>

namespace cotrate::replay {

Matrix FeatureBuffer::features() const {
  if (entries.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(entries.size()), entries.front().feature.size());
  for (std::size_t i = 0; i < entries.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = entries[i].feature.transpose();
  return m;
}

Matrix FeatureBuffer::targets() const {
  if (entries.empty()) return Matrix();
  require(entries.front().target.has_value(), ErrorKind::InternalConsistency, "buffer entries carry no targets");
  Matrix m(static_cast<Eigen::Index>(entries.size()), entries.front().target->size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(entries[i].target.has_value(), ErrorKind::InternalConsistency, "buffer entry without target");
    m.row(static_cast<Eigen::Index>(i)) = entries[i].target->transpose();
  }
  return m;
}

FeatureBuffer make_replay_buffer(int capacity) {
  require(capacity >= 1, ErrorKind::InvalidConfig, "replay capacity must be >= 1");
  FeatureBuffer b;
  b.kind = BufferKind::Replay;
  b.capacity = capacity;
  return b;
}

FeatureBuffer make_temp_buffer() {
  FeatureBuffer b;
  b.kind = BufferKind::Temporary;
  b.capacity = std::numeric_limits<int>::max();
  return b;
}

std::vector<int> fps_select(const Matrix& points, int k) {
  const int n = static_cast<int>(points.rows());
  require(k >= 0 && k <= n, ErrorKind::InvalidInput, "fps_select: k must lie in [0, n]");
  std::vector<int> selected;
  if (k == 0) return selected;
  const RowVector centroid = points.colwise().mean();
  int first = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = (points.row(i) - centroid).squaredNorm();
    if (d > best) {
      best = d;
      first = i;
    }
  }
  selected.push_back(first);
  Vector min_d(n);
  for (int i = 0; i < n; ++i) min_d(i) = (points.row(i) - points.row(first)).squaredNorm();
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  taken[static_cast<std::size_t>(first)] = 1;
  while (static_cast<int>(selected.size()) < k) {
    int next = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (!taken[static_cast<std::size_t>(i)] && min_d(i) > far) {
        far = min_d(i);
        next = i;
      }
    }
    selected.push_back(next);
    taken[static_cast<std::size_t>(next)] = 1;
    for (int i = 0; i < n; ++i) min_d(i) = std::min(min_d(i), (points.row(i) - points.row(next)).squaredNorm());
  }
  return selected;
}

void buffer_update(FeatureBuffer& replay, FeatureBuffer& temp, const visual::DecoderParams& params) {
  require(replay.kind == BufferKind::Replay && temp.kind == BufferKind::Temporary, ErrorKind::InvalidInput,
          "buffer_update expects (replay, temporary) buffers");
  std::vector<BufferEntry> pool = replay.entries;
  for (auto& e : temp.entries) pool.push_back({e.feature, std::nullopt, e.origin_step});
  temp.entries.clear();
  if (static_cast<int>(pool.size()) > replay.capacity) {
    Matrix pts(static_cast<Eigen::Index>(pool.size()), pool.front().feature.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = pool[i].feature.transpose();
    std::vector<BufferEntry> kept;
    for (int i : fps_select(pts, replay.capacity)) kept.push_back(std::move(pool[static_cast<std::size_t>(i)]));
    pool = std::move(kept);
  }
  replay.entries = std::move(pool);
  if (replay.entries.empty()) return;
  const Matrix out = visual::decode_features(replay.features(), params);
  for (std::size_t i = 0; i < replay.entries.size(); ++i) {
    replay.entries[i].target = out.row(static_cast<Eigen::Index>(i)).transpose();
  }
}

double loss_replay(const FeatureBuffer& replay, const visual::DecoderParams& params) {
  if (replay.empty()) return 0.0;
  const Matrix out = visual::decode_features(replay.features(), params);
  return (out - replay.targets()).squaredNorm() / static_cast<double>(out.size());
}

double target_score(const Vector& target, const visual::DecoderParams& params, const Vector& reference) {
  if (params.config.direct_regression) {
    return std::clamp(target.dot(params.reg_w.col(0)) + params.reg_b(0, 0), 0.0, 1.0);
  }
  return rescale_cosine(cosine_similarity(target, reference));
}

visual::TrainSample feature_cutmix(const visual::TrainSample& sample, const FeatureBuffer& replay,
                                   const visual::DecoderParams& params, const Vector& reference, double p,
                                   std::uint64_t seed) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidConfig, "cut-mix probability must lie in [0,1]");
  if (replay.empty()) return sample;
  visual::TrainSample out = sample;
  std::mt19937_64 rng(mix_seed(seed, 0xfc3));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, replay.size() - 1);
  std::vector<double> scores(replay.size(), -1.0);
  for (std::size_t i = 0; i < out.valid.size(); ++i) {
    if (out.valid[i]) continue;
    if (!(coin(rng) < p)) continue;
    const std::size_t k = pick(rng);
    const auto& e = replay.entries[k];
    require(e.target.has_value(), ErrorKind::InternalConsistency, "replay entry without target");
    if (scores[k] < 0.0) scores[k] = target_score(*e.target, params, reference);
    out.features.row(static_cast<Eigen::Index>(i)) = e.feature.transpose();
    out.targets(static_cast<Eigen::Index>(i)) = scores[k];
    out.valid[i] = 1;
  }
  return out;
}

void collect(FeatureBuffer& temp, const visual::TrainSample& sample, int per_sample, int step, std::uint64_t seed) {
  std::vector<int> valid;
  for (std::size_t i = 0; i < sample.valid.size(); ++i) {
    if (sample.valid[i]) valid.push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(step)));
  std::shuffle(valid.begin(), valid.end(), rng);
  if (static_cast<int>(valid.size()) > per_sample) valid.resize(static_cast<std::size_t>(per_sample));
  std::sort(valid.begin(), valid.end());
  for (int i : valid) temp.entries.push_back({sample.features.row(i).transpose(), std::nullopt, step});
}

}  // namespace cotrate::replay
