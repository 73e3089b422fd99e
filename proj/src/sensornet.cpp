#include "cotrate/sensornet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cotrate::sensor {

AlignedTickTable synchronize(std::span<const synth::SensorStream> streams) {
  require(!streams.empty(), ErrorKind::InvalidInput, "no streams to synchronize");
  std::size_t master = 0;
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& st = streams[s];
    require(!st.timestamps.empty(), ErrorKind::InvalidInput, "stream '" + st.group.name + "' is empty");
    require(static_cast<Eigen::Index>(st.timestamps.size()) == st.values.rows(), ErrorKind::InvalidInput,
            "stream '" + st.group.name + "' has mismatched timestamps and values");
    require(st.group.rate_hz > 0.0, ErrorKind::InvalidInput, "stream rate must be positive");
    for (std::size_t i = 1; i < st.timestamps.size(); ++i) {
      require(st.timestamps[i] > st.timestamps[i - 1], ErrorKind::InvalidInput,
              "stream '" + st.group.name + "' timestamps not increasing");
    }
    lo = std::max(lo, st.timestamps.front());
    hi = std::min(hi, st.timestamps.back());
    if (st.group.rate_hz > streams[master].group.rate_hz) master = s;
  }
  require(lo <= hi, ErrorKind::NoOverlap, "streams share no common time interval");

  constexpr double kSlack = 1e-9;
  AlignedTickTable table;
  for (double t : streams[master].timestamps) {
    if (t >= lo - kSlack && t <= hi + kSlack) table.timestamps.push_back(t);
  }
  require(!table.timestamps.empty(), ErrorKind::NoOverlap, "master stream has no tick inside the common interval");

  int total = 0;
  for (const auto& st : streams) total += static_cast<int>(st.values.cols());
  table.values.resize(static_cast<Eigen::Index>(table.timestamps.size()), total);
  int col = 0;
  for (const auto& st : streams) {
    const auto& ts = st.timestamps;
    for (std::size_t i = 0; i < table.timestamps.size(); ++i) {
      const double t = table.timestamps[i];
      auto it = std::lower_bound(ts.begin(), ts.end(), t - kSlack);
      std::size_t j = static_cast<std::size_t>(it - ts.begin());
      if (j < ts.size() && std::abs(ts[j] - t) <= kSlack) {
        table.values.block(static_cast<Eigen::Index>(i), col, 1, st.values.cols()) = st.values.row(static_cast<Eigen::Index>(j));
        continue;
      }
      j = std::clamp<std::size_t>(j, 1, ts.size() - 1);
      const double w = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
      table.values.block(static_cast<Eigen::Index>(i), col, 1, st.values.cols()) =
          (1.0 - w) * st.values.row(static_cast<Eigen::Index>(j - 1)) + w * st.values.row(static_cast<Eigen::Index>(j));
    }
    for (Eigen::Index c = 0; c < st.values.cols(); ++c) table.channel_group.push_back(st.group.name);
    col += static_cast<int>(st.values.cols());
  }
  return table;
}

AlignedTickTable select_groups(const AlignedTickTable& table, std::span<const std::string> groups) {
  std::vector<int> keep;
  for (int c = 0; c < table.channels(); ++c) {
    if (std::find(groups.begin(), groups.end(), table.channel_group[static_cast<std::size_t>(c)]) != groups.end()) {
      keep.push_back(c);
    }
  }
  require(!keep.empty(), ErrorKind::InvalidConfig, "sensor mask removes every channel");
  AlignedTickTable out;
  out.timestamps = table.timestamps;
  out.terrain_gt = table.terrain_gt;
  out.values.resize(table.values.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.values.col(static_cast<Eigen::Index>(k)) = table.values.col(keep[k]);
    out.channel_group.push_back(table.channel_group[static_cast<std::size_t>(keep[k])]);
  }
  return out;
}

void label_rows(AlignedTickTable& table, const synth::WorldMap& world, const std::vector<synth::Pose>& trajectory) {
  table.terrain_gt.clear();
  for (double t : table.timestamps) {
    const synth::Pose p = synth::pose_at(trajectory, t);
    table.terrain_gt.push_back(world.terrain_at(p.x, p.y));
  }
}

std::vector<SensorFrame> partition(const AlignedTickTable& table, int window, int stride, int sequence,
                                   std::uint64_t first_id) {
  require(stride >= 1, ErrorKind::InvalidInput, "stride must be >= 1");
  require(window >= 1 && window <= table.rows(), ErrorKind::TooShort,
          "window " + std::to_string(window) + " longer than table (" + std::to_string(table.rows()) + " rows)");
  std::vector<SensorFrame> frames;
  const int count = (table.rows() - window) / stride + 1;
  frames.reserve(static_cast<std::size_t>(count));
  for (int f = 0; f < count; ++f) {
    const int end = window - 1 + f * stride;
    SensorFrame frame;
    frame.id = first_id + static_cast<std::uint64_t>(f);
    frame.sequence = sequence;
    frame.data = table.values.middleRows(end - window + 1, window);
    frame.t_end = table.timestamps[static_cast<std::size_t>(end)];
    if (!table.terrain_gt.empty()) frame.terrain_gt = table.terrain_gt[static_cast<std::size_t>(end)];
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<Matrix*> VaeParams::parameters() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &mean_w, &mean_b, &logvar_w, &logvar_b, &dec1_w, &dec1_b, &dec2_w, &dec2_b};
}

std::vector<const Matrix*> VaeParams::parameters() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &mean_w, &mean_b, &logvar_w, &logvar_b, &dec1_w, &dec1_b, &dec2_w, &dec2_b};
}

std::vector<std::string> VaeParams::parameter_names() {
  return {"conv1_w", "conv1_b", "conv2_w", "conv2_b", "mean_w", "mean_b",
          "logvar_w", "logvar_b", "dec1_w", "dec1_b", "dec2_w", "dec2_b"};
}

bool VaeParams::finite() const {
  for (const Matrix* m : parameters()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

namespace {

void validate(const VaeConfig& c) {
  require(c.window >= 1 && c.channels >= 1 && c.latent >= 1, ErrorKind::InvalidConfig, "VAE dimensions must be positive");
  require(c.kernel1 >= 1 && c.kernel2 >= 1 && c.window - c.kernel1 + 1 >= c.kernel2, ErrorKind::InvalidConfig,
          "window too short for the encoder kernels");
}

struct Shape {
  Eigen::Index rows, cols;
};

std::vector<Shape> shapes(const VaeConfig& c) {
  return {{c.kernel1 * c.channels, c.conv1_channels}, {1, c.conv1_channels},
          {c.kernel2 * c.conv1_channels, c.conv2_channels}, {1, c.conv2_channels},
          {c.conv2_channels, c.latent}, {1, c.latent},
          {c.conv2_channels, c.latent}, {1, c.latent},
          {c.latent, c.decoder_hidden}, {1, c.decoder_hidden},
          {c.decoder_hidden, c.channels}, {1, c.channels}};
}

}  // namespace

VaeParams init_vae(const VaeConfig& config, std::uint64_t seed) {
  validate(config);
  VaeParams p = zero_vae(config);
  std::mt19937_64 rng(mix_seed(seed, 0x7ae));
  auto ps = p.parameters();
  for (std::size_t i = 0; i < ps.size(); i += 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(ps[i]->rows()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index k = 0; k < ps[i]->size(); ++k) ps[i]->data()[k] = u(rng);
    for (Eigen::Index k = 0; k < ps[i + 1]->size(); ++k) ps[i + 1]->data()[k] = u(rng);
  }
  return p;
}

VaeParams zero_vae(const VaeConfig& config) {
  validate(config);
  VaeParams p;
  p.config = config;
  auto ps = p.parameters();
  auto sh = shapes(config);
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = Matrix::Zero(sh[i].rows, sh[i].cols);
  return p;
}

bool AnchorSet::record(std::uint64_t frame_id, const Vector& mean) {
  return anchors_.emplace(frame_id, mean).second;
}

const Vector* AnchorSet::find(std::uint64_t frame_id) const {
  auto it = anchors_.find(frame_id);
  return it == anchors_.end() ? nullptr : &it->second;
}

VaeVars bind(ad::Tape& tape, const VaeParams& params, bool trainable) {
  VaeVars v;
  for (const Matrix* m : params.parameters()) v.vars.push_back(trainable ? tape.parameter(*m) : tape.constant(*m));
  return v;
}

Matrix stack_frames(std::span<const SensorFrame* const> frames) {
  require(!frames.empty(), ErrorKind::InvalidInput, "no frames to stack");
  const Eigen::Index w = frames.front()->data.rows(), s = frames.front()->data.cols();
  Matrix out(static_cast<Eigen::Index>(frames.size()) * w, s);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    require(frames[i]->data.rows() == w && frames[i]->data.cols() == s, ErrorKind::InvalidInput, "frame shapes differ");
    out.middleRows(static_cast<Eigen::Index>(i) * w, w) = frames[i]->data;
  }
  return out;
}

EncoderOutput encode_on_tape(const VaeVars& v, const VaeConfig& c, const ad::Var& stacked, int batch) {
  require(stacked.rows() == static_cast<Eigen::Index>(batch) * c.window && stacked.cols() == c.channels,
          ErrorKind::InvalidInput, "encoder input shape does not match the configured W x S");
  ad::Var h1 = ad::relu(ad::conv1d(stacked, batch, v[0], v[1], c.kernel1));
  ad::Var h2 = ad::relu(ad::conv1d(h1, batch, v[2], v[3], c.kernel2));
  ad::Var pooled = ad::segment_mean(h2, batch);
  ad::Var mean = ad::add_row(ad::matmul(pooled, v[4]), v[5]);
  ad::Var logvar = ad::clamp(ad::add_row(ad::matmul(pooled, v[6]), v[7]), -c.logvar_clamp, c.logvar_clamp);
  return {mean, logvar};
}

ad::Var decode_on_tape(const VaeVars& v, const VaeConfig& c, const ad::Var& latent) {
  require(latent.cols() == c.latent, ErrorKind::InvalidInput, "latent width does not match the configuration");
  const int batch = static_cast<int>(latent.rows());
  ad::Var h = ad::relu(ad::conv1d(latent, batch, v[8], v[9], 1));
  return ad::conv1d(h, batch, v[10], v[11], 1);
}

ad::Var kl_on_tape(const ad::Var& mean, const ad::Var& logvar) {
  ad::Var inner = ad::add_scalar(ad::sub(ad::add(ad::square(mean), ad::exp(logvar)), logvar), -1.0);
  return ad::scale(ad::mean(inner), 0.5);
}

namespace {

struct BranchStats {
  ad::Var hinge;
  ad::Var offdiag;
};

BranchStats branch_stats(const ad::Var& z, double eps) {
  auto& tape = *z.tape();
  const double n = static_cast<double>(z.rows());
  const Eigen::Index dims = z.cols();
  ad::Var centered = ad::sub_row(z, ad::mean_rows(z));
  ad::Var var = ad::scale(ad::mean_rows(ad::square(centered)), n / (n - 1.0));
  ad::Var std = ad::sqrt(ad::add_scalar(var, eps));
  ad::Var hinge = ad::mean(ad::relu(ad::add_scalar(ad::scale(std, -1.0), 1.0)));
  ad::Var cov = ad::scale(ad::matmul(ad::transpose(centered), centered), 1.0 / (n - 1.0));
  Matrix mask = Matrix::Ones(dims, dims) - Matrix::Identity(dims, dims);
  ad::Var off = ad::mul(cov, tape.constant(std::move(mask)));
  ad::Var offdiag = ad::scale(ad::sum(ad::square(off)), 1.0 / static_cast<double>(dims));
  return {hinge, offdiag};
}

}  // namespace

VicTermsVar vic_on_tape(const ad::Var& z, const ad::Var& z_ref, const VicWeights& w) {
  require(z.rows() >= 2, ErrorKind::InvalidInput, "VicReg needs a batch of at least 2");
  require(z.rows() == z_ref.rows() && z.cols() == z_ref.cols(), ErrorKind::InvalidInput, "VicReg pair shapes differ");
  ad::Var inv = ad::mse(z, z_ref);
  BranchStats a = branch_stats(z, w.eps);
  BranchStats b = branch_stats(z_ref, w.eps);
  ad::Var variance = ad::scale(ad::add(a.hinge, b.hinge), 0.5);
  ad::Var covariance = ad::add(a.offdiag, b.offdiag);
  ad::Var total = ad::add(ad::add(ad::scale(inv, w.lambda), ad::scale(variance, w.mu)), ad::scale(covariance, w.nu));
  return {inv, variance, covariance, total};
}

std::vector<LatentEmbedding> encode_batch(std::span<const SensorFrame> frames, const VaeParams& params, int chunk) {
  std::vector<LatentEmbedding> out;
  out.reserve(frames.size());
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(frames.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const SensorFrame*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&frames[i]);
    ad::Tape tape;
    VaeVars v = bind(tape, params, false);
    ad::Var x = tape.constant(stack_frames(ptrs));
    EncoderOutput enc = encode_on_tape(v, params.config, x, static_cast<int>(ptrs.size()));
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      LatentEmbedding e;
      e.mean = enc.mean.value().row(static_cast<Eigen::Index>(i)).transpose();
      e.logvar = enc.logvar.value().row(static_cast<Eigen::Index>(i)).transpose();
      e.t = ptrs[i]->t_end;
      e.terrain_gt = ptrs[i]->terrain_gt;
      e.frame_id = ptrs[i]->id;
      out.push_back(std::move(e));
    }
  }
  return out;
}

LatentEmbedding encode(const SensorFrame& frame, const VaeParams& params) {
  require(frame.data.rows() == params.config.window && frame.data.cols() == params.config.channels,
          ErrorKind::InvalidInput, "frame shape does not match the VAE configuration");
  return encode_batch(std::span<const SensorFrame>(&frame, 1), params).front();
}

Vector decode(const LatentEmbedding& latent, const VaeParams& params) {
  require(latent.mean.size() == params.config.latent, ErrorKind::InvalidInput, "latent size mismatch");
  ad::Tape tape;
  VaeVars v = bind(tape, params, false);
  ad::Var z = tape.constant(Matrix(latent.mean.transpose()));
  return decode_on_tape(v, params.config, z).value().row(0).transpose();
}

double loss_kl(std::span<const LatentEmbedding> latents) {
  require(!latents.empty(), ErrorKind::InvalidInput, "no latents");
  const Eigen::Index dims = latents.front().mean.size();
  Matrix m(static_cast<Eigen::Index>(latents.size()), dims), lv(static_cast<Eigen::Index>(latents.size()), dims);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = latents[i].mean.transpose();
    lv.row(static_cast<Eigen::Index>(i)) = latents[i].logvar.transpose();
  }
  ad::Tape tape;
  return kl_on_tape(tape.constant(m), tape.constant(lv)).scalar();
}

double loss_kl(const LatentEmbedding& latent) { return loss_kl(std::span<const LatentEmbedding>(&latent, 1)); }

double loss_rec(const Vector& y, const SensorFrame& frame) {
  require(frame.data.rows() >= 1 && y.size() == frame.data.cols(), ErrorKind::InvalidInput,
          "reconstruction length does not match the frame width");
  return (y.transpose() - frame.data.bottomRows(1)).squaredNorm() / static_cast<double>(y.size());
}

VicTerms loss_vic(const Matrix& z, const Matrix& z_ref, const VicWeights& w) {
  ad::Tape tape;
  VicTermsVar t = vic_on_tape(tape.constant(z), tape.constant(z_ref), w);
  return {t.invariance.scalar(), t.variance.scalar(), t.covariance.scalar(), t.total.scalar()};
}

VicTerms loss_vic(std::span<const std::pair<LatentEmbedding, LatentEmbedding>> batch, const VicWeights& w) {
  require(batch.size() >= 2, ErrorKind::InvalidInput, "VicReg needs a batch of at least 2");
  const Eigen::Index dims = batch.front().first.mean.size();
  Matrix z(static_cast<Eigen::Index>(batch.size()), dims), zr(static_cast<Eigen::Index>(batch.size()), dims);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) = batch[i].first.mean.transpose();
    zr.row(static_cast<Eigen::Index>(i)) = batch[i].second.mean.transpose();
  }
  return loss_vic(z, zr, w);
}

double loss_inc(const LatentEmbedding& latent, const AnchorSet& anchors) {
  const Vector* anchor = anchors.find(latent.frame_id);
  if (anchor == nullptr) return 0.0;
  require(anchor->size() == latent.mean.size(), ErrorKind::InvalidInput, "anchor size mismatch");
  return (latent.mean - *anchor).squaredNorm() / static_cast<double>(latent.mean.size());
}

double loss_total(const LossComponents& c, const LossWeights& w) {
  return w.alpha * c.kl + w.beta * c.rec + w.gamma * c.vic + (w.alpha + w.beta + w.gamma) / 3.0 * c.inc;
}

std::vector<int> vic_references(std::span<const SensorFrame> frames, double threshold) {
  std::vector<int> refs(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    refs[i] = static_cast<int>(i);
    if (i == 0) continue;
    const auto& prev = frames[i - 1];
    const double dt = frames[i].t_end - prev.t_end;
    if (prev.sequence == frames[i].sequence && dt > 0.0 && dt < threshold) refs[i] = static_cast<int>(i - 1);
  }
  return refs;
}

ad::Var batch_loss_on_tape(ad::Tape& tape, const VaeVars& vars, const VaeConfig& config,
                           std::span<const SensorFrame> frames, std::span<const int> batch, std::span<const int> refs,
                           const AnchorSet* anchors, std::span<const char> old_mask, const Matrix& noise,
                           const TrainConfig& train, BatchLoss* report) {
  require(!batch.empty(), ErrorKind::InvalidInput, "empty batch");
  const int b = static_cast<int>(batch.size());
  // encode the union of batch frames and their references once
  std::vector<int> unique(batch.begin(), batch.end());
  std::map<int, int> position;
  for (int i = 0; i < b; ++i) position.emplace(unique[static_cast<std::size_t>(i)], i);
  std::vector<int> ref_pos;
  ref_pos.reserve(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const int r = refs[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])];
    auto [it, inserted] = position.emplace(r, static_cast<int>(unique.size()));
    if (inserted) unique.push_back(r);
    ref_pos.push_back(it->second);
  }
  std::vector<const SensorFrame*> ptrs;
  for (int idx : unique) ptrs.push_back(&frames[static_cast<std::size_t>(idx)]);
  ad::Var x = tape.constant(stack_frames(ptrs));
  EncoderOutput enc = encode_on_tape(vars, config, x, static_cast<int>(ptrs.size()));

  std::vector<int> batch_pos(static_cast<std::size_t>(b));
  std::iota(batch_pos.begin(), batch_pos.end(), 0);
  ad::Var m = ad::select_rows(enc.mean, batch_pos);
  ad::Var lv = ad::select_rows(enc.logvar, batch_pos);

  LossComponents comp;
  ad::Var zero = tape.constant(0.0);
  ad::Var kl = zero, rec = zero, vic = zero, inc = zero;
  if (train.use_kl) kl = kl_on_tape(m, lv);
  if (train.use_rec) {
    require(noise.rows() == b && noise.cols() == config.latent, ErrorKind::InvalidInput, "noise shape mismatch");
    ad::Var z = ad::add(m, ad::mul(ad::exp(ad::scale(lv, 0.5)), tape.constant(noise)));
    ad::Var y = decode_on_tape(vars, config, z);
    Matrix target(b, config.channels);
    for (int i = 0; i < b; ++i) target.row(i) = ptrs[static_cast<std::size_t>(i)]->data.bottomRows(1);
    rec = ad::mse(y, tape.constant(std::move(target)));
  }
  if (train.use_vic && b >= 2) vic = vic_on_tape(m, ad::select_rows(enc.mean, ref_pos), train.vic).total;
  if (train.use_inc && anchors != nullptr) {
    std::vector<int> rows;
    std::vector<const Vector*> targets;
    for (int i = 0; i < b; ++i) {
      if (old_mask.empty() || !old_mask[static_cast<std::size_t>(i)]) continue;
      const Vector* a = anchors->find(ptrs[static_cast<std::size_t>(i)]->id);
      if (a == nullptr) continue;
      rows.push_back(i);
      targets.push_back(a);
    }
    if (!rows.empty()) {
      Matrix anchor_mat(static_cast<Eigen::Index>(rows.size()), config.latent);
      for (std::size_t k = 0; k < rows.size(); ++k) anchor_mat.row(static_cast<Eigen::Index>(k)) = targets[k]->transpose();
      inc = ad::mse(ad::select_rows(m, rows), tape.constant(std::move(anchor_mat)));
    }
  }
  const auto& w = train.weights;
  ad::Var total = ad::add(ad::add(ad::scale(kl, w.alpha), ad::scale(rec, w.beta)),
                          ad::add(ad::scale(vic, w.gamma), ad::scale(inc, (w.alpha + w.beta + w.gamma) / 3.0)));
  if (report) {
    report->components = {kl.scalar(), rec.scalar(), vic.scalar(), inc.scalar()};
    report->total = total.scalar();
  }
  return total;
}

namespace {

Matrix gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

void descend(VaeParams& params, const VaeVars& vars, double lr) {
  auto ps = params.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] -= lr * vars[i].grad();
}

}  // namespace

void record_anchors(AnchorSet& anchors, std::span<const SensorFrame> frames, const VaeParams& params) {
  for (const auto& e : encode_batch(frames, params)) anchors.record(e.frame_id, e.mean);
}

BaseTrainResult vae_train_base(std::span<const SensorFrame> frames, const VaeParams& params, const TrainConfig& train) {
  require(!frames.empty(), ErrorKind::InvalidInput, "empty training set");
  require(train.batch >= 1 && train.epochs >= 0, ErrorKind::InvalidConfig, "invalid batch size or epoch count");
  BaseTrainResult result;
  result.params = params;
  const std::vector<int> refs = vic_references(frames, train.pair_threshold);
  std::mt19937_64 rng(mix_seed(train.seed, 0xba5e));
  std::vector<int> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  const VaeConfig& config = params.config;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch));
      std::span<const int> batch(order.data() + start, end - start);
      Matrix noise = gaussian(static_cast<int>(batch.size()), config.latent, rng);
      ad::Tape tape;
      VaeVars vars = bind(tape, result.params, true);
      BatchLoss report;
      ad::Var loss = batch_loss_on_tape(tape, vars, config, frames, batch, refs, nullptr, {}, noise, train, &report);
      tape.backward(loss);
      descend(result.params, vars, train.lr);
      loss_sum += report.total * static_cast<double>(batch.size());
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(frames.size()));
  }
  record_anchors(result.anchors, frames, result.params);
  return result;
}

std::vector<std::vector<BatchSlot>> online_batch_plan(int n_new, int n_old, int batch, double old_fraction,
                                                      std::uint64_t seed) {
  require(batch >= 1 && old_fraction >= 0.0 && old_fraction < 1.0, ErrorKind::InvalidConfig, "invalid online batch plan");
  std::vector<std::vector<BatchSlot>> plan;
  if (n_new <= 0) return plan;
  std::mt19937_64 rng(mix_seed(seed, 0x0411));
  std::vector<int> fresh(static_cast<std::size_t>(n_new));
  std::iota(fresh.begin(), fresh.end(), 0);
  std::shuffle(fresh.begin(), fresh.end(), rng);
  const int old_per_batch = n_old > 0 ? static_cast<int>(std::lround(batch * old_fraction)) : 0;
  const int new_per_batch = std::max(1, batch - old_per_batch);

  std::vector<int> old_cycle(static_cast<std::size_t>(std::max(n_old, 0)));
  std::iota(old_cycle.begin(), old_cycle.end(), 0);
  std::size_t old_next = old_cycle.size();
  auto draw_old = [&]() {
    if (old_next >= old_cycle.size()) {
      std::shuffle(old_cycle.begin(), old_cycle.end(), rng);
      old_next = 0;
    }
    return old_cycle[old_next++];
  };

  for (std::size_t start = 0; start < fresh.size(); start += static_cast<std::size_t>(new_per_batch)) {
    const std::size_t end = std::min(fresh.size(), start + static_cast<std::size_t>(new_per_batch));
    std::vector<BatchSlot> slots;
    for (std::size_t i = start; i < end; ++i) slots.push_back({fresh[i], false});
    int n_old_here = old_per_batch;
    if (n_old > 0 && end - start < static_cast<std::size_t>(new_per_batch)) {
      n_old_here = static_cast<int>(std::lround(static_cast<double>(end - start) * old_fraction / (1.0 - old_fraction)));
    }
    for (int k = 0; k < n_old_here; ++k) slots.push_back({draw_old(), true});
    plan.push_back(std::move(slots));
  }
  return plan;
}

OnlineTrainResult vae_train_online(std::span<const SensorFrame> new_frames, std::span<const SensorFrame> old_frames,
                                   const VaeParams& params, const AnchorSet& anchors, const TrainConfig& train) {
  OnlineTrainResult result;
  result.params = params;
  if (new_frames.empty()) return result;
  for (const auto& f : old_frames) {
    require(anchors.find(f.id) != nullptr, ErrorKind::InvalidInput,
            "old frame " + std::to_string(f.id) + " has no recorded anchor");
  }
  std::vector<SensorFrame> all(new_frames.begin(), new_frames.end());
  all.insert(all.end(), old_frames.begin(), old_frames.end());
  const std::vector<int> refs = vic_references(all, train.pair_threshold);
  const int n_new = static_cast<int>(new_frames.size());
  auto plan = online_batch_plan(n_new, static_cast<int>(old_frames.size()), train.batch, train.old_fraction, train.seed);
  std::mt19937_64 rng(mix_seed(train.seed, 0x0a1e));
  double loss_sum = 0.0;
  for (const auto& slots : plan) {
    std::vector<int> batch;
    std::vector<char> old_mask;
    for (const auto& s : slots) {
      batch.push_back(s.old ? n_new + s.index : s.index);
      old_mask.push_back(s.old ? 1 : 0);
    }
    Matrix noise = gaussian(static_cast<int>(batch.size()), params.config.latent, rng);
    ad::Tape tape;
    VaeVars vars = bind(tape, result.params, true);
    BatchLoss report;
    ad::Var loss = batch_loss_on_tape(tape, vars, params.config, all, batch, refs, &anchors, old_mask, noise, train, &report);
    tape.backward(loss);
    descend(result.params, vars, train.lr);
    loss_sum += report.total;
    ++result.batches;
  }
  result.mean_loss = result.batches > 0 ? loss_sum / result.batches : 0.0;
  return result;
}

ad::GradCheckResult grad_check(VaeParams& params, std::span<const SensorFrame> frames, const TrainConfig& train,
                               double eps, const AnchorSet* anchors) {
  require(eps >= 1e-6 && eps <= 1e-3, ErrorKind::InvalidInput, "grad_check eps must lie in [1e-6, 1e-3]");
  require(!frames.empty(), ErrorKind::InvalidInput, "grad_check needs frames");
  const std::vector<int> refs = vic_references(frames, train.pair_threshold);
  std::vector<int> batch(frames.size());
  std::iota(batch.begin(), batch.end(), 0);
  std::vector<char> old_mask(frames.size(), 1);
  std::mt19937_64 rng(mix_seed(train.seed, 0x9c));
  const Matrix noise = gaussian(static_cast<int>(frames.size()), params.config.latent, rng);
  const VaeConfig config = params.config;
  auto loss = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    VaeVars v;
    v.vars.assign(vars.begin(), vars.end());
    (void)tape;
    return batch_loss_on_tape(tape, v, config, frames, batch, refs, anchors, old_mask, noise, train, nullptr);
  };
  auto ps = params.parameters();
  return ad::grad_check(ps, loss, eps);
}

}  // namespace cotrate::sensor
