#include "cotrate/visual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cotrate::visual {

std::vector<Matrix*> DecoderParams::parameters() {
  std::vector<Matrix*> p{&w1, &b1, &gamma1, &beta1, &w2, &b2};
  if (config.direct_regression) {
    p.push_back(&reg_w);
    p.push_back(&reg_b);
  }
  return p;
}

std::vector<const Matrix*> DecoderParams::parameters() const {
  std::vector<const Matrix*> p{&w1, &b1, &gamma1, &beta1, &w2, &b2};
  if (config.direct_regression) {
    p.push_back(&reg_w);
    p.push_back(&reg_b);
  }
  return p;
}

std::vector<std::string> DecoderParams::parameter_names() const {
  std::vector<std::string> n{"w1", "b1", "gamma1", "beta1", "w2", "b2"};
  if (config.direct_regression) {
    n.push_back("reg_w");
    n.push_back("reg_b");
  }
  return n;
}

bool DecoderParams::finite() const {
  for (const Matrix* m : parameters()) {
    if (!m->allFinite()) return false;
  }
  return running_mean1.allFinite() && running_var1.allFinite();
}

namespace {

void validate(const DecoderConfig& c) {
  require(c.in_dim >= 1 && c.hidden >= 1 && c.out_dim >= 1, ErrorKind::InvalidConfig, "decoder dims must be positive");
  require(c.upsample >= 1, ErrorKind::InvalidConfig, "upsample factor must be >= 1");
  require(c.bn_momentum > 0.0 && c.bn_momentum <= 1.0, ErrorKind::InvalidConfig, "bn momentum must lie in (0,1]");
}

DecoderParams blank(const DecoderConfig& c) {
  validate(c);
  DecoderParams p;
  p.config = c;
  p.w1 = Matrix::Zero(c.in_dim, c.hidden);
  p.b1 = Matrix::Zero(1, c.hidden);
  p.gamma1 = Matrix::Ones(1, c.hidden);
  p.beta1 = Matrix::Zero(1, c.hidden);
  p.w2 = Matrix::Zero(c.hidden, c.out_dim);
  p.b2 = Matrix::Zero(1, c.out_dim);
  p.reg_w = Matrix::Zero(c.out_dim, 1);
  p.reg_b = Matrix::Zero(1, 1);
  p.running_mean1 = RowVector::Zero(c.hidden);
  p.running_var1 = RowVector::Ones(c.hidden);
  return p;
}

void fill_uniform(Matrix& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

}  // namespace

DecoderParams init_decoder(const DecoderConfig& config, std::uint64_t seed) {
  DecoderParams p = blank(config);
  std::mt19937_64 rng(mix_seed(seed, 0xdec));
  fill_uniform(p.w1, 1.0 / std::sqrt(static_cast<double>(config.in_dim)), rng);
  fill_uniform(p.b1, 1.0 / std::sqrt(static_cast<double>(config.in_dim)), rng);
  fill_uniform(p.w2, 1.0 / std::sqrt(static_cast<double>(config.hidden)), rng);
  fill_uniform(p.b2, 1.0 / std::sqrt(static_cast<double>(config.hidden)), rng);
  fill_uniform(p.reg_w, 1.0 / std::sqrt(static_cast<double>(config.out_dim)), rng);
  fill_uniform(p.reg_b, 1.0 / std::sqrt(static_cast<double>(config.out_dim)), rng);
  return p;
}

DecoderParams identity_decoder(const DecoderConfig& config) {
  require(config.in_dim == config.hidden && config.hidden == config.out_dim, ErrorKind::InvalidConfig,
          "identity decoder needs equal dims");
  DecoderParams p = blank(config);
  p.w1.setIdentity();
  p.w2.setIdentity();
  return p;
}

std::vector<ad::Var> bind(ad::Tape& tape, const DecoderParams& params, bool trainable) {
  std::vector<ad::Var> vars;
  for (const Matrix* m : params.parameters()) vars.push_back(trainable ? tape.parameter(*m) : tape.constant(*m));
  return vars;
}

namespace {

ad::Var bn_layer(ad::Tape& tape, const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, const RowVector& rm,
                 const RowVector& rv, double eps, bool train, RowVector* mean, RowVector* var) {
  if (train) {
    ad::BatchNormOutput bn = ad::batch_norm(x, gamma, beta, eps);
    if (mean) *mean = bn.batch_mean;
    if (var) *var = bn.batch_var;
    return bn.out;
  }
  Matrix inv = (rv.array() + eps).rsqrt().matrix();
  ad::Var xhat = ad::mul_row(ad::sub_row(x, tape.constant(Matrix(rm))), tape.constant(std::move(inv)));
  return ad::add_row(ad::mul_row(xhat, gamma), beta);
}

}  // namespace

ad::Var decode_on_tape(ad::Tape& tape, std::span<const ad::Var> v, const DecoderParams& p, const ad::Var& x, bool train,
                       BnStats* stats) {
  require(x.cols() == p.config.in_dim, ErrorKind::InvalidInput, "decoder input width mismatch");
  require(!train || x.rows() >= 2, ErrorKind::InvalidInput, "training-mode batch norm needs >= 2 rows");
  const double eps = p.config.bn_eps;
  ad::Var h = ad::add_row(ad::matmul(x, v[0]), v[1]);
  h = bn_layer(tape, h, v[2], v[3], p.running_mean1, p.running_var1, eps, train, stats ? &stats->mean1 : nullptr,
               stats ? &stats->var1 : nullptr);
  h = ad::relu(h);
  return ad::add_row(ad::matmul(h, v[4]), v[5]);
}

Matrix decode_features(const Matrix& x, const DecoderParams& params) {
  ad::Tape tape;
  auto vars = bind(tape, params, false);
  return decode_on_tape(tape, vars, params, tape.constant(x), false).value();
}

Eigen::SparseMatrix<double> bilinear_matrix(int rows, int cols, int factor) {
  require(rows >= 1 && cols >= 1 && factor >= 1, ErrorKind::InvalidInput, "invalid interpolation shape");
  const int out_r = rows * factor, out_c = cols * factor;
  std::vector<Eigen::Triplet<double>> trips;
  auto axis = [](int out_i, int out_n, int in_n, int& i0, int& i1, double& w) {
    const double src = out_n > 1 ? static_cast<double>(out_i) * (in_n - 1) / (out_n - 1) : 0.0;
    i0 = std::min(static_cast<int>(std::floor(src)), in_n - 1);
    i1 = std::min(i0 + 1, in_n - 1);
    w = src - i0;
  };
  for (int r = 0; r < out_r; ++r) {
    int r0, r1;
    double wr;
    axis(r, out_r, rows, r0, r1, wr);
    for (int c = 0; c < out_c; ++c) {
      int c0, c1;
      double wc;
      axis(c, out_c, cols, c0, c1, wc);
      const int o = r * out_c + c;
      trips.emplace_back(o, r0 * cols + c0, (1 - wr) * (1 - wc));
      trips.emplace_back(o, r0 * cols + c1, (1 - wr) * wc);
      trips.emplace_back(o, r1 * cols + c0, wr * (1 - wc));
      trips.emplace_back(o, r1 * cols + c1, wr * wc);
    }
  }
  Eigen::SparseMatrix<double> m(out_r * out_c, rows * cols);
  m.setFromTriplets(trips.begin(), trips.end());
  m.prune(0.0);
  return m;
}

FeatureMap extract(const synth::PatchFeatureImage& image, const DecoderParams& params) {
  require(image.features.cols() == params.config.in_dim, ErrorKind::InvalidInput, "image feature width mismatch");
  require(image.features.rows() == static_cast<Eigen::Index>(image.rows()) * image.cols(), ErrorKind::InvalidInput,
          "image grid does not match feature rows");
  FeatureMap out;
  const int f = params.config.upsample;
  out.rows = image.rows() * f;
  out.cols = image.cols() * f;
  Matrix decoded = decode_features(image.features, params);
  out.features = f == 1 ? decoded : Matrix(bilinear_matrix(image.rows(), image.cols(), f) * decoded);
  return out;
}

ReferenceSample sample_reference(std::span<const synth::PatchFeatureImage> images, int terrain_id, std::uint64_t seed,
                                 int n_subsampled) {
  require(!images.empty(), ErrorKind::InvalidInput, "no reference images");
  require(n_subsampled >= 1, ErrorKind::InvalidInput, "n_subsampled must be positive");
  std::vector<std::pair<int, int>> pool;  // (image, patch)
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& gt = images[i].terrain_gt;
    for (int r = 0; r < gt.rows(); ++r) {
      for (int c = 0; c < gt.cols(); ++c) {
        if (gt(r, c) == terrain_id) pool.emplace_back(static_cast<int>(i), r * images[i].cols() + c);
      }
    }
  }
  require(!pool.empty(), ErrorKind::InvalidInput, "reference images contain no reference-terrain patch");
  std::mt19937_64 rng(mix_seed(seed, 0x4ef));
  ReferenceSample s;
  s.n_images = static_cast<int>(images.size());
  s.with_replacement = static_cast<int>(pool.size()) < n_subsampled;
  std::vector<std::pair<int, int>> picked;
  if (s.with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int k = 0; k < n_subsampled; ++k) picked.push_back(pool[pick(rng)]);
  } else {
    std::shuffle(pool.begin(), pool.end(), rng);
    picked.assign(pool.begin(), pool.begin() + n_subsampled);
  }
  s.patches.resize(n_subsampled, images.front().features.cols());
  for (int k = 0; k < n_subsampled; ++k) {
    const auto [img, patch] = picked[static_cast<std::size_t>(k)];
    s.patches.row(k) = images[static_cast<std::size_t>(img)].features.row(patch);
  }
  return s;
}

ReferenceFeatures ReferenceSample::evaluate(const DecoderParams& params) const {
  ReferenceFeatures ref;
  ref.mean_feature = decode_features(patches, params).colwise().mean().transpose();
  ref.n_images = n_images;
  ref.n_subsampled = static_cast<int>(patches.rows());
  ref.with_replacement = with_replacement;
  return ref;
}

ReferenceFeatures compute_reference(std::span<const synth::PatchFeatureImage> images, const DecoderParams& params,
                                    std::uint64_t seed, int terrain_id, int n_subsampled) {
  return sample_reference(images, terrain_id, seed, n_subsampled).evaluate(params);
}

PredictionMap predict(const FeatureMap& features, const ReferenceFeatures& ref) {
  require(features.features.cols() == ref.mean_feature.size(), ErrorKind::InvalidInput, "feature width mismatch");
  PredictionMap out;
  out.values.resize(features.rows, features.cols);
  out.cosine.resize(features.rows, features.cols);
  out.degenerate.resize(features.rows, features.cols);
  const double nref = ref.mean_feature.norm();
  for (int r = 0; r < features.rows; ++r) {
    for (int c = 0; c < features.cols; ++c) {
      const auto row = features.features.row(r * features.cols + c);
      const double n = row.norm();
      const bool degenerate = n < 1e-12 || nref < 1e-12;
      const double cos = degenerate ? 0.0 : row.dot(ref.mean_feature) / (n * nref);
      out.cosine(r, c) = cos;
      out.values(r, c) = rescale_cosine(cos);
      out.degenerate(r, c) = degenerate;
    }
  }
  return out;
}

PredictionMap predict_image(const synth::PatchFeatureImage& image, const DecoderParams& params,
                            const ReferenceFeatures& ref) {
  FeatureMap f = extract(image, params);
  if (!params.config.direct_regression) return predict(f, ref);
  PredictionMap out;
  Matrix raw = f.features * params.reg_w;
  raw.array() += params.reg_b(0, 0);
  out.values.resize(f.rows, f.cols);
  out.cosine.resize(f.rows, f.cols);
  out.degenerate = PredictionMap{}.degenerate.Constant(f.rows, f.cols, false);
  for (int r = 0; r < f.rows; ++r) {
    for (int c = 0; c < f.cols; ++c) {
      const double v = raw(r * f.cols + c, 0);
      out.values(r, c) = std::clamp(v, 0.0, 1.0);
      out.cosine(r, c) = 2.0 * out.values(r, c) - 1.0;
    }
  }
  return out;
}

AlignLoss loss_align(const PredictionMap& prediction, const supervision::SupervisionMask& supervision) {
  require(prediction.values.rows() == supervision.values.rows() && prediction.values.cols() == supervision.values.cols(),
          ErrorKind::InvalidInput, "prediction and supervision shapes differ");
  AlignLoss out;
  const int n = supervision.valid_count();
  if (n == 0) {
    out.skipped = true;
    return out;
  }
  double acc = 0.0;
  for (Eigen::Index r = 0; r < supervision.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < supervision.values.cols(); ++c) {
      if (!supervision.valid(r, c)) continue;
      const double d = rescale_cosine(prediction.cosine(r, c)) - supervision.values(r, c);
      acc += d * d;
    }
  }
  out.value = acc / n;
  return out;
}

ad::Var rescaled_cosine_on_tape(const ad::Var& features, const Vector& reference) {
  auto& tape = *features.tape();
  const double n = reference.norm();
  require(n >= 1e-12, ErrorKind::DegenerateVector, "reference feature norm below 1e-12");
  ad::Var ref = tape.constant(Matrix(reference.transpose() / n));
  ad::Var cos = ad::rows_dot(ad::normalize_rows(features), ref);
  return ad::add_scalar(ad::scale(cos, 0.5), 0.5);
}

TrainSample make_sample(const synth::PatchFeatureImage& image, const supervision::SupervisionMask& supervision) {
  require(supervision.values.rows() == image.rows() && supervision.values.cols() == image.cols(),
          ErrorKind::InvalidInput, "supervision must match the patch grid");
  TrainSample s;
  s.features = image.features;
  s.targets.resize(image.features.rows());
  s.valid.resize(static_cast<std::size_t>(image.features.rows()));
  for (int r = 0; r < image.rows(); ++r) {
    for (int c = 0; c < image.cols(); ++c) {
      const int i = r * image.cols() + c;
      s.targets(i) = supervision.values(r, c);
      s.valid[static_cast<std::size_t>(i)] = supervision.valid(r, c) ? 1 : 0;
    }
  }
  return s;
}

TrainSample flip_horizontal(const TrainSample& sample, int rows, int cols) {
  TrainSample out = sample;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int src = r * cols + (cols - 1 - c), dst = r * cols + c;
      out.features.row(dst) = sample.features.row(src);
      out.targets(dst) = sample.targets(src);
      out.valid[static_cast<std::size_t>(dst)] = sample.valid[static_cast<std::size_t>(src)];
    }
  }
  return out;
}

ad::Var replay_loss_on_tape(ad::Tape& tape, std::span<const ad::Var> vars, const DecoderParams& params,
                            const Matrix& features, const Matrix& targets) {
  require(features.rows() == targets.rows(), ErrorKind::InvalidInput, "replay features and targets differ in size");
  ad::Var out = decode_on_tape(tape, vars, params, tape.constant(features), false);
  return ad::mse(out, tape.constant(targets));
}

StepResult visual_train_step(std::span<const TrainSample> batch, DecoderParams& params, const Matrix& reference_patches,
                             const std::optional<ReplayTerm>& replay, OptimizerState& state,
                             const OptimizerConfig& optimizer) {
  require(!batch.empty(), ErrorKind::InvalidInput, "empty visual batch");
  StepResult result;
  require(reference_patches.rows() >= 1, ErrorKind::InvalidInput, "no reference patches");
  Eigen::Index rows = reference_patches.rows();
  for (const auto& s : batch) rows += s.features.rows();
  Matrix x(rows, params.config.in_dim);
  Vector targets(rows);
  std::vector<int> valid;
  Eigen::Index offset = 0;
  for (const auto& s : batch) {
    x.middleRows(offset, s.features.rows()) = s.features;
    targets.segment(offset, s.features.rows()) = s.targets;
    for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
      if (s.valid[static_cast<std::size_t>(i)]) valid.push_back(static_cast<int>(offset + i));
    }
    offset += s.features.rows();
  }
  const Eigen::Index n_batch = offset;
  x.bottomRows(reference_patches.rows()) = reference_patches;

  ad::Tape tape;
  auto vars = bind(tape, params, true);
  BnStats stats;
  ad::Var out = decode_on_tape(tape, vars, params, tape.constant(x), true, &stats);
  ad::Var loss = tape.constant(0.0);
  if (valid.empty()) {
    result.align_skipped = true;
  } else {
    ad::Var selected = ad::select_rows(out, valid);
    ad::Var pred;
    if (params.config.direct_regression) {
      pred = ad::add_row(ad::matmul(selected, vars[6]), vars[7]);
    } else {
      const Vector reference = out.value().bottomRows(rows - n_batch).colwise().mean().transpose();
      pred = rescaled_cosine_on_tape(selected, reference);
    }
    Matrix t(static_cast<Eigen::Index>(valid.size()), 1);
    for (std::size_t k = 0; k < valid.size(); ++k) t(static_cast<Eigen::Index>(k), 0) = targets(valid[k]);
    ad::Var align = ad::mse(pred, tape.constant(std::move(t)));
    result.loss_align = align.scalar();
    loss = align;
  }
  if (replay && replay->features && replay->features->rows() > 0) {
    ad::Var rl = replay_loss_on_tape(tape, vars, params, *replay->features, *replay->targets);
    result.loss_replay = rl.scalar();
    loss = ad::add(loss, ad::scale(rl, replay->weight));
  }
  tape.backward(loss);

  auto ps = params.parameters();
  if (state.velocity.size() != ps.size()) {
    state.velocity.clear();
    for (const Matrix* p : ps) state.velocity.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Matrix g = vars[i].grad() + optimizer.weight_decay * *ps[i];
    state.velocity[i] = optimizer.momentum * state.velocity[i] + g;
    *ps[i] -= optimizer.lr * state.velocity[i];
  }
  // running statistics use the unbiased batch variance
  const double m = params.config.bn_momentum;
  const double unbias = static_cast<double>(rows) / static_cast<double>(std::max<Eigen::Index>(rows - 1, 1));
  params.running_mean1 = (1 - m) * params.running_mean1 + m * stats.mean1;
  params.running_var1 = (1 - m) * params.running_var1 + m * unbias * stats.var1;
  return result;
}

}  // namespace cotrate::visual
