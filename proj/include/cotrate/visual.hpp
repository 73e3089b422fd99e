#pragma once

// Trainable visual head over frozen patch features: decoder, reference
// features, cosine prediction, alignment loss and the SGD training step.

#include <optional>
#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "cotrate/autodiff.hpp"
#include "cotrate/supervision.hpp"
#include "cotrate/synthworld.hpp"

namespace cotrate::visual {

struct DecoderConfig {
  int in_dim = 64;
  int hidden = 64;
  int out_dim = 64;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  /// Bilinear upsampling factor from the patch grid to pixels (1 = patch resolution).
  int upsample = 1;
  /// Replaces the alignment head by a scalar regression output trained with plain MSE.
  bool direct_regression = false;
};

struct DecoderParams {
  DecoderConfig config;
  Matrix w1, b1, gamma1, beta1;  // in x hidden, 1 x hidden
  Matrix w2, b2;                 // hidden x out, 1 x out (linear output)
  Matrix reg_w, reg_b;           // out x 1, 1 x 1 (direct regression only)
  RowVector running_mean1, running_var1;

  /// Learnable tensors only; BN running statistics are excluded.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<std::string> parameter_names() const;
  bool finite() const;
};

DecoderParams init_decoder(const DecoderConfig& config, std::uint64_t seed);
/// Identity convolutions (requires in = hidden = out) and identity BN statistics.
DecoderParams identity_decoder(const DecoderConfig& config);

/// Per-pixel features at output resolution, row-major over (rows, cols).
struct FeatureMap {
  Matrix features;  // (rows*cols) x C
  int rows = 0;
  int cols = 0;
};

struct BnStats {
  RowVector mean1, var1;  // biased batch statistics
};

/// Decoder forward on a tape. Training mode normalizes with batch statistics
/// and reports them in `stats`; eval mode uses the running statistics.
ad::Var decode_on_tape(ad::Tape& tape, std::span<const ad::Var> vars, const DecoderParams& params, const ad::Var& x,
                       bool train, BnStats* stats = nullptr);
/// Binds learnable parameters (same order as DecoderParams::parameters()).
std::vector<ad::Var> bind(ad::Tape& tape, const DecoderParams& params, bool trainable);

/// Eval-mode decoder output for a set of backbone feature rows.
Matrix decode_features(const Matrix& x, const DecoderParams& params);

/// Bilinear (align-corners) interpolation from a rows x cols grid to (rows*f) x (cols*f).
Eigen::SparseMatrix<double> bilinear_matrix(int rows, int cols, int factor);

/// Eval-mode decoding, then bilinear interpolation to output resolution.
FeatureMap extract(const synth::PatchFeatureImage& image, const DecoderParams& params);

struct ReferenceFeatures {
  Vector mean_feature;
  int n_images = 0;
  int n_subsampled = 0;
  bool with_replacement = false;
};

/// A fixed seeded subsample of reference-terrain patches; the mean feature is
/// re-evaluated through the current decoder by `evaluate`.
struct ReferenceSample {
  Matrix patches;  // n x C_b backbone features
  int n_images = 0;
  bool with_replacement = false;

  ReferenceFeatures evaluate(const DecoderParams& params) const;
};

ReferenceSample sample_reference(std::span<const synth::PatchFeatureImage> images, int terrain_id, std::uint64_t seed,
                                 int n_subsampled = 100);
ReferenceFeatures compute_reference(std::span<const synth::PatchFeatureImage> images, const DecoderParams& params,
                                    std::uint64_t seed, int terrain_id, int n_subsampled = 100);

struct PredictionMap {
  Matrix values;  // rows x cols, rescaled to [0,1]
  Matrix cosine;  // raw cosine
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> degenerate;
};

PredictionMap predict(const FeatureMap& features, const ReferenceFeatures& ref);
/// Predictions straight from backbone patches (alignment or regression head).
PredictionMap predict_image(const synth::PatchFeatureImage& image, const DecoderParams& params,
                            const ReferenceFeatures& ref);

struct AlignLoss {
  double value = 0.0;
  bool skipped = false;
};
/// Masked MSE between rescaled predictions and supervision values.
AlignLoss loss_align(const PredictionMap& prediction, const supervision::SupervisionMask& supervision);

/// Tape version: rescaled cosine of `features` rows against a detached reference.
ad::Var rescaled_cosine_on_tape(const ad::Var& features, const Vector& reference);

struct TrainSample {
  Matrix features;  // n x C_b
  Vector targets;   // n
  std::vector<char> valid;
};

/// Flattens an image and its supervision into a training sample.
TrainSample make_sample(const synth::PatchFeatureImage& image, const supervision::SupervisionMask& supervision);
/// Mirrors a sample left-right on its patch grid.
TrainSample flip_horizontal(const TrainSample& sample, int rows, int cols);

struct OptimizerConfig {
  double lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  std::vector<Matrix> velocity;
};

/// Replay term for one step: decoder outputs on `features` are pulled toward `targets`.
struct ReplayTerm {
  const Matrix* features = nullptr;
  const Matrix* targets = nullptr;
  double weight = 20.0;
};

struct StepResult {
  double loss_align = 0.0;
  double loss_replay = 0.0;
  bool align_skipped = false;
};

/// One SGD-with-momentum step on loss_align + weight * loss_replay. The
/// reference patches go through the same training-mode forward pass as the
/// batch; their mean output is the detached reference feature.
StepResult visual_train_step(std::span<const TrainSample> batch, DecoderParams& params, const Matrix& reference_patches,
                             const std::optional<ReplayTerm>& replay, OptimizerState& state,
                             const OptimizerConfig& optimizer);

/// MSE between eval-mode decoder outputs on `features` and `targets`, built on a tape.
ad::Var replay_loss_on_tape(ad::Tape& tape, std::span<const ad::Var> vars, const DecoderParams& params,
                            const Matrix& features, const Matrix& targets);

}  // namespace cotrate::visual
