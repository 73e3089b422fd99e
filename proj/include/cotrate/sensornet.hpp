#pragma once

// Sensor synchronization, frame partitioning and the score VAE with its four
// training losses (KL, reconstruction, VicReg, incremental anchoring).

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cotrate/autodiff.hpp"
#include "cotrate/synthworld.hpp"

namespace cotrate::sensor {

struct AlignedTickTable {
  std::vector<double> timestamps;
  Matrix values;                           // T x S
  std::vector<std::string> channel_group;  // group label per column
  std::vector<int> terrain_gt;             // optional per-row label, empty when unknown

  int rows() const { return static_cast<int>(values.rows()); }
  int channels() const { return static_cast<int>(values.cols()); }
};

/// Resamples every stream onto the fastest stream's clock over the common
/// interval, linearly interpolating slower streams.
AlignedTickTable synchronize(std::span<const synth::SensorStream> streams);

/// Keeps only columns whose group is listed in `groups` (sensor ablation).
AlignedTickTable select_groups(const AlignedTickTable& table, std::span<const std::string> groups);

/// Labels each row with the terrain under the trajectory at that timestamp.
void label_rows(AlignedTickTable& table, const synth::WorldMap& world, const std::vector<synth::Pose>& trajectory);

struct SensorFrame {
  std::uint64_t id = 0;
  int sequence = 0;
  Matrix data;  // W x S, last row is x_{t,W}
  double t_end = 0.0;
  std::optional<int> terrain_gt;
};

/// Frames end at rows W-1, W-1+stride, ...; ids start at `first_id`.
std::vector<SensorFrame> partition(const AlignedTickTable& table, int window, int stride, int sequence = 0,
                                   std::uint64_t first_id = 0);

struct VaeConfig {
  int window = 100;
  int channels = 20;
  int kernel1 = 11;
  int kernel2 = 7;
  int conv1_channels = 64;
  int conv2_channels = 64;
  int latent = 16;
  int decoder_hidden = 64;
  double logvar_clamp = 10.0;
};

struct LossWeights {
  double alpha = 16.0;
  double beta = 16.0;
  double gamma = 3.0;
};

struct VicWeights {
  double lambda = 25.0;
  double mu = 25.0;
  double nu = 1.0;
  double eps = 1e-4;
};

struct VaeParams {
  VaeConfig config;
  Matrix conv1_w, conv1_b;    // (k1*S) x c1, 1 x c1
  Matrix conv2_w, conv2_b;    // (k2*c1) x c2
  Matrix mean_w, mean_b;      // c2 x L
  Matrix logvar_w, logvar_b;  // c2 x L
  Matrix dec1_w, dec1_b;      // L x hidden (kernel-1 conv)
  Matrix dec2_w, dec2_b;      // hidden x S

  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  static std::vector<std::string> parameter_names();
  bool finite() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
VaeParams init_vae(const VaeConfig& config, std::uint64_t seed);
VaeParams zero_vae(const VaeConfig& config);

struct LatentEmbedding {
  Vector mean;
  Vector logvar;
  double t = 0.0;
  std::optional<int> terrain_gt;
  std::uint64_t frame_id = 0;
};

/// Initial latent means keyed by frame id; entries never change once stored.
class AnchorSet {
 public:
  /// Stores the anchor unless one already exists; returns whether it was stored.
  bool record(std::uint64_t frame_id, const Vector& mean);
  const Vector* find(std::uint64_t frame_id) const;
  std::size_t size() const { return anchors_.size(); }
  const std::map<std::uint64_t, Vector>& entries() const { return anchors_; }

 private:
  std::map<std::uint64_t, Vector> anchors_;
};

// Tape-level network.

struct VaeVars {
  std::vector<ad::Var> vars;  // same order as VaeParams::parameters()
  const ad::Var& operator[](std::size_t i) const { return vars[i]; }
};

VaeVars bind(ad::Tape& tape, const VaeParams& params, bool trainable);

struct EncoderOutput {
  ad::Var mean;    // B x L
  ad::Var logvar;  // B x L, clamped
};

/// Stacks frames row-wise into a (B*W) x S matrix.
Matrix stack_frames(std::span<const SensorFrame* const> frames);

EncoderOutput encode_on_tape(const VaeVars& vars, const VaeConfig& config, const ad::Var& stacked, int batch);
ad::Var decode_on_tape(const VaeVars& vars, const VaeConfig& config, const ad::Var& latent);

ad::Var kl_on_tape(const ad::Var& mean, const ad::Var& logvar);
struct VicTermsVar {
  ad::Var invariance, variance, covariance, total;
};
VicTermsVar vic_on_tape(const ad::Var& z, const ad::Var& z_ref, const VicWeights& w);

// Plain evaluation API.

LatentEmbedding encode(const SensorFrame& frame, const VaeParams& params);
std::vector<LatentEmbedding> encode_batch(std::span<const SensorFrame> frames, const VaeParams& params,
                                          int chunk = 256);
Vector decode(const LatentEmbedding& latent, const VaeParams& params);

/// Mean over samples and dims of 0.5*(mean^2 + exp(logvar) - 1 - logvar).
double loss_kl(std::span<const LatentEmbedding> latents);
double loss_kl(const LatentEmbedding& latent);
/// MSE between a reconstruction and the frame's last row.
double loss_rec(const Vector& y, const SensorFrame& frame);

struct VicTerms {
  double invariance = 0.0;
  double variance = 0.0;
  double covariance = 0.0;
  double total = 0.0;
};
/// VicReg over paired embeddings: lambda*MSE(z, z_ref) + mu*hinge(std) + nu*offdiag(cov),
/// variance averaged and covariance summed over both branches.
VicTerms loss_vic(const Matrix& z, const Matrix& z_ref, const VicWeights& w = {});
VicTerms loss_vic(std::span<const std::pair<LatentEmbedding, LatentEmbedding>> batch, const VicWeights& w = {});

/// MSE between the latent mean and its anchor; 0 when no anchor exists.
double loss_inc(const LatentEmbedding& latent, const AnchorSet& anchors);

struct LossComponents {
  double kl = 0.0;
  double rec = 0.0;
  double vic = 0.0;
  double inc = 0.0;
};
double loss_total(const LossComponents& c, const LossWeights& w = {});

/// Index of each frame's VicReg reference: the preceding frame of the same
/// sequence when t_i - t_prev < threshold, else the frame itself.
std::vector<int> vic_references(std::span<const SensorFrame> frames, double threshold);

struct TrainConfig {
  int epochs = 13;
  double lr = 1e-3;
  int batch = 128;
  std::uint64_t seed = 0;
  double old_fraction = 0.2;
  double pair_threshold = 1.6;
  LossWeights weights;
  VicWeights vic;
  bool use_kl = true;
  bool use_rec = true;
  bool use_vic = true;
  bool use_inc = true;
};

struct BatchLoss {
  LossComponents components;
  double total = 0.0;
};

/// Builds the full training loss for one batch on `tape`. `batch` and `refs`
/// index into `frames`; `old_mask[i]` marks replayed frames that are anchored.
ad::Var batch_loss_on_tape(ad::Tape& tape, const VaeVars& vars, const VaeConfig& config,
                           std::span<const SensorFrame> frames, std::span<const int> batch, std::span<const int> refs,
                           const AnchorSet* anchors, std::span<const char> old_mask, const Matrix& noise,
                           const TrainConfig& train, BatchLoss* report);

struct BaseTrainResult {
  VaeParams params;
  AnchorSet anchors;
  std::vector<double> epoch_loss;
};

BaseTrainResult vae_train_base(std::span<const SensorFrame> frames, const VaeParams& params, const TrainConfig& train);

/// Batches of (index, is_old) with round(batch*old_fraction) old samples per
/// full batch; every new index appears exactly once.
struct BatchSlot {
  int index = 0;
  bool old = false;
};
std::vector<std::vector<BatchSlot>> online_batch_plan(int n_new, int n_old, int batch, double old_fraction,
                                                      std::uint64_t seed);

struct OnlineTrainResult {
  VaeParams params;
  double mean_loss = 0.0;
  int batches = 0;
};

/// One epoch over `new_frames` mixed with replayed `old_frames`; L_INC acts on
/// the old frames through `anchors`.
OnlineTrainResult vae_train_online(std::span<const SensorFrame> new_frames, std::span<const SensorFrame> old_frames,
                                   const VaeParams& params, const AnchorSet& anchors, const TrainConfig& train);

/// Records the current latent mean of every frame as its anchor (first write wins).
void record_anchors(AnchorSet& anchors, std::span<const SensorFrame> frames, const VaeParams& params);

/// Central finite differences against reverse-mode gradients of the full loss
/// over a small batch of frames (refs resolved with the configured threshold).
ad::GradCheckResult grad_check(VaeParams& params, std::span<const SensorFrame> frames, const TrainConfig& train,
                               double eps, const AnchorSet* anchors = nullptr);

}  // namespace cotrate::sensor
