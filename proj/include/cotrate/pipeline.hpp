#pragma once

// End-to-end run: world, sensor VAE with continual updates, scoring,
// supervision, continual visual training with replay, mapping, planning and
// evaluation. Every stage is a deterministic function of the config.

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "cotrate/config.hpp"
#include "cotrate/eval.hpp"
#include "cotrate/mapping.hpp"
#include "cotrate/planner.hpp"
#include "cotrate/replay.hpp"
#include "cotrate/scoring.hpp"
#include "cotrate/sensornet.hpp"
#include "cotrate/supervision.hpp"
#include "cotrate/visual.hpp"

namespace cotrate::pipeline {

using Log = std::function<void(const std::string&)>;

synth::WorldConfig world_config(const RunConfig& cfg);
synth::WorldMap make_world(const RunConfig& cfg);

/// One robot traversal confined to a terrain; the i-th in terrain order.
struct Sequence {
  int terrain = 0;
  std::vector<synth::Pose> trajectory;
  std::vector<sensor::SensorFrame> frames;
};

std::vector<Sequence> make_sequences(const synth::WorldMap& world, const RunConfig& cfg);

sensor::VaeConfig vae_config(const RunConfig& cfg, int channels);
sensor::TrainConfig train_config(const RunConfig& cfg);

struct SensorStage {
  sensor::VaeParams params;
  sensor::AnchorSet anchors;
  scoring::ReferenceProfile reference;
  std::vector<scoring::ScoreSeries> series;  // per sequence, robustified
  eval::TerrainScores base_scores;           // base terrains right after base training
  eval::TerrainScores final_scores;          // every terrain after all online phases
  std::vector<sensor::VaeParams> checkpoints;
};

SensorStage run_sensor(const std::vector<Sequence>& sequences, const RunConfig& cfg, const Log& log = {});

/// Training images of one increment with their self-supervision.
struct Increment {
  int terrain = 0;
  std::vector<synth::PatchFeatureImage> images;
  std::vector<supervision::SupervisionMask> masks;
};

std::vector<Increment> make_increments(const synth::WorldMap& world, const std::vector<Sequence>& sequences,
                                       const std::vector<scoring::ScoreSeries>& series, const RunConfig& cfg);

/// Images at random poses over the whole world, with ground-truth labels.
struct TestSet {
  std::vector<synth::PatchFeatureImage> images;
  std::vector<Eigen::MatrixXi> labels;
};

TestSet make_test_set(const synth::WorldMap& world, const RunConfig& cfg);

/// Per-terrain supervision statistics over all increments.
eval::TerrainStats supervision_stats(const std::vector<Increment>& increments);

struct VisualStage {
  visual::DecoderParams params;
  visual::ReferenceSample reference;
  std::vector<visual::DecoderParams> checkpoints;  // after each increment
  std::vector<double> forgetting;                   // test mIoU after each increment
  eval::SegmentationResult final_segmentation;
  replay::FeatureBuffer buffer;
  int steps = 0;
  std::size_t buffer_size = 0;
};

std::vector<Matrix> predict_set(const std::vector<synth::PatchFeatureImage>& images, const visual::DecoderParams& params,
                                const visual::ReferenceFeatures& reference);

VisualStage run_visual(const std::vector<Increment>& increments, const TestSet& test, const eval::TerrainStats& stats,
                       const RunConfig& cfg, const Log& log = {});

/// Per-terrain mean score against 1 - u.
double score_correlation(const eval::TerrainScores& scores, const eval::EffortTable& table);

/// A trained visual head ready for inference.
struct VisualModel {
  visual::DecoderParams params;
  visual::ReferenceFeatures reference;
};

std::vector<VisualModel> visual_models(const VisualStage& stage);

/// Regular lattice of poses covering the world, row by row.
std::vector<synth::Pose> survey_poses(const synth::WorldMap& world, double spacing);

struct MapStage {
  mapping::VoxelMap voxels;
  mapping::PlaneModel plane;
  mapping::ElevationMap map;
};

/// LiDAR sweeps from every survey pose. Points are scored by the visual model,
/// or with 1 - u of their terrain when `model` is null.
MapStage run_mapping(const synth::WorldMap& world, const VisualModel* model, const RunConfig& cfg,
                     std::uint64_t tag);

/// Corridor world between the lowest- and highest-effort terrains in the run.
synth::WorldMap make_corridor_world(const RunConfig& cfg);
planner::PlanQuery corridor_query(const synth::WorldMap& corridor, double w_trav);

struct PlanStage {
  MapStage mapping;
  planner::PlanQuery query;
  std::optional<planner::Path> learned;   // query.w_trav
  std::optional<planner::Path> baseline;  // w_trav = 0
  eval::EffortResult learned_effort;
  eval::EffortResult baseline_effort;
};

PlanStage run_planning(const synth::WorldMap& corridor, const VisualModel* model, const RunConfig& cfg);

struct SensorScores {
  eval::TerrainScores base;
  eval::TerrainScores final;
};

/// Everything downstream of visual training: 2D and 2.5D segmentation,
/// mapping, planning and the score metrics.
struct Evaluation {
  MapStage world_map;
  PlanStage plan;
  eval::MetricReport report;
};

Evaluation evaluate(const synth::WorldMap& world, const SensorScores& scores, const std::vector<VisualModel>& checkpoints,
                    const TestSet& test, const eval::TerrainStats& stats, const RunConfig& cfg, const Log& log = {});

struct FullRun {
  SensorStage sensor;
  std::vector<Increment> increments;
  eval::TerrainStats stats;
  VisualStage visual;
  Evaluation evaluation;
};

FullRun run_all(const RunConfig& cfg, const Log& log = {});

/// Named ablation cells: the cross product of the selected toggle sets
/// (loss, head, replay, fcm, buffer, interval, sensors).
std::vector<std::pair<std::string, RunConfig>> ablation_cells(const RunConfig& base,
                                                              const std::vector<std::string>& toggles);

}  // namespace cotrate::pipeline
