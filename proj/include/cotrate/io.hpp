#pragma once

// Run artifacts: checkpoints (one-line JSON header followed by a little-endian
// float32 blob), CSV grids and series, JSON-lines trajectories and the metric
// report.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cotrate/eval.hpp"
#include "cotrate/mapping.hpp"
#include "cotrate/planner.hpp"
#include "cotrate/replay.hpp"
#include "cotrate/scoring.hpp"
#include "cotrate/sensornet.hpp"
#include "cotrate/supervision.hpp"
#include "cotrate/synthworld.hpp"
#include "cotrate/visual.hpp"

namespace cotrate::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

void write_text(const fs::path& path, const std::string& text);
/// Throws missing-artifact when the file does not exist.
std::string read_text(const fs::path& path);

/// Shortest round-trip decimal form.
std::string format_double(double v);

struct Checkpoint {
  Json header;
  std::vector<float> blob;
};

/// `header["tensors"]` lists {name, rows, cols}; the blob holds them row-major in that order.
Checkpoint pack(const std::vector<std::string>& names, const std::vector<const Matrix*>& tensors, Json meta);
/// Fills `tensors` (resized) from a packed checkpoint; names and count must match.
void unpack(const Checkpoint& ckpt, const std::vector<std::string>& names, const std::vector<Matrix*>& tensors);

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& path);

void save_vae(const fs::path& path, const sensor::VaeParams& params);
sensor::VaeParams load_vae(const fs::path& path);

void save_decoder(const fs::path& path, const visual::DecoderParams& params);
visual::DecoderParams load_decoder(const fs::path& path);

void save_reference(const fs::path& path, const visual::ReferenceSample& sample);
visual::ReferenceSample load_reference(const fs::path& path);

void save_buffer(const fs::path& path, const replay::FeatureBuffer& buffer);
replay::FeatureBuffer load_buffer(const fs::path& path);

/// Matrix as CSV rows.
std::string grid_csv(const Matrix& grid);
std::string grid_csv(const Eigen::MatrixXi& grid);
Matrix parse_grid(const std::string& csv);

/// `<stem>.csv` terrain ids, `<stem>_elevation.csv` and `<stem>.json` header.
void save_world(const fs::path& stem, const synth::WorldMap& world);
/// JSON-lines, one record per pose.
std::string trajectory_jsonl(const std::vector<synth::Pose>& poses);

/// Header `t,score,terrain_gt`; an absent label is written as -1.
std::string score_series_csv(const scoring::ScoreSeries& series);
scoring::ScoreSeries parse_score_series(const std::string& csv);

/// Header `terrain,score`, one row per sample.
std::string terrain_scores_csv(const eval::TerrainScores& scores);
eval::TerrainScores parse_terrain_scores(const std::string& csv);

/// `<stem>_values.csv` and `<stem>_valid.csv`.
void save_supervision(const fs::path& stem, const supervision::SupervisionMask& mask);

/// `<stem>_height.csv`, `<stem>_trav.csv`, `<stem>_observed.csv` and `<stem>.json`.
void save_elevation(const fs::path& stem, const mapping::ElevationMap& map);
mapping::ElevationMap load_elevation(const fs::path& stem);

/// Header `row,col,height,cost`; cost is cumulative along the path.
std::string path_csv(const mapping::ElevationMap& map, const planner::Path& path, double w_trav);

Json report_json(const eval::MetricReport& report);
/// Pretty-printed, newline terminated; byte-stable for equal reports.
std::string report_text(const eval::MetricReport& report);
/// Header `increment,miou`.
std::string forgetting_csv(const std::vector<double>& curve);

}  // namespace cotrate::io
