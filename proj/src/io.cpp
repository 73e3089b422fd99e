#include "cotrate/io.hpp"

#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cotrate::io {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::InvalidInput, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingArtifact, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size(), ErrorKind::InvalidInput,
          "bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::vector<std::string_view>> csv_rows(std::string_view text) {
  std::vector<std::vector<std::string_view>> rows;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

Matrix row_matrix(const RowVector& v) { return Matrix(v); }

}  // namespace

Checkpoint pack(const std::vector<std::string>& names, const std::vector<const Matrix*>& tensors, Json meta) {
  require(names.size() == tensors.size(), ErrorKind::InvalidInput, "tensor/name count mismatch");
  Checkpoint ckpt;
  ckpt.header = std::move(meta);
  Json list = Json::array();
  std::size_t total = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    list.push_back({{"name", names[i]}, {"rows", tensors[i]->rows()}, {"cols", tensors[i]->cols()}});
    total += static_cast<std::size_t>(tensors[i]->size());
  }
  ckpt.header["tensors"] = list;
  ckpt.header["floats"] = total;
  ckpt.blob.reserve(total);
  for (const Matrix* m : tensors) {
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) ckpt.blob.push_back(static_cast<float>((*m)(r, c)));
  }
  return ckpt;
}

void unpack(const Checkpoint& ckpt, const std::vector<std::string>& names, const std::vector<Matrix*>& tensors) {
  const Json& list = ckpt.header.at("tensors");
  require(list.size() == names.size() && names.size() == tensors.size(), ErrorKind::InvalidInput,
          "checkpoint tensor count mismatch");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    require(list[i].at("name").get<std::string>() == names[i], ErrorKind::InvalidInput,
            "checkpoint tensor " + std::to_string(i) + " is not " + names[i]);
    const auto rows = list[i].at("rows").get<Eigen::Index>();
    const auto cols = list[i].at("cols").get<Eigen::Index>();
    require(offset + static_cast<std::size_t>(rows * cols) <= ckpt.blob.size(), ErrorKind::InvalidInput,
            "checkpoint blob too short");
    tensors[i]->resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) (*tensors[i])(r, c) = ckpt.blob[offset++];
  }
  require(offset == ckpt.blob.size(), ErrorKind::InvalidInput, "checkpoint blob has trailing data");
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string out = ckpt.header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 4 * ckpt.blob.size());
  for (float f : ckpt.blob) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  write_text(path, out);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string data = read_text(path);
  const auto nl = data.find('\n');
  require(nl != std::string::npos, ErrorKind::InvalidInput, path.string() + ": missing checkpoint header");
  Checkpoint ckpt;
  try {
    ckpt.header = Json::parse(data.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
  const std::size_t bytes = data.size() - nl - 1;
  const auto floats = ckpt.header.value("floats", std::size_t{0});
  require(bytes == 4 * floats, ErrorKind::InvalidInput, path.string() + ": blob size does not match header");
  ckpt.blob.resize(floats);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + nl + 1);
  for (std::size_t i = 0; i < floats; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(p[4 * i + b]) << (8 * b);
    ckpt.blob[i] = std::bit_cast<float>(bits);
  }
  return ckpt;
}

void save_vae(const fs::path& path, const sensor::VaeParams& params) {
  const auto& c = params.config;
  Json meta = {{"kind", "sensor_vae"},
               {"config",
                {{"window", c.window},
                 {"channels", c.channels},
                 {"kernel1", c.kernel1},
                 {"kernel2", c.kernel2},
                 {"conv1_channels", c.conv1_channels},
                 {"conv2_channels", c.conv2_channels},
                 {"latent", c.latent},
                 {"decoder_hidden", c.decoder_hidden},
                 {"logvar_clamp", c.logvar_clamp}}}};
  save_checkpoint(path, pack(sensor::VaeParams::parameter_names(), params.parameters(), std::move(meta)));
}

sensor::VaeParams load_vae(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require(ckpt.header.value("kind", "") == "sensor_vae", ErrorKind::InvalidInput,
          path.string() + ": not a sensor checkpoint");
  sensor::VaeParams p;
  const Json& c = ckpt.header.at("config");
  p.config.window = c.at("window");
  p.config.channels = c.at("channels");
  p.config.kernel1 = c.at("kernel1");
  p.config.kernel2 = c.at("kernel2");
  p.config.conv1_channels = c.at("conv1_channels");
  p.config.conv2_channels = c.at("conv2_channels");
  p.config.latent = c.at("latent");
  p.config.decoder_hidden = c.at("decoder_hidden");
  p.config.logvar_clamp = c.at("logvar_clamp");
  unpack(ckpt, sensor::VaeParams::parameter_names(), p.parameters());
  return p;
}

void save_decoder(const fs::path& path, const visual::DecoderParams& params) {
  const auto& c = params.config;
  Json meta = {{"kind", "visual_decoder"},
               {"config",
                {{"in_dim", c.in_dim},
                 {"hidden", c.hidden},
                 {"out_dim", c.out_dim},
                 {"bn_eps", c.bn_eps},
                 {"bn_momentum", c.bn_momentum},
                 {"upsample", c.upsample},
                 {"direct_regression", c.direct_regression}}}};
  auto names = params.parameter_names();
  auto tensors = params.parameters();
  const Matrix mean = row_matrix(params.running_mean1);
  const Matrix var = row_matrix(params.running_var1);
  names.push_back("running_mean1");
  names.push_back("running_var1");
  tensors.push_back(&mean);
  tensors.push_back(&var);
  save_checkpoint(path, pack(names, tensors, std::move(meta)));
}

visual::DecoderParams load_decoder(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require(ckpt.header.value("kind", "") == "visual_decoder", ErrorKind::InvalidInput,
          path.string() + ": not a visual checkpoint");
  visual::DecoderParams p;
  const Json& c = ckpt.header.at("config");
  p.config.in_dim = c.at("in_dim");
  p.config.hidden = c.at("hidden");
  p.config.out_dim = c.at("out_dim");
  p.config.bn_eps = c.at("bn_eps");
  p.config.bn_momentum = c.at("bn_momentum");
  p.config.upsample = c.at("upsample");
  p.config.direct_regression = c.at("direct_regression");
  auto names = p.parameter_names();
  auto tensors = p.parameters();
  Matrix mean, var;
  names.push_back("running_mean1");
  names.push_back("running_var1");
  tensors.push_back(&mean);
  tensors.push_back(&var);
  unpack(ckpt, names, tensors);
  p.running_mean1 = mean.row(0);
  p.running_var1 = var.row(0);
  if (!p.config.direct_regression) {
    p.reg_w = Matrix::Zero(p.config.out_dim, 1);
    p.reg_b = Matrix::Zero(1, 1);
  }
  return p;
}

void save_reference(const fs::path& path, const visual::ReferenceSample& sample) {
  Json meta = {{"kind", "reference_sample"}, {"n_images", sample.n_images}, {"with_replacement", sample.with_replacement}};
  save_checkpoint(path, pack({"patches"}, {&sample.patches}, std::move(meta)));
}

visual::ReferenceSample load_reference(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require(ckpt.header.value("kind", "") == "reference_sample", ErrorKind::InvalidInput,
          path.string() + ": not a reference sample");
  visual::ReferenceSample sample;
  unpack(ckpt, {"patches"}, {&sample.patches});
  sample.n_images = ckpt.header.at("n_images");
  sample.with_replacement = ckpt.header.at("with_replacement");
  return sample;
}

void save_buffer(const fs::path& path, const replay::FeatureBuffer& buffer) {
  Json meta = {{"kind", "feature_buffer"},
               {"buffer_kind", buffer.kind == replay::BufferKind::Replay ? "replay" : "temporary"},
               {"capacity", buffer.capacity},
               {"entries", buffer.size()}};
  Matrix features = buffer.empty() ? Matrix(0, 0) : buffer.features();
  Matrix targets = buffer.empty() || !buffer.entries.front().target ? Matrix(0, 0) : buffer.targets();
  Matrix steps(static_cast<Eigen::Index>(buffer.size()), 1);
  for (std::size_t i = 0; i < buffer.size(); ++i) steps(static_cast<Eigen::Index>(i), 0) = buffer.entries[i].origin_step;
  save_checkpoint(path, pack({"features", "targets", "origin_steps"}, {&features, &targets, &steps}, std::move(meta)));
}

replay::FeatureBuffer load_buffer(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require(ckpt.header.value("kind", "") == "feature_buffer", ErrorKind::InvalidInput,
          path.string() + ": not a buffer checkpoint");
  Matrix features, targets, steps;
  unpack(ckpt, {"features", "targets", "origin_steps"}, {&features, &targets, &steps});
  replay::FeatureBuffer buffer = ckpt.header.at("buffer_kind") == "replay" ? replay::make_replay_buffer(ckpt.header.at("capacity"))
                                                                            : replay::make_temp_buffer();
  for (Eigen::Index i = 0; i < steps.rows(); ++i) {
    replay::BufferEntry e;
    e.feature = features.row(i).transpose();
    if (targets.rows() == steps.rows()) e.target = Vector(targets.row(i).transpose());
    e.origin_step = static_cast<int>(steps(i, 0));
    buffer.entries.push_back(std::move(e));
  }
  return buffer;
}

std::string grid_csv(const Matrix& grid) {
  std::string out;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      if (c) out.push_back(',');
      out += format_double(grid(r, c));
    }
    out.push_back('\n');
  }
  return out;
}

std::string grid_csv(const Eigen::MatrixXi& grid) {
  std::string out;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      if (c) out.push_back(',');
      out += std::to_string(grid(r, c));
    }
    out.push_back('\n');
  }
  return out;
}

Matrix parse_grid(const std::string& csv) {
  const auto rows = csv_rows(csv);
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == rows.front().size(), ErrorKind::InvalidInput, "ragged CSV grid");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_double(rows[r][c]);
  }
  return m;
}

void save_world(const fs::path& stem, const synth::WorldMap& world) {
  Json terrains = Json::array();
  for (const auto& t : world.terrains) {
    Json sig = Json::array();
    for (const auto& s : t.signature)
      sig.push_back({{"amplitude", s.amplitude}, {"frequency", s.frequency}, {"phase", s.phase}, {"noise_std", s.noise_std}});
    terrains.push_back({{"id", t.id}, {"name", t.name}, {"effort_u", t.effort_u}, {"proto_seed", t.proto_seed}, {"signature", sig}});
  }
  Json layout = Json::array();
  for (const auto& g : world.layout)
    layout.push_back({{"name", g.name}, {"channels", g.channels}, {"rate_hz", g.rate_hz}, {"torque", g.torque}});
  const Json header = {{"rows", world.rows()},
                       {"cols", world.cols()},
                       {"resolution", world.resolution},
                       {"feature_dim", world.sensing.feature_dim},
                       {"terrains", terrains},
                       {"layout", layout}};
  write_text(fs::path(stem.string() + ".json"), header.dump(2) + "\n");
  write_text(fs::path(stem.string() + ".csv"), grid_csv(world.cells));
  write_text(fs::path(stem.string() + "_elevation.csv"), grid_csv(world.elevation));
}

std::string trajectory_jsonl(const std::vector<synth::Pose>& poses) {
  std::string out;
  for (const auto& p : poses) {
    out += "{\"t\":" + format_double(p.t) + ",\"x\":" + format_double(p.x) + ",\"y\":" + format_double(p.y) +
           ",\"yaw\":" + format_double(p.yaw) + "}\n";
  }
  return out;
}

std::string score_series_csv(const scoring::ScoreSeries& series) {
  std::string out = "t,score,terrain_gt\n";
  for (const auto& e : series.entries)
    out += format_double(e.t) + "," + format_double(e.score) + "," + std::to_string(e.terrain_gt.value_or(-1)) + "\n";
  return out;
}

scoring::ScoreSeries parse_score_series(const std::string& csv) {
  const auto rows = csv_rows(csv);
  require(!rows.empty() && rows.front().size() == 3 && rows.front()[0] == "t", ErrorKind::InvalidInput,
          "score series CSV needs header t,score,terrain_gt");
  scoring::ScoreSeries series;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    require(rows[i].size() == 3, ErrorKind::InvalidInput, "score series row " + std::to_string(i) + " malformed");
    scoring::ScoreEntry e;
    e.t = parse_double(rows[i][0]);
    e.score = parse_double(rows[i][1]);
    const int label = static_cast<int>(parse_double(rows[i][2]));
    if (label >= 0) e.terrain_gt = label;
    series.entries.push_back(e);
  }
  return series;
}

std::string terrain_scores_csv(const eval::TerrainScores& scores) {
  std::string out = "terrain,score\n";
  for (const auto& [id, v] : scores) {
    for (double x : v) out += std::to_string(id) + "," + format_double(x) + "\n";
  }
  return out;
}

eval::TerrainScores parse_terrain_scores(const std::string& csv) {
  const auto rows = csv_rows(csv);
  require(!rows.empty() && rows.front().size() == 2 && rows.front()[0] == "terrain", ErrorKind::InvalidInput,
          "terrain score CSV needs header terrain,score");
  eval::TerrainScores out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    require(rows[i].size() == 2, ErrorKind::InvalidInput, "terrain score row " + std::to_string(i) + " malformed");
    out[static_cast<int>(parse_double(rows[i][0]))].push_back(parse_double(rows[i][1]));
  }
  return out;
}

void save_supervision(const fs::path& stem, const supervision::SupervisionMask& mask) {
  write_text(fs::path(stem.string() + "_values.csv"), grid_csv(mask.values));
  write_text(fs::path(stem.string() + "_valid.csv"), grid_csv(Eigen::MatrixXi(mask.valid.cast<int>())));
}

void save_elevation(const fs::path& stem, const mapping::ElevationMap& map) {
  const auto& g = map.geometry;
  const Json header = {{"origin_x", g.origin_x}, {"origin_y", g.origin_y}, {"resolution", g.resolution},
                       {"rows", g.rows},         {"cols", g.cols}};
  write_text(fs::path(stem.string() + ".json"), header.dump(2) + "\n");
  write_text(fs::path(stem.string() + "_height.csv"), grid_csv(map.height));
  write_text(fs::path(stem.string() + "_trav.csv"), grid_csv(map.trav));
  write_text(fs::path(stem.string() + "_observed.csv"), grid_csv(Eigen::MatrixXi(map.observed.cast<int>())));
}

mapping::ElevationMap load_elevation(const fs::path& stem) {
  const Json header = Json::parse(read_text(fs::path(stem.string() + ".json")));
  mapping::ElevationMap map;
  map.geometry.origin_x = header.at("origin_x");
  map.geometry.origin_y = header.at("origin_y");
  map.geometry.resolution = header.at("resolution");
  map.geometry.rows = header.at("rows");
  map.geometry.cols = header.at("cols");
  map.height = parse_grid(read_text(fs::path(stem.string() + "_height.csv")));
  map.trav = parse_grid(read_text(fs::path(stem.string() + "_trav.csv")));
  const Matrix observed = parse_grid(read_text(fs::path(stem.string() + "_observed.csv")));
  for (const Matrix* m : std::initializer_list<const Matrix*>{&map.height, &map.trav, &observed})
    require(m->rows() == map.geometry.rows && m->cols() == map.geometry.cols, ErrorKind::InvalidInput,
            stem.string() + ": grid shape does not match header");
  map.observed = observed.array() != 0.0;
  return map;
}

std::string path_csv(const mapping::ElevationMap& map, const planner::Path& path, double w_trav) {
  std::string out = "row,col,height,cost\n";
  double cost = 0.0;
  for (std::size_t i = 0; i < path.cells.size(); ++i) {
    const auto& c = path.cells[i];
    if (i) cost += planner::edge_cost(map, path.cells[i - 1], c, w_trav);
    out += std::to_string(c.row) + "," + std::to_string(c.col) + "," + format_double(map.height(c.row, c.col)) + "," +
           format_double(cost) + "\n";
  }
  return out;
}

Json report_json(const eval::MetricReport& r) {
  Json terrain = Json::object();
  for (const auto& [id, v] : r.terrain_mean_score) terrain[std::to_string(id)] = v;
  Json notes = Json::object();
  for (const auto& [k, v] : r.notes) notes[k] = v;
  return {{"effort", r.effort},
          {"epl", r.epl},
          {"effort_baseline", r.effort_baseline},
          {"epl_baseline", r.epl_baseline},
          {"miou_2d", r.miou_2d},
          {"miou_25d", r.miou_25d},
          {"forgetting", r.forgetting},
          {"score",
           {{"pairwise_overlap", r.score.pairwise_overlap},
            {"avg_range", r.score.avg_range},
            {"stability", r.score.stability},
            {"correlation", r.score.correlation},
            {"overlap_defined", r.score.overlap_defined},
            {"correlation_defined", r.score.correlation_defined}}},
          {"hyper_objective", r.hyper},
          {"terrain_mean_score", terrain},
          {"notes", notes}};
}

std::string report_text(const eval::MetricReport& report) { return report_json(report).dump(2) + "\n"; }

std::string forgetting_csv(const std::vector<double>& curve) {
  std::string out = "increment,miou\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out += std::to_string(i) + "," + format_double(curve[i]) + "\n";
  return out;
}

}  // namespace cotrate::io
