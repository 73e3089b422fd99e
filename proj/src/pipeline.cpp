#include "cotrate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cotrate::pipeline {

namespace {

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::vector<const sensor::SensorFrame*> frames_of(const std::vector<Sequence>& seqs, std::size_t begin,
                                                  std::size_t end) {
  std::vector<const sensor::SensorFrame*> out;
  for (std::size_t i = begin; i < end; ++i) {
    for (const auto& f : seqs[i].frames) out.push_back(&f);
  }
  return out;
}

std::vector<sensor::SensorFrame> copy_frames(const std::vector<Sequence>& seqs, std::size_t begin, std::size_t end) {
  std::vector<sensor::SensorFrame> out;
  for (auto* f : frames_of(seqs, begin, end)) out.push_back(*f);
  return out;
}

eval::TerrainScores scores_by_terrain(const std::vector<sensor::SensorFrame>& frames,
                                      const std::vector<sensor::LatentEmbedding>& latents,
                                      const scoring::ReferenceProfile& ref) {
  eval::TerrainScores out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].terrain_gt) out[*frames[i].terrain_gt].push_back(scoring::score(latents[i], ref));
  }
  return out;
}

}  // namespace

synth::WorldConfig world_config(const RunConfig& cfg) {
  synth::WorldConfig wc = synth::default_world_config(cfg.sensor_noise);
  wc.terrains.resize(static_cast<std::size_t>(cfg.n_terrains));
  wc.sensing.feature_noise = cfg.feature_noise;
  wc.elevation_amplitude = cfg.elevation_amplitude;
  return wc;
}

synth::WorldMap make_world(const RunConfig& cfg) {
  cfg.validate();
  return synth::gen_world(world_config(cfg), mix_seed(cfg.seed, 1), cfg.n_terrains, cfg.world_rows, cfg.world_cols);
}

std::vector<Sequence> make_sequences(const synth::WorldMap& world, const RunConfig& cfg) {
  std::vector<Sequence> out;
  std::uint64_t next_id = 0;
  double start = 0.0;
  for (std::size_t k = 0; k < cfg.terrain_order.size(); ++k) {
    Sequence s;
    s.terrain = cfg.terrain_order[k];
    s.trajectory = synth::gen_terrain_sequence(world, s.terrain, mix_seed(cfg.seed, 100 + k), cfg.sequence_seconds,
                                               20.0, start);
    const auto streams = synth::sample_sensor_streams(world, s.trajectory, mix_seed(cfg.seed, 200 + k));
    auto table = sensor::synchronize(streams);
    table = sensor::select_groups(table, cfg.sensor_groups);
    sensor::label_rows(table, world, s.trajectory);
    s.frames = sensor::partition(table, cfg.window, cfg.stride, static_cast<int>(k), next_id);
    next_id += s.frames.size();
    start = s.trajectory.back().t + 10.0;
    out.push_back(std::move(s));
  }
  return out;
}

sensor::VaeConfig vae_config(const RunConfig& cfg, int channels) {
  sensor::VaeConfig v;
  v.window = cfg.window;
  v.channels = channels;
  v.latent = cfg.latent;
  return v;
}

sensor::TrainConfig train_config(const RunConfig& cfg) {
  sensor::TrainConfig t;
  t.epochs = cfg.sensor_epochs;
  t.lr = cfg.sensor_lr;
  t.batch = cfg.sensor_batch;
  t.seed = mix_seed(cfg.seed, 300);
  t.use_kl = cfg.use_kl;
  t.use_rec = cfg.use_rec;
  t.use_vic = cfg.use_vic;
  t.use_inc = cfg.use_inc;
  return t;
}

SensorStage run_sensor(const std::vector<Sequence>& sequences, const RunConfig& cfg, const Log& log) {
  require(!sequences.empty() && !sequences.front().frames.empty(), ErrorKind::InvalidInput, "no sensor frames");
  const std::size_t n_base = static_cast<std::size_t>(cfg.base_terrains);
  const int channels = static_cast<int>(sequences.front().frames.front().data.cols());
  SensorStage st;
  sensor::TrainConfig train = train_config(cfg);

  const auto base_frames = copy_frames(sequences, 0, n_base);
  auto base = sensor::vae_train_base(base_frames, sensor::init_vae(vae_config(cfg, channels), mix_seed(cfg.seed, 301)),
                                     train);
  st.params = std::move(base.params);
  st.anchors = std::move(base.anchors);
  say(log, "sensor base training: final epoch loss " +
               (base.epoch_loss.empty() ? std::string("n/a") : std::to_string(base.epoch_loss.back())));
  st.checkpoints.push_back(st.params);

  // the reference terrain is the first in order, seen during base training
  auto reference_of = [&](const sensor::VaeParams& params) {
    const auto latents = sensor::encode_batch(sequences.front().frames, params);
    return scoring::calibrate_reference(latents, sequences.front().terrain);
  };
  {
    const auto ref = reference_of(st.params);
    st.base_scores = scores_by_terrain(base_frames, sensor::encode_batch(base_frames, st.params), ref);
  }

  for (std::size_t k = n_base; k < sequences.size(); ++k) {
    const auto old_frames = copy_frames(sequences, 0, k);
    for (int e = 0; e < cfg.online_epochs; ++e) {
      sensor::TrainConfig t = train;
      t.seed = mix_seed(train.seed, 1000 * k + static_cast<std::uint64_t>(e));
      t.lr = cfg.online_lr;
      auto r = sensor::vae_train_online(sequences[k].frames, old_frames, st.params, st.anchors, t);
      st.params = std::move(r.params);
      say(log, "sensor online terrain " + std::to_string(sequences[k].terrain) + " epoch " + std::to_string(e) +
                   ": mean loss " + std::to_string(r.mean_loss));
    }
    sensor::record_anchors(st.anchors, sequences[k].frames, st.params);
    st.checkpoints.push_back(st.params);
  }

  st.reference = reference_of(st.params);
  const auto all = copy_frames(sequences, 0, sequences.size());
  st.final_scores = scores_by_terrain(all, sensor::encode_batch(all, st.params), st.reference);
  for (const auto& s : sequences) {
    const auto latents = sensor::encode_batch(s.frames, st.params);
    st.series.push_back(scoring::robustify(scoring::score_series(latents, st.reference), cfg.robust_window));
  }
  return st;
}

std::vector<Increment> make_increments(const synth::WorldMap& world, const std::vector<Sequence>& sequences,
                                       const std::vector<scoring::ScoreSeries>& series, const RunConfig& cfg) {
  require(series.size() == sequences.size(), ErrorKind::InvalidInput, "one score series per sequence expected");
  std::vector<Increment> out;
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    const auto& traj = sequences[k].trajectory;
    Increment inc;
    inc.terrain = sequences[k].terrain;
    const int n = cfg.images_per_increment;
    for (int i = 0; i < n; ++i) {
      const std::size_t idx = (traj.size() - 1) * static_cast<std::size_t>(i) / static_cast<std::size_t>(std::max(1, n - 1));
      auto image = synth::render_patch_features(world, traj[idx], mix_seed(cfg.seed, 400 + k));
      const auto footprint = supervision::project_footprints(traj, series[k], image.window);
      supervision::SupervisionMask mask;
      if (footprint.pixels.empty()) {
        mask.values = Matrix::Zero(image.rows(), image.cols());
        mask.valid = supervision::BoolGrid::Constant(image.rows(), image.cols(), false);
      } else {
        const auto segments = supervision::segment_terrain(image, footprint, cfg.segment_threshold);
        mask = supervision::build_supervision(footprint, segments);
      }
      inc.images.push_back(std::move(image));
      inc.masks.push_back(std::move(mask));
    }
    out.push_back(std::move(inc));
  }
  return out;
}

TestSet make_test_set(const synth::WorldMap& world, const RunConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 500));
  std::uniform_real_distribution<double> ux(0.0, world.cols() * world.resolution);
  std::uniform_real_distribution<double> uy(0.0, world.rows() * world.resolution);
  std::uniform_real_distribution<double> yaw(-3.141592653589793, 3.141592653589793);
  TestSet t;
  for (int i = 0; i < cfg.test_images; ++i) {
    const synth::Pose pose{1e6 + i, ux(rng), uy(rng), yaw(rng)};
    auto image = synth::render_patch_features(world, pose, mix_seed(cfg.seed, 501));
    t.labels.push_back(image.terrain_gt);
    t.images.push_back(std::move(image));
  }
  return t;
}

eval::TerrainStats supervision_stats(const std::vector<Increment>& increments) {
  std::vector<supervision::SupervisionMask> masks;
  std::vector<Eigen::MatrixXi> labels;
  for (const auto& inc : increments) {
    for (std::size_t i = 0; i < inc.images.size(); ++i) {
      masks.push_back(inc.masks[i]);
      labels.push_back(inc.images[i].terrain_gt);
    }
  }
  return eval::terrain_stats(masks, labels);
}

std::vector<Matrix> predict_set(const std::vector<synth::PatchFeatureImage>& images, const visual::DecoderParams& params,
                                const visual::ReferenceFeatures& reference) {
  std::vector<Matrix> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(visual::predict_image(im, params, reference).values);
  return out;
}

VisualStage run_visual(const std::vector<Increment>& increments, const TestSet& test, const eval::TerrainStats& stats,
                       const RunConfig& cfg, const Log& log) {
  require(!increments.empty(), ErrorKind::InvalidInput, "no increments");
  const int dim = static_cast<int>(increments.front().images.front().features.cols());
  visual::DecoderConfig dc;
  dc.in_dim = dim;
  dc.hidden = cfg.decoder_hidden;
  dc.direct_regression = cfg.direct_regression;
  VisualStage st;
  st.params = visual::init_decoder(dc, mix_seed(cfg.seed, 600));
  st.reference = visual::sample_reference(increments.front().images, increments.front().terrain, mix_seed(cfg.seed, 601),
                                          cfg.reference_samples);
  visual::OptimizerConfig opt;
  opt.lr = cfg.visual_lr;
  visual::OptimizerState state;
  auto replay_buffer = replay::make_replay_buffer(cfg.buffer_size);
  auto temp = replay::make_temp_buffer();
  std::mt19937_64 rng(mix_seed(cfg.seed, 602));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int step = 0;
  std::vector<std::vector<Matrix>> curve_predictions;

  for (std::size_t k = 0; k < increments.size(); ++k) {
    const auto& inc = increments[k];
    std::vector<visual::TrainSample> samples;
    for (std::size_t i = 0; i < inc.images.size(); ++i) {
      if (inc.masks[i].valid_count() > 0) samples.push_back(visual::make_sample(inc.images[i], inc.masks[i]));
    }
    const int rows = inc.images.front().rows(), cols = inc.images.front().cols();
    double align_sum = 0.0;
    int align_n = 0;
    for (int epoch = 0; epoch < cfg.visual_epochs; ++epoch) {
      std::vector<std::size_t> order(samples.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.visual_batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.visual_batch));
        const Vector reference = st.reference.evaluate(st.params).mean_feature;
        std::vector<visual::TrainSample> batch;
        for (std::size_t b = start; b < end; ++b) {
          visual::TrainSample s = samples[order[b]];
          if (unit(rng) < 0.5) s = visual::flip_horizontal(s, rows, cols);
          if (cfg.replay) replay::collect(temp, s, cfg.features_per_image, step, mix_seed(cfg.seed, 700 + step * 31 + b));
          if (cfg.replay && cfg.fcm && !replay_buffer.empty()) {
            s = replay::feature_cutmix(s, replay_buffer, st.params, reference, cfg.fcm_p,
                                       mix_seed(cfg.seed, 800 + step * 31 + b));
          }
          batch.push_back(std::move(s));
        }
        std::optional<visual::ReplayTerm> term;
        Matrix rf, rt;
        if (cfg.replay && !replay_buffer.empty() && step % cfg.t_r == 0) {
          rf = replay_buffer.features();
          rt = replay_buffer.targets();
          term = visual::ReplayTerm{&rf, &rt, cfg.replay_weight};
        }
        const auto r = visual::visual_train_step(batch, st.params, st.reference.patches, term, state, opt);
        require(std::isfinite(r.loss_align) && std::isfinite(r.loss_replay) && st.params.finite(),
                ErrorKind::InternalConsistency,
                "visual training diverged at step " + std::to_string(step) + "; lower visual.lr");
        if (!r.align_skipped) {
          align_sum += r.loss_align;
          ++align_n;
        }
        ++step;
        if (cfg.replay && step % cfg.t_b == 0 && !temp.empty()) replay::buffer_update(replay_buffer, temp, st.params);
      }
    }
    // flush what this increment collected so it is replayed in the next one
    if (cfg.replay && !temp.empty()) replay::buffer_update(replay_buffer, temp, st.params);
    require(st.params.finite(), ErrorKind::InternalConsistency, "visual decoder diverged");
    st.checkpoints.push_back(st.params);
    const auto ref = st.reference.evaluate(st.params);
    curve_predictions.push_back(predict_set(test.images, st.params, ref));
    say(log, "visual increment " + std::to_string(k) + " (terrain " + std::to_string(inc.terrain) + "): mean align " +
                 std::to_string(align_n ? align_sum / align_n : 0.0) + ", test mIoU " +
                 std::to_string(eval::segm_2d(curve_predictions.back(), test.labels, stats).miou));
  }
  st.forgetting = eval::forgetting_curve(curve_predictions, test.labels, stats);
  st.final_segmentation = eval::segm_2d(curve_predictions.back(), test.labels, stats);
  st.steps = step;
  st.buffer_size = replay_buffer.size();
  st.buffer = std::move(replay_buffer);
  return st;
}

double score_correlation(const eval::TerrainScores& scores, const eval::EffortTable& table) {
  return eval::score_quality(scores, nullptr, table).correlation;
}

std::vector<synth::Pose> survey_poses(const synth::WorldMap& world, double spacing) {
  require(spacing > 0.0, ErrorKind::InvalidInput, "survey spacing must be positive");
  const double width = world.cols() * world.resolution, height = world.rows() * world.resolution;
  auto axis = [spacing](double extent) {
    std::vector<double> v;
    for (double a = std::min(spacing, extent) / 2.0; a < extent; a += spacing) v.push_back(a);
    return v;
  };
  std::vector<synth::Pose> out;
  for (double y : axis(height)) {
    for (double x : axis(width)) out.push_back({static_cast<double>(out.size()), x, y, 0.0});
  }
  return out;
}

MapStage run_mapping(const synth::WorldMap& world, const VisualModel* model, const RunConfig& cfg, std::uint64_t tag) {
  const std::uint64_t seed = mix_seed(cfg.seed, tag);
  MapStage st;
  st.voxels = mapping::make_voxel_map(world.resolution, cfg.map_lambda);
  const auto poses = survey_poses(world, cfg.survey_spacing);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto& pose = poses[i];
    const auto cloud = synth::sample_lidar(world, pose, cfg.lidar_points, mix_seed(seed, 2 * i));
    mapping::ScoredPoints sp;
    if (model) {
      const auto image = synth::render_patch_features(world, pose, mix_seed(seed, 2 * i + 1));
      const auto prediction = visual::predict_image(image, model->params, model->reference);
      sp = mapping::project_points(cloud, prediction,
                                   mapping::make_camera(pose, image.window, model->params.config.upsample));
    } else {
      sp.points = cloud.points;
      sp.scores.resize(cloud.points.rows());
      for (Eigen::Index k = 0; k < sp.scores.size(); ++k)
        sp.scores(k) = 1.0 - world.terrain(cloud.terrain[static_cast<std::size_t>(k)]).effort_u;
    }
    mapping::integrate(st.voxels, sp, pose);
  }
  st.plane = mapping::fit_ground_plane(mapping::voxel_points(st.voxels), 200, 0.05, mix_seed(seed, 0xfeed));
  const mapping::GridGeometry grid{0.0, 0.0, world.resolution, world.rows(), world.cols()};
  st.map = mapping::reduce_to_elevation(st.voxels, st.plane, cfg.h_max, grid);
  return st;
}

synth::WorldMap make_corridor_world(const RunConfig& cfg) {
  const auto wc = world_config(cfg);
  int lo = cfg.terrain_order.front(), hi = lo;
  for (int id : cfg.terrain_order) {
    const double u = wc.terrains[static_cast<std::size_t>(id)].effort_u;
    if (u < wc.terrains[static_cast<std::size_t>(lo)].effort_u) lo = id;
    if (u > wc.terrains[static_cast<std::size_t>(hi)].effort_u) hi = id;
  }
  require(lo != hi, ErrorKind::InvalidConfig, "corridor world needs two terrains with different effort");
  return synth::gen_corridor_world(wc, cfg.corridor_rows, cfg.corridor_cols, lo, hi);
}

planner::PlanQuery corridor_query(const synth::WorldMap& corridor, double w_trav) {
  return {{0, 1}, {0, corridor.cols() - 2}, w_trav};
}

PlanStage run_planning(const synth::WorldMap& corridor, const VisualModel* model, const RunConfig& cfg) {
  PlanStage st;
  st.mapping = run_mapping(corridor, model, cfg, 950);
  st.query = corridor_query(corridor, cfg.w_trav);
  const auto table = eval::effort_table(corridor);
  st.learned = planner::plan(st.mapping.map, st.query);
  st.baseline = planner::plan(st.mapping.map, {st.query.start, st.query.goal, 0.0});
  if (st.learned) st.learned_effort = eval::path_effort(*st.learned, st.mapping.map.geometry, corridor, table);
  if (st.baseline) st.baseline_effort = eval::path_effort(*st.baseline, st.mapping.map.geometry, corridor, table);
  return st;
}

namespace {

std::string join_ids(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) out += (out.empty() ? "" : ",") + std::to_string(id);
  return out;
}

}  // namespace

Evaluation evaluate(const synth::WorldMap& world, const SensorScores& scores, const std::vector<VisualModel>& checkpoints,
                    const TestSet& test, const eval::TerrainStats& stats, const RunConfig& cfg, const Log& log) {
  require(!checkpoints.empty(), ErrorKind::InvalidInput, "evaluation needs at least one visual checkpoint");
  Evaluation ev;
  auto& r = ev.report;
  std::vector<std::vector<Matrix>> predictions;
  for (const auto& m : checkpoints) predictions.push_back(predict_set(test.images, m.params, m.reference));
  r.forgetting = eval::forgetting_curve(predictions, test.labels, stats);
  const auto seg2 = eval::segm_2d(predictions.back(), test.labels, stats);
  r.miou_2d = seg2.miou;
  if (!seg2.missing_stats.empty()) r.notes["missing_stats_2d"] = join_ids(seg2.missing_stats);

  ev.world_map = run_mapping(world, &checkpoints.back(), cfg, 900);
  const auto seg25 = eval::segm_25d(ev.world_map.map, eval::grid_labels(ev.world_map.map.geometry, world), stats);
  r.miou_25d = seg25.miou;
  if (!seg25.missing_stats.empty()) r.notes["missing_stats_25d"] = join_ids(seg25.missing_stats);
  say(log, "segmentation: 2D mIoU " + std::to_string(r.miou_2d) + ", 2.5D mIoU " + std::to_string(r.miou_25d));

  ev.plan = run_planning(make_corridor_world(cfg), &checkpoints.back(), cfg);
  if (!ev.plan.learned) r.notes["learned_path"] = "no path";
  if (!ev.plan.baseline) r.notes["baseline_path"] = "no path";
  r.effort = ev.plan.learned_effort.effort;
  r.epl = ev.plan.learned_effort.epl;
  r.effort_baseline = ev.plan.baseline_effort.effort;
  r.epl_baseline = ev.plan.baseline_effort.epl;
  say(log, "corridor: effort " + std::to_string(r.effort) + " (baseline " + std::to_string(r.effort_baseline) +
               "), EPL " + std::to_string(r.epl) + " (baseline " + std::to_string(r.epl_baseline) + ")");

  r.score = eval::score_quality(scores.final, &scores.base, eval::effort_table(world), cfg.histogram_bins);
  if (!r.score.overlap_defined) r.notes["pairwise_overlap"] = "undefined";
  if (!r.score.correlation_defined) r.notes["correlation"] = "undefined";
  r.hyper = eval::hyper_objective(r.score);
  for (const auto& [id, v] : scores.final) {
    if (!v.empty()) r.terrain_mean_score[id] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
  return ev;
}

std::vector<VisualModel> visual_models(const VisualStage& stage) {
  std::vector<VisualModel> out;
  for (const auto& p : stage.checkpoints) out.push_back({p, stage.reference.evaluate(p)});
  return out;
}

FullRun run_all(const RunConfig& cfg, const Log& log) {
  FullRun run;
  const auto world = make_world(cfg);
  const auto sequences = make_sequences(world, cfg);
  run.sensor = run_sensor(sequences, cfg, log);
  run.increments = make_increments(world, sequences, run.sensor.series, cfg);
  run.stats = supervision_stats(run.increments);
  const auto test = make_test_set(world, cfg);
  run.visual = run_visual(run.increments, test, run.stats, cfg, log);
  run.evaluation = evaluate(world, {run.sensor.base_scores, run.sensor.final_scores}, visual_models(run.visual), test,
                            run.stats, cfg, log);
  return run;
}

std::vector<std::pair<std::string, RunConfig>> ablation_cells(const RunConfig& base,
                                                              const std::vector<std::string>& toggles) {
  using Variant = std::pair<std::string, std::vector<std::pair<std::string, std::string>>>;
  auto variants = [&base](const std::string& toggle) -> std::vector<Variant> {
    if (toggle == "loss")
      return {{"full", {}},
              {"no_kl", {{"sensor.use_kl", "false"}}},
              {"no_rec", {{"sensor.use_rec", "false"}}},
              {"no_vic", {{"sensor.use_vic", "false"}}},
              {"no_inc", {{"sensor.use_inc", "false"}}}};
    if (toggle == "head")
      return {{"align", {{"visual.direct_regression", "false"}}}, {"regression", {{"visual.direct_regression", "true"}}}};
    if (toggle == "replay") return {{"on", {{"replay.enabled", "true"}}}, {"off", {{"replay.enabled", "false"}}}};
    if (toggle == "fcm") return {{"on", {{"replay.fcm", "true"}}}, {"off", {{"replay.fcm", "false"}}}};
    if (toggle == "buffer") return {{"200", {{"replay.buffer_size", "200"}}}, {"20", {{"replay.buffer_size", "20"}}}};
    if (toggle == "interval") return {{"1", {{"replay.t_r", "1"}}}, {"100", {{"replay.t_r", "100"}}}};
    if (toggle == "sensors") {
      std::vector<Variant> out{{"all", {}}};
      for (const auto& g : base.sensor_groups) {
        std::string kept;
        for (const auto& h : base.sensor_groups) {
          if (h != g) kept += (kept.empty() ? "" : ",") + h;
        }
        out.push_back({"no_" + g, {{"sensor.groups", kept}}});
      }
      return out;
    }
    throw Error(ErrorKind::InvalidConfig,
                "unknown ablation toggle '" + toggle + "' (loss, head, replay, fcm, buffer, interval, sensors)");
  };
  std::vector<std::pair<std::string, RunConfig>> cells{{"", base}};
  for (const auto& toggle : toggles) {
    std::vector<std::pair<std::string, RunConfig>> next;
    for (const auto& [name, cfg] : cells) {
      for (const auto& [label, sets] : variants(toggle)) {
        RunConfig c = cfg;
        for (const auto& [k, v] : sets) c.set(k, v);
        next.emplace_back(name + (name.empty() ? "" : ".") + toggle + "-" + label, c);
      }
    }
    cells = std::move(next);
  }
  for (auto& [name, cfg] : cells) {
    if (name.empty()) name = "base";
    cfg.validate();
  }
  return cells;
}

}  // namespace cotrate::pipeline
