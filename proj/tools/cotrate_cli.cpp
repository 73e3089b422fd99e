// cotrate: run the pipeline stage by stage into a run directory.

#include <CLI11.hpp>

#include <iostream>

#include "cotrate/io.hpp"
#include "cotrate/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cotrate;

namespace {

constexpr int kExitInvalidConfig = 2;
constexpr int kExitMissingArtifact = 3;

struct Options {
  fs::path run = "run";
  std::string config_file;
  std::string profile;
  std::vector<std::string> overrides;
  bool quiet = false;
};

pipeline::Log logger(const Options& opt) {
  if (opt.quiet) return {};
  return [](const std::string& s) { std::cerr << s << "\n"; };
}

/// Throws missing-artifact naming the subcommand that writes `path`.
fs::path need(const fs::path& path, const std::string& producer) {
  require(fs::exists(path), ErrorKind::MissingArtifact,
          path.string() + " not found; run `cotrate " + producer + "` first");
  return path;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidConfig, "override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
}

/// Profile, then config file, then --set overrides.
RunConfig fresh_config(const Options& opt) {
  require(opt.config_file.empty() || opt.profile.empty(), ErrorKind::InvalidConfig,
          "use either --config or --profile, not both");
  RunConfig cfg = opt.config_file.empty() ? profile_config(opt.profile.empty() ? "desk" : opt.profile)
                                          : load_config(opt.config_file);
  apply_overrides(cfg, opt.overrides);
  return cfg;
}

/// The run's snapshot; later stages may not change it.
RunConfig run_config(const Options& opt) {
  require(opt.config_file.empty() && opt.profile.empty() && opt.overrides.empty(), ErrorKind::InvalidConfig,
          "config is fixed by gen-world; start a new run directory to change it");
  return load_config(need(opt.run / "config.txt", "gen-world").string());
}

std::vector<scoring::ScoreSeries> load_series(const Options& opt, const RunConfig& cfg) {
  std::vector<scoring::ScoreSeries> series;
  for (std::size_t k = 0; k < cfg.terrain_order.size(); ++k) {
    const auto path = need(opt.run / "sensor" / ("scores_" + std::to_string(k) + ".csv"), "train-sensor");
    series.push_back(io::parse_score_series(io::read_text(path)));
  }
  return series;
}

std::vector<pipeline::VisualModel> load_visual(const Options& opt, const RunConfig& cfg, bool all) {
  const auto reference = io::load_reference(need(opt.run / "visual" / "reference.ckpt", "train-visual"));
  const std::size_t n = cfg.terrain_order.size();
  std::vector<pipeline::VisualModel> models;
  for (std::size_t k = all ? 0 : n - 1; k < n; ++k) {
    const auto params =
        io::load_decoder(need(opt.run / "visual" / ("decoder_inc" + std::to_string(k) + ".ckpt"), "train-visual"));
    models.push_back({params, reference.evaluate(params)});
  }
  return models;
}

int cmd_gen_world(const Options& opt) {
  const RunConfig cfg = fresh_config(opt);
  fs::create_directories(opt.run);
  io::write_text(opt.run / "config.txt", cfg.serialize());
  const auto world = pipeline::make_world(cfg);
  io::save_world(opt.run / "world" / "world", world);
  io::save_world(opt.run / "world" / "corridor", pipeline::make_corridor_world(cfg));
  const auto sequences = pipeline::make_sequences(world, cfg);
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    io::write_text(opt.run / "world" / ("trajectory_" + std::to_string(k) + ".jsonl"),
                   io::trajectory_jsonl(sequences[k].trajectory));
  }
  std::cout << "world " << world.rows() << "x" << world.cols() << ", " << sequences.size() << " sequences -> "
            << (opt.run / "world").string() << "\n";
  return 0;
}

int cmd_train_sensor(const Options& opt) {
  const RunConfig cfg = run_config(opt);
  need(opt.run / "world" / "world.csv", "gen-world");
  const auto world = pipeline::make_world(cfg);
  const auto sequences = pipeline::make_sequences(world, cfg);
  const auto st = pipeline::run_sensor(sequences, cfg, logger(opt));
  const fs::path dir = opt.run / "sensor";
  for (std::size_t k = 0; k < st.checkpoints.size(); ++k)
    io::save_vae(dir / ("vae_" + std::to_string(k) + ".ckpt"), st.checkpoints[k]);
  io::save_vae(dir / "vae_final.ckpt", st.params);
  for (std::size_t k = 0; k < st.series.size(); ++k)
    io::write_text(dir / ("scores_" + std::to_string(k) + ".csv"), io::score_series_csv(st.series[k]));
  io::write_text(dir / "terrain_scores_base.csv", io::terrain_scores_csv(st.base_scores));
  io::write_text(dir / "terrain_scores_final.csv", io::terrain_scores_csv(st.final_scores));
  std::cout << "score/energy correlation " << pipeline::score_correlation(st.final_scores, eval::effort_table(world))
            << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_train_visual(const Options& opt) {
  const RunConfig cfg = run_config(opt);
  const auto series = load_series(opt, cfg);
  const auto world = pipeline::make_world(cfg);
  const auto sequences = pipeline::make_sequences(world, cfg);
  const auto increments = pipeline::make_increments(world, sequences, series, cfg);
  const auto stats = pipeline::supervision_stats(increments);
  const auto test = pipeline::make_test_set(world, cfg);
  const auto st = pipeline::run_visual(increments, test, stats, cfg, logger(opt));
  const fs::path dir = opt.run / "visual";
  for (std::size_t k = 0; k < st.checkpoints.size(); ++k)
    io::save_decoder(dir / ("decoder_inc" + std::to_string(k) + ".ckpt"), st.checkpoints[k]);
  io::save_reference(dir / "reference.ckpt", st.reference);
  io::save_buffer(dir / "buffer.ckpt", st.buffer);
  for (std::size_t k = 0; k < increments.size(); ++k) {
    for (std::size_t i = 0; i < increments[k].masks.size(); ++i) {
      io::save_supervision(dir / "supervision" / ("inc" + std::to_string(k) + "_img" + std::to_string(i)),
                           increments[k].masks[i]);
    }
  }
  io::write_text(dir / "forgetting.csv", io::forgetting_csv(st.forgetting));
  std::cout << "final 2D mIoU " << st.final_segmentation.miou << " after " << st.steps << " steps -> " << dir.string()
            << "\n";
  return 0;
}

int cmd_map(const Options& opt) {
  const RunConfig cfg = run_config(opt);
  const auto models = load_visual(opt, cfg, false);
  const auto world = pipeline::make_world(cfg);
  const auto world_map = pipeline::run_mapping(world, &models.back(), cfg, 900);
  const auto corridor_map = pipeline::run_mapping(pipeline::make_corridor_world(cfg), &models.back(), cfg, 950);
  io::save_elevation(opt.run / "map" / "world", world_map.map);
  io::save_elevation(opt.run / "map" / "corridor", corridor_map.map);
  std::cout << "elevation maps -> " << (opt.run / "map").string() << "\n";
  return 0;
}

planner::Cell parse_cell(const std::string& s) {
  const auto comma = s.find(',');
  require(comma != std::string::npos, ErrorKind::InvalidConfig, "cell '" + s + "' is not row,col");
  try {
    return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidConfig, "cell '" + s + "' is not row,col");
  }
}

struct PlanOptions {
  std::string map = "corridor";
  std::string start, goal, request, name;
  std::optional<double> w_trav;
};

int cmd_plan(const Options& opt, const PlanOptions& po) {
  const RunConfig cfg = run_config(opt);
  require(po.map == "corridor" || po.map == "world", ErrorKind::InvalidConfig, "--map must be corridor or world");
  need(opt.run / "map" / (po.map + ".json"), "map");
  const auto map = io::load_elevation(opt.run / "map" / po.map);
  planner::PlanQuery q;
  q.w_trav = cfg.w_trav;
  if (po.map == "corridor") {
    q = pipeline::corridor_query(pipeline::make_corridor_world(cfg), cfg.w_trav);
  } else {
    require(!po.request.empty() || (!po.start.empty() && !po.goal.empty()), ErrorKind::InvalidConfig,
            "planning on the world map needs --start and --goal or --request");
  }
  if (!po.request.empty()) {
    try {
      require(fs::exists(po.request), ErrorKind::InvalidConfig, "request file " + po.request + " not found");
      const auto j = io::Json::parse(io::read_text(po.request));
      q.start = {j.at("start").at(0).get<int>(), j.at("start").at(1).get<int>()};
      q.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
      if (j.contains("w_trav")) q.w_trav = j.at("w_trav").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::InvalidConfig, std::string("bad request file: ") + e.what());
    }
  }
  if (!po.start.empty()) q.start = parse_cell(po.start);
  if (!po.goal.empty()) q.goal = parse_cell(po.goal);
  if (po.w_trav) q.w_trav = *po.w_trav;
  const std::string name = po.name.empty() ? po.map + "_w" + io::format_double(q.w_trav) : po.name;
  const auto path = planner::plan(map, q);
  const fs::path out = opt.run / "paths" / (name + ".csv");
  if (!path) {
    io::write_text(out, "row,col,height,cost\n");
    std::cout << "no path from " << q.start.row << "," << q.start.col << " to " << q.goal.row << "," << q.goal.col
              << "\n";
    return 0;
  }
  io::write_text(out, io::path_csv(map, *path, q.w_trav));
  std::cout << "cost " << path->total_cost << ", length " << path->total_length << " m, " << path->cells.size()
            << " cells -> " << out.string() << "\n";
  return 0;
}

void write_report(const fs::path& dir, const eval::MetricReport& report) {
  io::write_text(dir / "report.json", io::report_text(report));
  io::write_text(dir / "metrics" / "forgetting.csv", io::forgetting_csv(report.forgetting));
  std::string ts = "terrain,mean_score\n";
  for (const auto& [id, v] : report.terrain_mean_score) ts += std::to_string(id) + "," + io::format_double(v) + "\n";
  io::write_text(dir / "metrics" / "terrain_mean_score.csv", ts);
}

int cmd_eval(const Options& opt) {
  const RunConfig cfg = run_config(opt);
  const auto models = load_visual(opt, cfg, true);
  const auto series = load_series(opt, cfg);
  pipeline::SensorScores scores;
  scores.base = io::parse_terrain_scores(io::read_text(need(opt.run / "sensor" / "terrain_scores_base.csv", "train-sensor")));
  scores.final = io::parse_terrain_scores(io::read_text(need(opt.run / "sensor" / "terrain_scores_final.csv", "train-sensor")));
  const auto world = pipeline::make_world(cfg);
  const auto sequences = pipeline::make_sequences(world, cfg);
  const auto stats = pipeline::supervision_stats(pipeline::make_increments(world, sequences, series, cfg));
  const auto test = pipeline::make_test_set(world, cfg);
  const auto ev = pipeline::evaluate(world, scores, models, test, stats, cfg, logger(opt));
  io::save_elevation(opt.run / "map" / "world", ev.world_map.map);
  io::save_elevation(opt.run / "map" / "corridor", ev.plan.mapping.map);
  if (ev.plan.learned) io::write_text(opt.run / "paths" / "corridor_learned.csv", io::path_csv(ev.plan.mapping.map, *ev.plan.learned, cfg.w_trav));
  if (ev.plan.baseline) io::write_text(opt.run / "paths" / "corridor_baseline.csv", io::path_csv(ev.plan.mapping.map, *ev.plan.baseline, 0.0));
  write_report(opt.run, ev.report);
  std::cout << io::report_text(ev.report);
  return 0;
}

int cmd_ablate(const Options& opt, const std::vector<std::string>& toggles) {
  const RunConfig base = fresh_config(opt);
  const auto cells = pipeline::ablation_cells(base, toggles);
  const fs::path dir = opt.run / "ablate";
  std::string summary = "cell,miou_2d,miou_25d,final_forgetting,effort,epl,correlation,hyper_objective\n";
  for (const auto& [name, cfg] : cells) {
    std::cerr << "== " << name << "\n";
    const auto run = pipeline::run_all(cfg, logger(opt));
    const auto& r = run.evaluation.report;
    io::write_text(dir / name / "config.txt", cfg.serialize());
    write_report(dir / name, r);
    summary += name + "," + io::format_double(r.miou_2d) + "," + io::format_double(r.miou_25d) + "," +
               io::format_double(r.forgetting.empty() ? 0.0 : r.forgetting.back()) + "," + io::format_double(r.effort) +
               "," + io::format_double(r.epl) + "," + io::format_double(r.score.correlation) + "," +
               io::format_double(r.hyper) + "\n";
  }
  io::write_text(dir / "summary.csv", summary);
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual traversability learning pipeline"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("-r,--run", opt.run, "run directory")->capture_default_str();
  app.add_option("-c,--config", opt.config_file, "key = value config file");
  app.add_option("-p,--profile", opt.profile, "desk or fast");
  app.add_option("-s,--set", opt.overrides, "override key=value (repeatable)");
  app.add_flag("-q,--quiet", opt.quiet, "suppress progress output");

  PlanOptions po;
  std::vector<std::string> toggles;
  auto* gen = app.add_subcommand("gen-world", "write the config snapshot, world grids and trajectories");
  auto* sensor = app.add_subcommand("train-sensor", "train the sensor VAE and score every sequence");
  auto* vis = app.add_subcommand("train-visual", "continual visual training with replay");
  auto* map = app.add_subcommand("map", "build elevation maps from the trained visual head");
  auto* plan = app.add_subcommand("plan", "plan on an elevation map");
  plan->add_option("--map", po.map, "corridor or world")->capture_default_str();
  plan->add_option("--start", po.start, "start cell row,col");
  plan->add_option("--goal", po.goal, "goal cell row,col");
  plan->add_option("--request", po.request, "JSON request {start:[r,c], goal:[r,c], w_trav}");
  plan->add_option("--w-trav", po.w_trav, "traversability weight");
  plan->add_option("--name", po.name, "output name under paths/");
  auto* ev = app.add_subcommand("eval", "metric report over the trained run");
  auto* ablate = app.add_subcommand("ablate", "full runs over a cross product of toggles");
  ablate->add_option("toggles", toggles, "loss, head, replay, fcm, buffer, interval, sensors")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitInvalidConfig;
  }

  try {
    if (*gen) return cmd_gen_world(opt);
    if (*sensor) return cmd_train_sensor(opt);
    if (*vis) return cmd_train_visual(opt);
    if (*map) return cmd_map(opt);
    if (*plan) return cmd_plan(opt, po);
    if (*ev) return cmd_eval(opt);
    if (*ablate) return cmd_ablate(opt, toggles);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.kind() == ErrorKind::InvalidConfig) return kExitInvalidConfig;
    if (e.kind() == ErrorKind::MissingArtifact) return kExitMissingArtifact;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
