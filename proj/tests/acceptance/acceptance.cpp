// Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <cstdlib>
#include <string>

#include "cotrate/io.hpp"
#include "cotrate/pipeline.hpp"
#include "oracles.hpp"

using namespace cotrate;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void progress(const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); }

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// 1. gradients of every loss against central differences

sensor::VaeConfig small_vae(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(2, 5);
  sensor::VaeConfig c;
  c.window = 10 + d(rng);
  c.channels = d(rng);
  c.kernel1 = 3;
  c.kernel2 = 3;
  c.conv1_channels = d(rng) + 1;
  c.conv2_channels = d(rng);
  c.latent = d(rng);
  c.decoder_hidden = d(rng);
  return c;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  constexpr int kInstances = 20;
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::string per_loss;
  bool ok = true;
  const char* names[] = {"KL", "REC", "VIC", "INC"};
  for (int which = 0; which < 4; ++which) {
    double loss_worst = 0.0;
    for (int inst = 0; inst < kInstances; ++inst) {
      const auto c = small_vae(rng);
      std::vector<sensor::SensorFrame> frames;
      const int n = 3 + inst % 3;
      for (int i = 0; i < n; ++i) {
        sensor::SensorFrame f;
        f.id = static_cast<std::uint64_t>(i);
        f.data = random_matrix(c.window, c.channels, rng);
        f.t_end = 0.5 * i;
        frames.push_back(std::move(f));
      }
      sensor::TrainConfig train;
      train.seed = static_cast<std::uint64_t>(inst);
      train.use_kl = which == 0;
      train.use_rec = which == 1;
      train.use_vic = which == 2;
      train.use_inc = which == 3;
      sensor::AnchorSet anchors;
      for (const auto& f : frames) anchors.record(f.id, random_matrix(c.latent, 1, rng));
      auto params = sensor::init_vae(c, static_cast<std::uint64_t>(1000 * which + inst));
      const auto r = sensor::grad_check(params, frames, train, 1e-4, which == 3 ? &anchors : nullptr);
      if (r.compared == 0) ok = false;
      loss_worst = std::max(loss_worst, r.max_rel_error);
    }
    per_loss += std::string(names[which]) + " " + fmt("%.1e", loss_worst) + ", ";
    worst = std::max(worst, loss_worst);
  }
  for (int which = 0; which < 2; ++which) {
    double loss_worst = 0.0;
    for (int inst = 0; inst < kInstances; ++inst) {
      std::uniform_int_distribution<int> d(3, 8);
      visual::DecoderConfig c;
      c.in_dim = d(rng);
      c.hidden = d(rng);
      c.out_dim = d(rng);
      auto p = visual::init_decoder(c, static_cast<std::uint64_t>(500 + 40 * which + inst));
      // non-trivial running statistics for the eval-mode replay branch
      p.running_mean1 = random_matrix(1, c.hidden, rng, 0.1);
      p.running_var1 = (random_matrix(1, c.hidden, rng, 0.3).array().abs() + 0.5).matrix();
      const Matrix x = random_matrix(6 + inst % 5, c.in_dim, rng);
      const Matrix rx = random_matrix(3 + inst % 4, c.in_dim, rng);
      const Matrix rt = random_matrix(static_cast<int>(rx.rows()), c.out_dim, rng);
      const Vector ref = random_matrix(c.out_dim, 1, rng);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      Matrix target(x.rows(), 1);
      for (Eigen::Index i = 0; i < target.rows(); ++i) target(i, 0) = u(rng);
      std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)> loss;
      if (which == 0) {
        loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
          const ad::Var out = visual::decode_on_tape(tape, v, p, tape.constant(x), true);
          return ad::mse(visual::rescaled_cosine_on_tape(out, ref), tape.constant(target));
        };
      } else {
        loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
          return visual::replay_loss_on_tape(tape, v, p, rx, rt);
        };
      }
      auto ps = p.parameters();
      const auto r = ad::grad_check(ps, loss, 1e-5);
      if (r.compared == 0) ok = false;
      loss_worst = std::max(loss_worst, r.max_rel_error);
    }
    per_loss += std::string(which == 0 ? "align " : "replay ") + fmt("%.1e", loss_worst) + (which == 0 ? ", " : "");
    worst = std::max(worst, loss_worst);
  }
  const double secs = seconds_since(t0);
  return {ok && worst < 1e-4 && secs < 120.0,
          "max rel error " + per_loss + " over 20 instances each; " + fmt("%.1f s", secs)};
}

// 2. A* against Dijkstra

Outcome planner_optimality() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int agree = 0, total = 0, unreachable = 0;
  for (int m = 0; m < 50; ++m) {
    mapping::ElevationMap map;
    map.geometry = {0.0, 0.0, 0.25, 20, 20};
    map.height = Matrix(20, 20);
    map.trav = Matrix(20, 20);
    map.observed.resize(20, 20);
    for (int r = 0; r < 20; ++r) {
      for (int c = 0; c < 20; ++c) {
        map.height(r, c) = 0.3 * u(rng);
        map.trav(r, c) = u(rng);
        map.observed(r, c) = u(rng) > 0.15;
      }
    }
    std::vector<planner::Cell> nodes;
    for (int r = 0; r < 20; ++r)
      for (int c = 0; c < 20; ++c)
        if (map.observed(r, c)) nodes.push_back({r, c});
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    planner::Cell s = nodes[pick(rng)], g = nodes[pick(rng)];
    while (g == s) g = nodes[pick(rng)];
    for (double w : {0.0, 1.0, 5.0}) {
      const auto path = planner::plan(map, {s, g, w});
      const auto ref = oracle::dijkstra_cost(map, s, g, w);
      ++total;
      if (!ref) ++unreachable;
      if (path.has_value() == ref.has_value() && (!ref || path->total_cost == *ref)) ++agree;
    }
  }
  const double secs = seconds_since(t0);
  return {agree == total && secs < 30.0, std::to_string(agree) + "/" + std::to_string(total) +
                                             " queries match exactly (" + std::to_string(unreachable) +
                                             " unreachable); " + fmt("%.2f s", secs)};
}

// 3. FPS against the quadratic-scan greedy

Outcome fps_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31);
  int agree = 0;
  for (int i = 0; i < 100; ++i) {
    std::uniform_int_distribution<int> dn(1, 500), dd(1, 16);
    const int n = dn(rng);
    const int k = std::uniform_int_distribution<int>(0, std::min(n, 200))(rng);
    const Matrix pts = random_matrix(n, dd(rng), rng);
    if (replay::fps_select(pts, k) == oracle::fps_reference(pts, k)) ++agree;
  }
  const double secs = seconds_since(t0);
  return {agree == 100 && secs < 30.0, std::to_string(agree) + "/100 identical index sets; " + fmt("%.2f s", secs)};
}

// 4-8 share one world and sensor stage

struct Shared {
  RunConfig cfg;
  synth::WorldMap world;
  std::vector<pipeline::Sequence> sequences;
  pipeline::SensorStage sensor;
  double sensor_secs = 0.0;
  double correlation = 0.0;
  std::vector<pipeline::Increment> increments;
  pipeline::TestSet test;
  eval::TerrainStats stats;
  double data_secs = 0.0;
};

Outcome score_correlation(Shared& sh) {
  const auto t0 = Clock::now();
  sh.sensor = pipeline::run_sensor(sh.sequences, sh.cfg, progress);
  sh.sensor_secs = seconds_since(t0);
  sh.correlation = pipeline::score_correlation(sh.sensor.final_scores, eval::effort_table(sh.world));
  return {sh.correlation >= 0.85 && sh.sensor_secs < 600.0,
          "Pearson(mean T_S, 1-u) = " + fmt("%.4f", sh.correlation) + " (>= 0.85); " + fmt("%.0f s", sh.sensor_secs)};
}

Outcome vic_ablation(const Shared& sh) {
  RunConfig cfg = sh.cfg;
  cfg.use_vic = false;
  const auto t0 = Clock::now();
  const auto st = pipeline::run_sensor(sh.sequences, cfg, progress);
  const double corr = pipeline::score_correlation(st.final_scores, eval::effort_table(sh.world));
  const double drop = sh.correlation - corr;
  return {drop >= 0.2, "correlation " + fmt("%.4f", sh.correlation) + " with VIC, " + fmt("%.4f", corr) +
                           " without; drop " + fmt("%.4f", drop) + " (needs >= 0.2); " +
                           fmt("%.0f s", seconds_since(t0))};
}

pipeline::VisualStage visual_variant(const Shared& sh, const std::string& key, const std::string& value,
                                     double* secs) {
  RunConfig cfg = sh.cfg;
  if (!key.empty()) cfg.set(key, value);
  const auto t0 = Clock::now();
  auto st = pipeline::run_visual(sh.increments, sh.test, sh.stats, cfg, progress);
  *secs = seconds_since(t0);
  return st;
}

Outcome replay_gap(const Shared& sh, const pipeline::VisualStage& with, double with_secs,
                   const pipeline::VisualStage& without, double without_secs) {
  const double secs = sh.data_secs + with_secs + without_secs;
  const double gap = with.final_segmentation.miou - without.final_segmentation.miou;
  return {gap >= 15.0 && secs < 900.0, "final 2D mIoU " + fmt("%.2f", with.final_segmentation.miou) + " with replay, " +
                                           fmt("%.2f", without.final_segmentation.miou) + " without; gap " +
                                           fmt("%.2f", gap) + " (needs >= 15); paired run " + fmt("%.0f s", secs)};
}

Outcome replay_ordering(const pipeline::VisualStage& base, const pipeline::VisualStage& sparse,
                        const pipeline::VisualStage& small) {
  const double b = base.final_segmentation.miou, s = sparse.final_segmentation.miou,
               m = small.final_segmentation.miou;
  return {b > s && b > m, "final 2D mIoU t_r=1/buffer 200 " + fmt("%.2f", b) + ", t_r=100 " + fmt("%.2f", s) +
                              ", buffer 20 " + fmt("%.2f", m)};
}

Outcome navigation_effort(const Shared& sh, const pipeline::VisualStage& vis) {
  const auto corridor = pipeline::make_corridor_world(sh.cfg);
  const pipeline::VisualModel model{vis.params, vis.reference.evaluate(vis.params)};
  const auto st = pipeline::run_planning(corridor, &model, sh.cfg);
  if (!st.learned || !st.baseline) return {false, "no path on the corridor map"};
  const auto& l = st.learned_effort;
  const auto& b = st.baseline_effort;
  const double epl_drop = b.epl > 0.0 ? (b.epl - l.epl) / b.epl : 0.0;
  return {l.effort < b.effort && epl_drop >= 0.2,
          "U_effort " + fmt("%.3f", l.effort) + " vs Euclidean " + fmt("%.3f", b.effort) + ", EPL " +
              fmt("%.3f", l.epl) + " vs " + fmt("%.3f", b.epl) + " (" + fmt("%.1f%%", 100.0 * epl_drop) +
              " lower, needs >= 20%)"};
}

// 9. mapping round trip and RANSAC

Outcome mapping_round_trip() {
  RunConfig cfg = profile_config("desk");
  cfg.sensor_noise = 0.0;
  cfg.feature_noise = 0.0;
  cfg.elevation_amplitude = 0.0;
  const auto world = pipeline::make_world(cfg);
  const auto st = pipeline::run_mapping(world, nullptr, cfg, 77);
  double worst = 0.0;
  int observed = 0;
  for (int r = 0; r < world.rows(); ++r) {
    for (int c = 0; c < world.cols(); ++c) {
      if (!st.map.observed(r, c)) continue;
      ++observed;
      const double truth = 1.0 - world.terrain(world.cells(r, c)).effort_u;
      worst = std::max(worst, std::abs(st.map.trav(r, c) - truth));
    }
  }
  const int cells = world.rows() * world.cols();

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(1000, 3);
  for (int i = 0; i < 1000; ++i) pts.row(i) << u(rng), u(rng), i % 100 == 0 ? 5.0 : 0.0;
  const auto plane = mapping::fit_ground_plane(pts, 200, 0.05, 3);
  const double plane_err = std::max((plane.normal - Eigen::Vector3d::UnitZ()).norm(), std::abs(plane.offset));
  return {worst <= 1e-6 && observed == cells && plane_err <= 1e-6 && plane.inlier_fraction >= 0.99,
          "round trip max |trav - (1-u)| " + fmt("%.1e", worst) + " over " + std::to_string(observed) + "/" +
              std::to_string(cells) + " cells; RANSAC plane error " + fmt("%.1e", plane_err) + ", inliers " +
              fmt("%.3f", plane.inlier_fraction)};
}

// 10. determinism of the full pipeline

Outcome determinism(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const std::string a = io::report_text(pipeline::run_all(cfg, progress).evaluation.report);
  const std::string b = io::report_text(pipeline::run_all(cfg, progress).evaluation.report);
  return {a == b, std::string(a == b ? "byte-identical" : "different") + " MetricReports (" +
                      std::to_string(a.size()) + " bytes); " + fmt("%.0f s", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&selected](int id) { return selected.empty() || selected.count(id) > 0; };
  int failures = 0, ran = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    ++ran;
    if (!o.pass) ++failures;
    std::printf("criterion %2d %-26s %s  %s\n", id, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient correctness", gradients);
  report(2, "planner optimality", planner_optimality);
  report(3, "FPS fidelity", fps_fidelity);

  Shared sh;
  sh.cfg = profile_config("desk");
  sh.world = pipeline::make_world(sh.cfg);
  sh.sequences = pipeline::make_sequences(sh.world, sh.cfg);
  bool sensor_done = false;
  Outcome c4;
  auto ensure_sensor = [&] {
    if (!sensor_done) c4 = score_correlation(sh);
    sensor_done = true;
  };
  report(4, "score-energy correlation", [&] { ensure_sensor(); return c4; });
  report(5, "VIC ablation", [&] { ensure_sensor(); return vic_ablation(sh); });

  bool data_done = false;
  auto ensure_data = [&] {
    ensure_sensor();
    if (data_done) return;
    const auto t0 = Clock::now();
    sh.increments = pipeline::make_increments(sh.world, sh.sequences, sh.sensor.series, sh.cfg);
    sh.stats = pipeline::supervision_stats(sh.increments);
    sh.test = pipeline::make_test_set(sh.world, sh.cfg);
    sh.data_secs = seconds_since(t0);
    data_done = true;
  };
  double s_with = 0, s_without = 0, s_sparse = 0, s_small = 0;
  std::optional<pipeline::VisualStage> with;
  auto ensure_with = [&] {
    ensure_data();
    if (!with) with = visual_variant(sh, "", "", &s_with);
  };
  report(6, "replay vs no replay", [&] {
    ensure_with();
    const auto without = visual_variant(sh, "replay.enabled", "false", &s_without);
    return replay_gap(sh, *with, s_with, without, s_without);
  });
  report(7, "replay schedule ordering", [&] {
    ensure_with();
    const auto sparse = visual_variant(sh, "replay.t_r", "100", &s_sparse);
    const auto small = visual_variant(sh, "replay.buffer_size", "20", &s_small);
    return replay_ordering(*with, sparse, small);
  });
  report(8, "navigation effort", [&] {
    ensure_with();
    return navigation_effort(sh, *with);
  });
  report(9, "mapping round trip", mapping_round_trip);
  report(10, "determinism", [&] { return determinism(sh.cfg); });

  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
