#include <doctest.h>

#include <cmath>

#include "cotrate/io.hpp"
#include "cotrate/pipeline.hpp"

using namespace cotrate;

namespace {

// a few seconds end to end
RunConfig tiny_config() {
  RunConfig c = profile_config("fast");
  c.world_rows = 16;
  c.world_cols = 16;
  c.n_terrains = 3;
  c.terrain_order = {0, 1, 2};
  c.base_terrains = 2;
  c.sequence_seconds = 12.0;
  c.sensor_epochs = 1;
  c.images_per_increment = 4;
  c.visual_epochs = 1;
  c.test_images = 3;
  c.lidar_points = 300;
  c.survey_spacing = 2.0;
  c.corridor_cols = 16;
  c.t_b = 2;
  c.validate();
  return c;
}

}  // namespace

TEST_CASE("survey poses cover every cell within the image footprint") {
  const RunConfig cfg = tiny_config();
  const auto world = pipeline::make_world(cfg);
  const auto poses = pipeline::survey_poses(world, 1.5);
  REQUIRE(!poses.empty());
  for (int r = 0; r < world.rows(); ++r) {
    for (int c = 0; c < world.cols(); ++c) {
      const auto p = world.cell_center(r, c);
      double best = 1e9;
      for (const auto& q : poses) best = std::min(best, std::max(std::abs(q.x - p.x()), std::abs(q.y - p.y())));
      CHECK(best <= 0.75 + 1e-12);
    }
  }
  for (const auto& q : poses) CHECK(world.inside(q.x, q.y));
}

TEST_CASE("corridor world pairs the lowest- and highest-effort terrains") {
  RunConfig cfg = tiny_config();
  const auto corridor = pipeline::make_corridor_world(cfg);
  CHECK(corridor.rows() == cfg.corridor_rows);
  CHECK(corridor.cols() == cfg.corridor_cols);
  const auto q = pipeline::corridor_query(corridor, 5.0);
  CHECK(corridor.cells(q.start.row, q.start.col) == corridor.cells(q.goal.row, q.goal.col));
  const int corridor_id = corridor.cells(q.start.row, q.start.col);
  const int block_id = corridor.cells(0, corridor.cols() / 2);
  CHECK(corridor.terrain(corridor_id).effort_u < corridor.terrain(block_id).effort_u);
  for (int id : cfg.terrain_order) {
    const double u = pipeline::world_config(cfg).terrains[static_cast<std::size_t>(id)].effort_u;
    CHECK(u >= corridor.terrain(corridor_id).effort_u);
    CHECK(u <= corridor.terrain(block_id).effort_u);
  }
}

TEST_CASE("oracle mapping and planning on the corridor take the detour") {
  RunConfig cfg = tiny_config();
  cfg.lidar_points = 2000;
  cfg.survey_spacing = 1.5;
  const auto corridor = pipeline::make_corridor_world(cfg);
  const auto st = pipeline::run_planning(corridor, nullptr, cfg);
  REQUIRE(st.learned);
  REQUIRE(st.baseline);
  for (int r = 0; r < corridor.rows(); ++r) {
    for (int c = 0; c < corridor.cols(); ++c) {
      REQUIRE(st.mapping.map.observed(r, c));
      CHECK(std::abs(st.mapping.map.trav(r, c) - (1.0 - corridor.terrain(corridor.cells(r, c)).effort_u)) < 1e-9);
    }
  }
  CHECK(st.learned_effort.effort < st.baseline_effort.effort);
  CHECK(st.learned_effort.epl < st.baseline_effort.epl);
  CHECK(st.baseline->total_length <= st.learned->total_length);
}

TEST_CASE("ablation cells form the cross product of toggles") {
  const RunConfig base = tiny_config();
  const auto cells = pipeline::ablation_cells(base, {"replay", "interval"});
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].first == "replay-on.interval-1");
  CHECK(cells[3].first == "replay-off.interval-100");
  CHECK_FALSE(cells[3].second.replay);
  CHECK(cells[3].second.t_r == 100);
  CHECK(pipeline::ablation_cells(base, {}).front().first == "base");
  CHECK(pipeline::ablation_cells(base, {"loss"}).size() == 5);
  const auto sensors = pipeline::ablation_cells(base, {"sensors"});
  CHECK(sensors.size() == base.sensor_groups.size() + 1);
  CHECK(sensors[1].second.sensor_groups.size() == base.sensor_groups.size() - 1);
  CHECK_THROWS_AS(pipeline::ablation_cells(base, {"bogus"}), Error);
}

TEST_CASE("sequences follow the terrain order with unique frame ids") {
  const RunConfig cfg = tiny_config();
  const auto world = pipeline::make_world(cfg);
  const auto seqs = pipeline::make_sequences(world, cfg);
  REQUIRE(seqs.size() == cfg.terrain_order.size());
  std::uint64_t expected = 0;
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    CHECK(seqs[k].terrain == cfg.terrain_order[k]);
    REQUIRE(!seqs[k].frames.empty());
    for (const auto& f : seqs[k].frames) CHECK(f.id == expected++);
    if (k) CHECK(seqs[k].trajectory.front().t > seqs[k - 1].trajectory.back().t);
  }
}

TEST_CASE("full run is deterministic and its report is well formed") {
  const RunConfig cfg = tiny_config();
  const auto a = pipeline::run_all(cfg);
  const auto b = pipeline::run_all(cfg);
  const auto& r = a.evaluation.report;
  CHECK(io::report_text(r) == io::report_text(b.evaluation.report));
  CHECK(r.forgetting.size() == cfg.terrain_order.size());
  CHECK(r.miou_2d >= 0.0);
  CHECK(r.miou_2d <= 100.0);
  CHECK(r.score.correlation >= -1.0);
  CHECK(r.score.correlation <= 1.0);
  CHECK(r.epl >= 0.0);
  CHECK(r.epl <= 1.0);
  CHECK(a.visual.checkpoints.size() == cfg.terrain_order.size());

  RunConfig other = cfg;
  other.seed = 2;
  CHECK(io::report_text(pipeline::run_all(other).evaluation.report) != io::report_text(r));
}
