#include <doctest.h>

#include <random>

#include "cotrate/eval.hpp"

using namespace cotrate;
using namespace cotrate::eval;

namespace {

synth::WorldMap strip_world(std::vector<double> efforts, int rows = 4, int cols_per = 4) {
  auto cfg = synth::default_world_config();
  const int cols = cols_per * static_cast<int>(efforts.size());
  synth::WorldMap w = synth::gen_world(cfg, 1, 6, std::max(rows, 8), std::max(cols, 8));
  w.cells.conservativeResize(rows, cols);
  w.elevation.conservativeResize(rows, cols);
  for (std::size_t i = 0; i < efforts.size(); ++i) {
    w.terrains[i].effort_u = efforts[i];
    w.cells.middleCols(static_cast<Eigen::Index>(i) * cols_per, cols_per).setConstant(w.terrains[i].id);
  }
  w.elevation.setZero();
  return w;
}

}  // namespace

TEST_CASE("effort of one segment") {
  auto w2 = strip_world({0.5}, 4, 12);
  std::vector<Eigen::Vector2d> seg{{0.2, 0.2}, {2.2, 0.2}};
  const auto r = polyline_effort(seg, w2, effort_table(w2));
  CHECK(r.effort == doctest::Approx(1.0));
  CHECK(r.epl == doctest::Approx(0.5));
}

TEST_CASE("zero-effort terrain gives zero effort") {
  const auto w = strip_world({0.0}, 4, 8);
  std::vector<Eigen::Vector2d> seg{{0.2, 0.2}, {1.5, 0.9}};
  const auto r = polyline_effort(seg, w, effort_table(w));
  CHECK(r.effort == 0.0);
  CHECK(r.epl == 0.0);
}

TEST_CASE("empty path is flagged") {
  const auto w = strip_world({0.3});
  const auto r = path_effort(planner::Path{}, {0, 0, 0.25, 4, 4}, w, effort_table(w));
  CHECK(r.empty);
  CHECK(r.effort == 0.0);
}

TEST_CASE("mixed path matches a per-segment hand sum") {
  auto w = strip_world({0.1, 0.7, 0.4});
  w.elevation(0, 5) = 0.3;
  planner::Path p;
  p.cells = {{0, 1}, {0, 2}, {0, 4}, {0, 5}, {1, 9}};
  const mapping::GridGeometry g{0, 0, 0.25, 4, 12};
  const auto r = path_effort(p, g, w, effort_table(w));
  const double s1 = 0.25 * 0.1, s2 = 0.5 * (0.1 + 0.7) / 2.0, s3 = std::sqrt(0.0625 + 0.09) * 0.7,
               s4 = std::sqrt(1.0 * 1.0 + 0.0625 + 0.09) * (0.7 + 0.4) / 2.0;
  CHECK(r.effort == doctest::Approx(s1 + s2 + s3 + s4));
  CHECK(r.length == doctest::Approx(0.25 + 0.5 + std::sqrt(0.0625 + 0.09) + std::sqrt(1.0625 + 0.09)));
  CHECK(r.effort <= r.length);
  CHECK(r.epl >= 0.0);
  CHECK(r.epl <= 1.0);
}

TEST_CASE("classification uses the nearest interval on overlap") {
  TerrainStats s{{0, {0.2, 0.1}}, {1, {0.45, 0.1}}};
  CHECK(classify(0.2, s) == 0);
  CHECK(classify(0.33, s) == 1);
  CHECK(classify(0.32, s) == 0);
  CHECK_FALSE(classify(0.9, s).has_value());
}

TEST_CASE("segmentation extremes") {
  TerrainStats s{{0, {0.2, 0.01}}, {1, {0.8, 0.01}}};
  Eigen::MatrixXi lab(4, 4);
  lab.leftCols(2).setZero();
  lab.rightCols(2).setOnes();
  Matrix pred(4, 4);
  pred.leftCols(2).setConstant(0.2);
  pred.rightCols(2).setConstant(0.8);
  std::vector<Matrix> p{pred};
  std::vector<Eigen::MatrixXi> l{lab};
  CHECK(segm_2d(p, l, s).miou == doctest::Approx(100.0));
  p[0].setConstant(0.5);
  CHECK(segm_2d(p, l, s).miou == doctest::Approx(0.0));
}

TEST_CASE("half-split image with one mislabeled quadrant matches pixel counting") {
  TerrainStats s{{0, {0.2, 0.01}}, {1, {0.8, 0.01}}};
  Eigen::MatrixXi lab(4, 4);
  lab.leftCols(2).setZero();
  lab.rightCols(2).setOnes();
  Matrix pred(4, 4);
  pred.leftCols(2).setConstant(0.2);
  pred.rightCols(2).setConstant(0.8);
  pred.block(0, 0, 2, 2).setConstant(0.8);  // quadrant of terrain 0 predicted as 1
  std::vector<Matrix> p{pred};
  std::vector<Eigen::MatrixXi> l{lab};
  const auto r = segm_2d(p, l, s);
  // terrain 0: inter 4, union 8; terrain 1: inter 8, union 12
  CHECK(r.iou.at(0) == doctest::Approx(50.0));
  CHECK(r.iou.at(1) == doctest::Approx(800.0 / 12.0));
  CHECK(r.miou == doctest::Approx((50.0 + 800.0 / 12.0) / 2.0));
}

TEST_CASE("mIoU is invariant to image order and flags missing stats") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> t(0, 2);
  std::vector<Matrix> p;
  std::vector<Eigen::MatrixXi> l;
  for (int i = 0; i < 5; ++i) {
    Matrix m(3, 3);
    Eigen::MatrixXi g(3, 3);
    for (int k = 0; k < 9; ++k) {
      m.data()[k] = u(rng);
      g.data()[k] = t(rng);
    }
    p.push_back(m);
    l.push_back(g);
  }
  TerrainStats s{{0, {0.2, 0.1}}, {1, {0.6, 0.15}}};
  const auto a = segm_2d(p, l, s);
  std::reverse(p.begin(), p.end());
  std::reverse(l.begin(), l.end());
  const auto b = segm_2d(p, l, s);
  CHECK(a.miou == b.miou);
  CHECK(a.missing_stats == std::vector<int>{2});
}

TEST_CASE("2.5D segmentation over observed cells") {
  mapping::ElevationMap m;
  m.geometry = {0, 0, 0.25, 2, 2};
  m.height = Matrix::Zero(2, 2);
  m.trav = Matrix::Constant(2, 2, 0.2);
  m.observed = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(2, 2, true);
  m.observed(1, 1) = false;
  m.trav(1, 1) = 0.9;
  Eigen::MatrixXi lab = Eigen::MatrixXi::Zero(2, 2);
  TerrainStats s{{0, {0.2, 0.01}}, {1, {0.9, 0.01}}};
  CHECK(segm_25d(m, lab, s).miou == doctest::Approx(100.0));
  m.trav.setConstant(0.5);
  CHECK(segm_25d(m, lab, s).miou == doctest::Approx(0.0));
}

TEST_CASE("terrain stats are per-terrain moments of supervision") {
  supervision::SupervisionMask mask;
  mask.values = Matrix(1, 4);
  mask.values << 0.1, 0.3, 0.8, 0.5;
  mask.valid = supervision::BoolGrid::Constant(1, 4, true);
  mask.valid(0, 3) = false;
  Eigen::MatrixXi lab(1, 4);
  lab << 0, 0, 1, 1;
  std::vector<supervision::SupervisionMask> ms{mask};
  std::vector<Eigen::MatrixXi> ls{lab};
  const auto s = terrain_stats(ms, ls);
  CHECK(s.at(0).mean == doctest::Approx(0.2));
  CHECK(s.at(0).std == doctest::Approx(0.1));
  CHECK(s.at(1).mean == doctest::Approx(0.8));
  CHECK(s.at(1).std == 0.0);
}

TEST_CASE("score quality examples") {
  EffortTable table{{0, 0.1}, {1, 0.5}, {2, 0.9}};
  TerrainScores sc{{0, {0.9, 0.85, 0.95}}, {1, {0.5, 0.55}}, {2, {0.1, 0.12, 0.14}}};
  const auto q = score_quality(sc, &sc, table);
  CHECK(q.pairwise_overlap == 0.0);
  CHECK(q.stability == 1.0);
  CHECK(q.avg_range == doctest::Approx((0.1 + 0.05 + 0.04) / 3.0));

  TerrainScores affine{{0, {0.2 * 0.9 + 0.1}}, {1, {0.2 * 0.5 + 0.1}}, {2, {0.2 * 0.1 + 0.1}}};
  CHECK(score_quality(affine, nullptr, table).correlation == doctest::Approx(1.0));

  TerrainScores same{{0, {0.5, 0.52}}, {1, {0.5, 0.52}}};
  CHECK(score_quality(same, nullptr, table).pairwise_overlap == doctest::Approx(1.0));

  TerrainScores single{{0, {0.5, 0.6}}};
  CHECK_FALSE(score_quality(single, nullptr, table).overlap_defined);
}

TEST_CASE("stability reflects mean and std drift") {
  EffortTable table{{0, 0.1}, {1, 0.5}};
  TerrainScores before{{0, {0.8, 0.8}}, {1, {0.4, 0.4}}};
  TerrainScores after{{0, {0.7, 0.7}}, {1, {0.4, 0.4}}};
  CHECK(score_quality(after, &before, table).stability == doctest::Approx(0.95));
}

TEST_CASE("pearson is invariant to affine rescaling") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(10), y(10), x2(10);
    for (int i = 0; i < 10; ++i) {
      x[i] = u(rng);
      y[i] = u(rng) + x[i];
      x2[i] = 2.0 * x[i] + 0.1;
    }
    CHECK(pearson(x, y) == doctest::Approx(pearson(x2, y)).epsilon(1e-12));
    CHECK(std::abs(pearson(x, y)) <= 1.0);
  }
}

TEST_CASE("hyper objective") {
  CHECK(hyper_objective({0.0, 0.0, 1.0, 1.0}) == 0.0);
  CHECK(hyper_objective({1.0, 1.0, 0.0, 0.0}) == 4.0);
  ScoreQuality q{0.3, 0.2, 0.9, 0.7};
  CHECK(hyper_objective(q) == doctest::Approx(0.3 + 0.2 + 0.1 + 0.3));
}

TEST_CASE("forgetting curve has one point per increment and is flat for a frozen model") {
  TerrainStats s{{0, {0.2, 0.05}}, {1, {0.8, 0.05}}};
  Eigen::MatrixXi lab(2, 2);
  lab << 0, 1, 0, 1;
  Matrix pred(2, 2);
  pred << 0.2, 0.8, 0.8, 0.8;
  std::vector<Eigen::MatrixXi> l{lab};
  std::vector<std::vector<Matrix>> one{{pred}};
  CHECK(forgetting_curve(one, l, s).size() == 1);
  std::vector<std::vector<Matrix>> frozen{{pred}, {pred}, {pred}};
  const auto c = forgetting_curve(frozen, l, s);
  CHECK(c[0] == c[1]);
  CHECK(c[1] == c[2]);
}
