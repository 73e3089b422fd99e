#include <doctest.h>

#include <algorithm>
#include <random>

#include "cotrate/io.hpp"

using namespace cotrate;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cotrate_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Matrix as_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

}  // namespace

TEST_CASE("checkpoint blob is little-endian float32 after a one-line header") {
  const fs::path dir = scratch_dir("blob");
  Matrix m(1, 2);
  m << 1.0, -2.0;
  io::save_checkpoint(dir / "a.ckpt", io::pack({"m"}, {&m}, {{"kind", "test"}}));
  const std::string raw = io::read_text(dir / "a.ckpt");
  const auto nl = raw.find('\n');
  REQUIRE(nl != std::string::npos);
  REQUIRE(raw.size() == nl + 1 + 8);
  const std::string blob = raw.substr(nl + 1);
  CHECK(blob == std::string("\x00\x00\x80\x3f\x00\x00\x00\xc0", 8));
  const auto back = io::load_checkpoint(dir / "a.ckpt");
  CHECK(back.header["kind"] == "test");
  CHECK(back.header["tensors"][0]["rows"] == 1);
  CHECK(back.blob == std::vector<float>{1.0f, -2.0f});
}

TEST_CASE("truncated or mislabeled checkpoints are rejected") {
  const fs::path dir = scratch_dir("bad");
  Matrix m = Matrix::Ones(2, 2);
  io::save_checkpoint(dir / "a.ckpt", io::pack({"m"}, {&m}, {{"kind", "test"}}));
  std::string raw = io::read_text(dir / "a.ckpt");
  io::write_text(dir / "b.ckpt", raw.substr(0, raw.size() - 3));
  CHECK_THROWS_AS(io::load_checkpoint(dir / "b.ckpt"), Error);
  CHECK_THROWS_AS(io::load_vae(dir / "a.ckpt"), Error);
  Matrix out;
  CHECK_THROWS_AS(io::unpack(io::load_checkpoint(dir / "a.ckpt"), {"other"}, {&out}), Error);
  try {
    io::read_text(dir / "missing.ckpt");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingArtifact);
  }
}

TEST_CASE("sensor and visual checkpoints round trip at float precision") {
  const fs::path dir = scratch_dir("models");
  sensor::VaeConfig vc;
  vc.window = 12;
  vc.channels = 3;
  vc.latent = 4;
  vc.kernel1 = 3;
  vc.kernel2 = 3;
  const auto vae = sensor::init_vae(vc, 3);
  io::save_vae(dir / "vae.ckpt", vae);
  const auto vae2 = io::load_vae(dir / "vae.ckpt");
  CHECK(vae2.config.window == 12);
  CHECK(vae2.config.latent == 4);
  for (std::size_t i = 0; i < vae.parameters().size(); ++i)
    CHECK(*vae2.parameters()[i] == as_float(*vae.parameters()[i]));

  for (bool regression : {false, true}) {
    visual::DecoderConfig dc;
    dc.in_dim = 5;
    dc.hidden = 4;
    dc.out_dim = 3;
    dc.direct_regression = regression;
    auto dec = visual::init_decoder(dc, 4);
    dec.running_mean1 = RowVector::LinSpaced(4, -1.0, 1.0);
    dec.running_var1 = RowVector::LinSpaced(4, 0.5, 2.0);
    io::save_decoder(dir / "dec.ckpt", dec);
    const auto dec2 = io::load_decoder(dir / "dec.ckpt");
    CHECK(dec2.config.direct_regression == regression);
    REQUIRE(dec2.parameters().size() == dec.parameters().size());
    for (std::size_t i = 0; i < dec.parameters().size(); ++i)
      CHECK(*dec2.parameters()[i] == as_float(*dec.parameters()[i]));
    CHECK(Matrix(dec2.running_mean1) == as_float(dec.running_mean1));
    CHECK(Matrix(dec2.running_var1) == as_float(dec.running_var1));
  }
}

TEST_CASE("buffers and reference samples round trip") {
  const fs::path dir = scratch_dir("buffer");
  std::mt19937_64 rng(5);
  auto buf = replay::make_replay_buffer(7);
  for (int i = 0; i < 3; ++i) {
    replay::BufferEntry e;
    e.feature = random_matrix(4, 1, rng);
    e.target = Vector(random_matrix(2, 1, rng));
    e.origin_step = 10 * i;
    buf.entries.push_back(e);
  }
  io::save_buffer(dir / "b.ckpt", buf);
  const auto back = io::load_buffer(dir / "b.ckpt");
  CHECK(back.kind == replay::BufferKind::Replay);
  CHECK(back.capacity == 7);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries[i].origin_step == buf.entries[i].origin_step);
    CHECK(Matrix(back.entries[i].feature) == as_float(buf.entries[i].feature));
    REQUIRE(back.entries[i].target.has_value());
    CHECK(Matrix(*back.entries[i].target) == as_float(*buf.entries[i].target));
  }
  io::save_buffer(dir / "e.ckpt", replay::make_replay_buffer(5));
  CHECK(io::load_buffer(dir / "e.ckpt").empty());

  visual::ReferenceSample ref;
  ref.patches = random_matrix(6, 4, rng);
  ref.n_images = 3;
  io::save_reference(dir / "r.ckpt", ref);
  const auto ref2 = io::load_reference(dir / "r.ckpt");
  CHECK(ref2.n_images == 3);
  CHECK(ref2.patches == as_float(ref.patches));
}

TEST_CASE("CSV grids and score series round trip exactly") {
  std::mt19937_64 rng(8);
  const Matrix g = random_matrix(3, 5, rng);
  CHECK(io::parse_grid(io::grid_csv(g)) == g);
  CHECK(io::grid_csv(Eigen::MatrixXi(Eigen::MatrixXi::Identity(2, 2))) == "1,0\n0,1\n");

  scoring::ScoreSeries s;
  s.entries = {{0.1, 0.3333333333333333, 2}, {0.2, 1.0 / 7.0, std::nullopt}};
  const std::string csv = io::score_series_csv(s);
  CHECK(csv.rfind("t,score,terrain_gt\n", 0) == 0);
  const auto back = io::parse_score_series(csv);
  REQUIRE(back.size() == 2);
  CHECK(back.entries[0].score == s.entries[0].score);
  CHECK(back.entries[1].score == s.entries[1].score);
  CHECK(back.entries[0].terrain_gt == 2);
  CHECK_FALSE(back.entries[1].terrain_gt.has_value());

  const eval::TerrainScores ts{{0, {0.5, 0.25}}, {3, {1.0 / 3.0}}};
  CHECK(io::parse_terrain_scores(io::terrain_scores_csv(ts)) == ts);
  CHECK_THROWS_AS(io::parse_grid("1,2\n3\n"), Error);
  CHECK_THROWS_AS(io::parse_score_series("a,b\n"), Error);
}

TEST_CASE("elevation maps round trip and paths carry cumulative cost") {
  const fs::path dir = scratch_dir("elev");
  mapping::ElevationMap m;
  m.geometry = {1.0, -2.0, 0.5, 3, 4};
  m.height = Matrix::Zero(3, 4);
  m.height(1, 1) = 0.25;
  m.trav = Matrix::Constant(3, 4, 0.8);
  m.observed = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(3, 4, true);
  m.observed(2, 3) = false;
  io::save_elevation(dir / "map", m);
  const auto back = io::load_elevation(dir / "map");
  CHECK(back.geometry.origin_x == 1.0);
  CHECK(back.geometry.origin_y == -2.0);
  CHECK(back.geometry.rows == 3);
  CHECK(back.height == m.height);
  CHECK(back.trav == m.trav);
  CHECK((back.observed == m.observed).all());

  const auto path = planner::plan(back, {{0, 0}, {2, 2}, 1.0});
  REQUIRE(path);
  const std::string csv = io::path_csv(back, *path, 1.0);
  const auto last_line = csv.substr(csv.rfind('\n', csv.size() - 2) + 1);
  const double last_cost = std::stod(last_line.substr(last_line.rfind(',') + 1));
  CHECK(last_cost == doctest::Approx(path->total_cost).epsilon(1e-12));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(path->cells.size()) + 1);
}

TEST_CASE("metric report JSON is stable and complete") {
  eval::MetricReport r;
  r.effort = 1.5;
  r.miou_2d = 42.0;
  r.forgetting = {10.0, 20.0};
  r.terrain_mean_score = {{0, 0.9}, {2, 0.4}};
  r.notes["x"] = "y";
  const std::string a = io::report_text(r);
  CHECK(a == io::report_text(r));
  const auto j = io::Json::parse(a);
  CHECK(j["effort"] == 1.5);
  CHECK(j["forgetting"].size() == 2);
  CHECK(j["terrain_mean_score"]["2"] == 0.4);
  CHECK(j["score"]["stability"] == 1.0);
  CHECK(j["notes"]["x"] == "y");
  CHECK(io::forgetting_csv({1.0, 2.5}) == "increment,miou\n0,1\n1,2.5\n");
}
