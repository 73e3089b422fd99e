#include <doctest.h>

#include <random>

#include "cotrate/scoring.hpp"

using namespace cotrate;
using namespace cotrate::scoring;

namespace {

sensor::LatentEmbedding latent(std::initializer_list<double> v, double t = 0.0) {
  sensor::LatentEmbedding z;
  z.mean = Vector(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) z.mean(i++) = x;
  z.logvar = Vector::Zero(z.mean.size());
  z.t = t;
  return z;
}

ScoreSeries series_of(std::vector<double> scores, double spacing) {
  ScoreSeries s;
  for (std::size_t i = 0; i < scores.size(); ++i) s.entries.push_back({i * spacing, scores[i], std::nullopt});
  return s;
}

std::vector<double> scores_of(const ScoreSeries& s) {
  std::vector<double> out;
  for (const auto& e : s.entries) out.push_back(e.score);
  return out;
}

}  // namespace

TEST_CASE("reference calibration averages latent means") {
  std::vector<sensor::LatentEmbedding> two{latent({1, 0}), latent({0, 1})};
  auto ref = calibrate_reference(two);
  CHECK(ref.mean_latent(0) == 0.5);
  CHECK(ref.mean_latent(1) == 0.5);
  CHECK(ref.m_a == 2);
  std::vector<sensor::LatentEmbedding> one{latent({3, -2})};
  CHECK(calibrate_reference(one).mean_latent == one[0].mean);
  CHECK_THROWS_AS(calibrate_reference({}), Error);
}

TEST_CASE("reference mean matches a streaming mean") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<sensor::LatentEmbedding> zs;
  for (int i = 0; i < 100; ++i) zs.push_back(latent({g(rng), g(rng), g(rng)}));
  Vector running = Vector::Zero(3);
  for (int i = 0; i < 100; ++i) running += (zs[static_cast<std::size_t>(i)].mean - running) / (i + 1.0);
  CHECK((calibrate_reference(zs).mean_latent - running).norm() < 1e-12);
}

TEST_CASE("score maps cosine onto [0,1]") {
  std::vector<sensor::LatentEmbedding> r{latent({1, 2, 3})};
  auto ref = calibrate_reference(r);
  CHECK(score(latent({1, 2, 3}), ref) == doctest::Approx(1.0));
  CHECK(score(latent({-1, -2, -3}), ref) == doctest::Approx(0.0));
  CHECK(score(latent({3, 0, -1}), ref) == doctest::Approx(0.5));
  try {
    score(latent({0, 0, 0}), ref);
    FAIL("expected degenerate-vector");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVector);
  }
}

TEST_CASE("score is scale invariant") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> k(0.01, 100.0);
  std::vector<sensor::LatentEmbedding> r{latent({g(rng), g(rng), g(rng), g(rng)})};
  auto ref = calibrate_reference(r);
  for (int i = 0; i < 50; ++i) {
    Vector p(4);
    p << g(rng), g(rng), g(rng), g(rng);
    CHECK(score(Vector(k(rng) * p), ref) == doctest::Approx(score(p, ref)).epsilon(1e-12));
  }
}

TEST_CASE("robustify takes the trailing-window minimum") {
  CHECK(scores_of(robustify(series_of({1.0, 0.2, 1.0}, 1.0), 2.5)) == std::vector<double>{1.0, 0.2, 0.2});
  CHECK(scores_of(robustify(series_of({0.4, 0.4, 0.4}, 1.0), 2.5)) == std::vector<double>{0.4, 0.4, 0.4});
  CHECK(scores_of(robustify(series_of({0.9, 0.1, 0.5}, 1.0), 0.5)) == std::vector<double>{0.9, 0.1, 0.5});
}

TEST_CASE("robustify never raises a score and matches a quadratic scan") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreSeries s;
    double t = 0.0;
    for (int i = 0; i < 60; ++i) {
      t += 0.05 + u(rng);
      s.entries.push_back({t, u(rng), std::nullopt});
    }
    const double w = 0.5 + 3.0 * u(rng);
    auto r = robustify(s, w);
    for (std::size_t i = 0; i < s.size(); ++i) {
      double m = s.entries[i].score;
      for (std::size_t j = 0; j <= i; ++j) {
        if (s.entries[i].t - s.entries[j].t < w) m = std::min(m, s.entries[j].score);
      }
      CHECK(r.entries[i].score == m);
      CHECK(r.entries[i].score <= s.entries[i].score);
    }
    auto twice = robustify(r, w);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(twice.entries[i].score <= r.entries[i].score);
  }
}
