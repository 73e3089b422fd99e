#include <doctest.h>

#include <random>

#include "cotrate/autodiff.hpp"

using namespace cotrate;
using namespace cotrate::ad;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

double check(std::vector<Matrix>& params, const std::function<Var(Tape&, std::span<const Var>)>& loss) {
  std::vector<Matrix*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  GradCheckResult r = grad_check(ptrs, loss, 1e-5);
  CHECK(r.compared > 0);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("linear toy network gradients are exact") {
  std::mt19937_64 rng(1);
  std::vector<Matrix> params{random_matrix(3, 2, rng), random_matrix(1, 2, rng)};
  const Matrix x = random_matrix(5, 3, rng);
  auto loss = [&](Tape& t, std::span<const Var> v) { return sum(add_row(matmul(t.constant(x), v[0]), v[1])); };
  CHECK(check(params, loss) < 1e-8);
}

TEST_CASE("dead relu path yields zero on both sides") {
  std::vector<Matrix> params{Matrix::Constant(2, 2, 0.5)};
  const Matrix x = Matrix::Constant(3, 2, -1.0);
  auto loss = [&](Tape& t, std::span<const Var> v) { return sum(relu(matmul(t.constant(x), v[0]))); };
  Tape tape;
  Var w = tape.parameter(params[0]);
  Var l = sum(relu(matmul(tape.constant(x), w)));
  tape.backward(l);
  CHECK(w.grad().isZero(0.0));
  std::vector<Matrix*> ptrs{&params[0]};
  GradCheckResult r = grad_check(ptrs, loss, 1e-5);
  CHECK(r.max_rel_error == 0.0);
}

TEST_CASE("elementwise and structural ops match finite differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Matrix> params{random_matrix(4, 3, rng), random_matrix(4, 3, rng), random_matrix(1, 3, rng)};
    auto loss = [&](Tape&, std::span<const Var> v) {
      Var a = mul(v[0], v[1]);
      Var b = sub_row(add_row(a, v[2]), v[2]);
      Var c = mul_row(exp(scale(b, 0.3)), v[2]);
      Var d = log(add_scalar(square(v[0]), 1.0));
      Var e = vconcat(transpose(c), transpose(d));
      return add(mean(square(e)), sum(select_rows(mean_rows(v[1]), std::vector<int>{0, 0})));
    };
    CHECK(check(params, loss) < 1e-6);
  }
}

TEST_CASE("reductions and normalization match finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Matrix> params{random_matrix(6, 4, rng), random_matrix(1, 4, rng)};
    auto loss = [&](Tape&, std::span<const Var> v) {
      Var n = normalize_rows(v[0]);
      Var d = rows_dot(n, normalize_rows(v[1]));
      Var s = segment_mean(v[0], 3);
      return add(mean(square(d)), sum(sqrt(add_scalar(square(s), 0.1))));
    };
    CHECK(check(params, loss) < 1e-6);
  }
}

TEST_CASE("conv1d matches finite differences and a direct convolution") {
  std::mt19937_64 rng(3);
  const int batch = 2, len = 9, cin = 3, cout = 4, k = 3;
  Matrix x = random_matrix(batch * len, cin, rng);
  std::vector<Matrix> params{random_matrix(k * cin, cout, rng), random_matrix(1, cout, rng)};
  Tape tape;
  Var y = conv1d(tape.constant(x), batch, tape.constant(params[0]), tape.constant(params[1]), k);
  REQUIRE(y.rows() == batch * (len - k + 1));
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < len - k + 1; ++o) {
      for (int co = 0; co < cout; ++co) {
        double v = params[1](0, co);
        for (int j = 0; j < k; ++j) {
          for (int ci = 0; ci < cin; ++ci) v += x(b * len + o + j, ci) * params[0](j * cin + ci, co);
        }
        CHECK(y.value()(b * (len - k + 1) + o, co) == doctest::Approx(v).epsilon(1e-12));
      }
    }
  }
  auto loss = [&](Tape& t, std::span<const Var> v) {
    return mean(square(relu(conv1d(t.constant(x), batch, v[0], v[1], k))));
  };
  CHECK(check(params, loss) < 1e-6);
}

TEST_CASE("batch norm and sparse matmul match finite differences") {
  std::mt19937_64 rng(5);
  std::vector<Matrix> params{random_matrix(8, 3, rng), Matrix::Ones(1, 3) + random_matrix(1, 3, rng, 0.1),
                             random_matrix(1, 3, rng)};
  Eigen::SparseMatrix<double> s(5, 8);
  s.insert(0, 1) = 0.5;
  s.insert(0, 2) = 0.5;
  s.insert(3, 7) = 1.0;
  s.insert(4, 0) = -2.0;
  s.makeCompressed();
  const Matrix target = random_matrix(5, 3, rng);
  auto loss = [&](Tape& t, std::span<const Var> v) {
    Var bn = batch_norm(v[0], v[1], v[2], 1e-5).out;
    return mse(sparse_matmul(s, bn), t.constant(target));
  };
  CHECK(check(params, loss) < 1e-5);
}

TEST_CASE("clamp and relu kinks are skipped rather than compared") {
  std::vector<Matrix> params{(Matrix(1, 3) << 0.0, 1.0, -2.0).finished()};
  auto loss = [&](Tape&, std::span<const Var> v) { return sum(add(relu(v[0]), clamp(v[0], -1.0, 1.0))); };
  std::vector<Matrix*> ptrs{&params[0]};
  GradCheckResult r = grad_check(ptrs, loss, 1e-5);
  CHECK(r.skipped_kinks == 2);
  CHECK(r.compared == 1);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var a = tape.parameter(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(a), Error);
}
