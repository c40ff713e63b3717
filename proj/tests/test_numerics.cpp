#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rawicl/numerics.hpp"

using namespace rawicl;

TEST_CASE("erf at zero, saturation and against quadrature") {
  CHECK(rawicl::erf(0.0) == 0.0);
  CHECK(std::abs(rawicl::erf(10.0) - 1.0) <= 1e-9);
  CHECK(std::abs(rawicl::erf(-10.0) + 1.0) <= 1e-9);
  CHECK(std::abs(rawicl::erf(1.0) - oracle::erf_simpson(1.0)) <= 1e-12);
  for (double x : {-5.5, -3.0, -1.7, -0.3, 0.05, 0.4, 1.1, 2.5, 4.0, 5.9}) {
    CAPTURE(x);
    CHECK(std::abs(rawicl::erf(x) - oracle::erf_simpson(x)) <= 1e-12);
  }
}

TEST_CASE("gelu matches its definition through the quadrature erf") {
  for (double x : {-4.0, -1.0, -0.01, 0.0, 0.3, 2.0, 31.0}) {
    const double want = 0.5 * x * (1.0 + oracle::erf_simpson(x / std::sqrt(2.0)));
    CHECK(std::abs(gelu(x) - want) <= 1e-11 * std::max(1.0, std::abs(x)));
  }
}

TEST_CASE("layer_norm") {
  const Vector flat{1, 1, 1, 1};
  CHECK_THROWS_AS(layer_norm(flat), NumericError);

  const Vector alt{1, -1, 1, -1};
  const Vector out = layer_norm(alt);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(alt[i]).epsilon(1e-15));

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector v = oracle::random_vector(rng, 7 + rep, -50.0, 80.0);
    const Vector n = layer_norm(v);
    double mean = 0.0, var = 0.0;
    for (double x : n) mean += x;
    mean /= n.size();
    for (double x : n) var += (x - mean) * (x - mean);
    var /= n.size();
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(var - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax") {
  const Vector even = softmax(Vector{0, 0});
  CHECK(even[0] == 0.5);
  CHECK(even[1] == 0.5);
  const Vector sat = softmax(Vector{30, 0});
  CHECK(sat[0] > 1.0 - 1e-12);
  CHECK(sat[1] < 1e-12);

  std::mt19937_64 rng(5);
  const Vector v = oracle::random_vector(rng, 9, -3.0, 3.0);
  const Vector s = softmax(v);
  double z = 0.0;
  for (double x : v) z += std::exp(x);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(s[i] - std::exp(v[i]) / z) <= 1e-12);
}

TEST_CASE("solve_least_squares") {
  SUBCASE("identity design returns y") {
    const Vector y{0.3, -2.0, 7.5};
    const Vector w = solve_least_squares(DenseMatrix::identity(3), y, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(w[i] - y[i]) <= 1e-12);
  }
  SUBCASE("single example takes the minimum-norm solution") {
    const Vector w = solve_least_squares(DenseMatrix{{1.0, 0.0}}, Vector{2.0}, 0.0);
    CHECK(std::abs(w[0] - 2.0) <= 1e-12);
    CHECK(std::abs(w[1]) <= 1e-12);
  }
  SUBCASE("ridge against a dense solve") {
    std::mt19937_64 rng(11);
    const auto x = oracle::random_matrix(rng, 5, 3);
    const auto y = oracle::random_vector(rng, 5);
    const Vector w = solve_least_squares(DenseMatrix::from_rows(x), y, 0.1);
    const auto want = oracle::ridge(x, y, 0.1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(w[i] - want[i]) <= 1e-10);
  }
  SUBCASE("underdetermined min-norm fit interpolates and lies in the row space") {
    std::mt19937_64 rng(12);
    const auto x = oracle::random_matrix(rng, 2, 5);
    const auto y = oracle::random_vector(rng, 2);
    const Vector w = solve_least_squares(DenseMatrix::from_rows(x), y, 0.0);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(oracle::dot(w, x[i]) - y[i]) <= 1e-10);
    // w = X^T c: solve (X X^T) c = y and compare.
    oracle::Mat g(2, oracle::Vec(2));
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) g[r][c] = oracle::dot(x[r], x[c]);
    const auto coef = oracle::solve(g, y);
    for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(w[k] - (coef[0] * x[0][k] + coef[1] * x[1][k])) <= 1e-10);
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(solve_least_squares(DenseMatrix(3, 2), Vector{1, 2}, 0.0), NumericError); }
}

TEST_CASE("matmul associativity and products") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = DenseMatrix::from_rows(oracle::random_matrix(rng, 4, 6));
    const auto b = DenseMatrix::from_rows(oracle::random_matrix(rng, 6, 3));
    const auto c = DenseMatrix::from_rows(oracle::random_matrix(rng, 3, 5));
    const DenseMatrix left = (a * b) * c, right = a * (b * c);
    double scale = 0.0;
    for (double v : left.data()) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(left, right) <= 1e-10 * std::max(1.0, scale));
  }
  const DenseMatrix m{{1, 2}, {3, 4}};
  const Vector v = m * Vector{1, -1};
  CHECK(v == Vector{-1, -1});
  CHECK(m.transpose()(0, 1) == 3);
  CHECK_THROWS_AS(m * DenseMatrix(3, 3), NumericError);
}
