#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerics.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

/// erf by composite Simpson on 2/sqrt(pi) * int_0^x exp(-t^2) dt.
inline double erf_simpson(double x, int intervals = 200000) {
  const double h = x / intervals;
  double s = 1.0 + std::exp(-x * x);
  for (int i = 1; i < intervals; ++i) {
    const double t = i * h;
    s += (i % 2 ? 4.0 : 2.0) * std::exp(-t * t);
  }
  return 2.0 / std::sqrt(M_PI) * s * h / 3.0;
}

/// Gaussian elimination with partial pivoting.
inline Vec solve(Mat a, Vec b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    if (a[c][c] == 0.0) throw std::runtime_error("singular");
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  Vec x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

/// (X^T X + lambda I) w = X^T y, X given as rows.
inline Vec ridge(const Mat& x, const Vec& y, double lambda) {
  const std::size_t d = x.empty() ? 0 : x[0].size();
  Mat a(d, Vec(d, 0.0));
  Vec b(d, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t r = 0; r < d; ++r) {
      b[r] += x[i][r] * y[i];
      for (std::size_t c = 0; c < d; ++c) a[r][c] += x[i][r] * x[i][c];
    }
  for (std::size_t r = 0; r < d; ++r) a[r][r] += lambda;
  return solve(a, b);
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// w <- w - 2 alpha (x (w.x - y) + lambda w), once per example in order.
inline Vec sgd_pass(const Mat& x, const Vec& y, Vec w, double alpha, double lambda) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = dot(w, x[i]) - y[i];
    for (std::size_t c = 0; c < w.size(); ++c) w[c] -= 2.0 * alpha * (x[i][c] * e + lambda * w[c]);
  }
  return w;
}

inline Mat random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, Vec(cols));
  for (auto& r : m)
    for (double& v : r) v = u(rng);
  return m;
}

inline Vec random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

}  // namespace oracle
