#include "rawicl/numerics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rawicl {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw NumericError("DenseMatrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  DenseMatrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols_) throw NumericError("DenseMatrix: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Vector DenseMatrix::column(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void DenseMatrix::set_column(std::size_t c, std::span<const double> v) {
  if (v.size() != rows_) throw NumericError("set_column: length mismatch");
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw NumericError("matmul: inner dimension mismatch");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Vector operator*(const DenseMatrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw NumericError("matvec: dimension mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumericError("add: shape mismatch");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumericError("sub: shape mismatch");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw NumericError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw NumericError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double erf(double x) {
  if (std::isnan(x)) return x;
  const double ax = std::abs(x);
  if (ax >= 6.0) return x > 0 ? 1.0 : -1.0;
  if (ax == 0.0) return x;
  // term_n = 2^n x^{2n+1} / (2n+1)!!, term_{n+1} = term_n * 2x^2 / (2n+3)
  const double two_x2 = 2.0 * ax * ax;
  double term = ax;
  double sum = ax;
  for (int n = 0; n < 400; ++n) {
    term *= two_x2 / (2.0 * n + 3.0);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  const double value = 2.0 / std::sqrt(std::numbers::pi) * std::exp(-ax * ax) * sum;
  return x > 0 ? std::min(value, 1.0) : -std::min(value, 1.0);
}

double gelu(double x) { return 0.5 * x * (1.0 + erf(x / std::numbers::sqrt2)); }

Vector layer_norm(std::span<const double> v) {
  if (v.empty()) throw NumericError("layer_norm: empty input");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double e : v) mean += e;
  mean /= n;
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= n;
  if (!(var >= 1e-30)) throw NumericError("layer_norm: degenerate input (variance below 1e-30)");
  const double inv = 1.0 / std::sqrt(var);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * inv;
  return out;
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) return {};
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& e : out) e /= s;
  return out;
}

Vector solve_least_squares(const DenseMatrix& x, std::span<const double> y, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw NumericError("solve_least_squares: lambda must be finite and >= 0");
  if (x.rows() != y.size()) throw NumericError("solve_least_squares: X rows != y length");
  if (!x.all_finite() || !std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }))
    throw NumericError("solve_least_squares: non-finite input");
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(x.cols());
  if (d == 0) return {};
  if (n == 0) return Vector(static_cast<std::size_t>(d), 0.0);

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> xm(x.data().data(), n, d);
  Eigen::Map<const Eigen::VectorXd> ym(y.data(), n);

  Eigen::VectorXd w;
  if (lambda > 0.0) {
    Eigen::MatrixXd gram = xm.transpose() * xm;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericError("solve_least_squares: ridge system not positive definite");
    w = llt.solve(xm.transpose() * ym);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(xm), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = s.size() > 0 ? 1e-10 * s(0) : 0.0;
    Eigen::VectorXd uty = svd.matrixU().transpose() * ym;
    for (Eigen::Index i = 0; i < s.size(); ++i) uty(i) = s(i) > cutoff ? uty(i) / s(i) : 0.0;
    w = svd.matrixV() * uty;
  }
  return Vector(w.data(), w.data() + w.size());
}

}  // namespace rawicl
