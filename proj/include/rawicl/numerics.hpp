#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rawicl {

using Vector = std::vector<double>;

/// Raised when an input violates a numeric precondition (zero variance,
/// non-finite values, mismatched shapes).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> v);

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  DenseMatrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
Vector operator*(const DenseMatrix& a, std::span<const double> x);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

/// Error function. Uses the everywhere-positive series of Abramowitz &
/// Stegun 7.1.6, erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1)),
/// which has no cancellation; for |x| >= 6 the result is +-1 (erfc(6) < 3e-17).
double erf(double x);

/// x/2 * (1 + erf(x/sqrt(2))).
double gelu(double x);

/// (v - mean) / sqrt(population variance). No gain or shift.
/// Throws NumericError when the variance is below 1e-30.
Vector layer_norm(std::span<const double> v);

/// Max-subtracted softmax.
Vector softmax(std::span<const double> v);

/// Ridge solution (X^T X + lambda I)^{-1} X^T y for lambda > 0 (Cholesky),
/// minimum-norm least squares for lambda == 0 (SVD pseudoinverse with
/// singular values below 1e-10 * sigma_max dropped).
Vector solve_least_squares(const DenseMatrix& x, std::span<const double> y, double lambda);

}  // namespace rawicl
