#include "rawicl/approx.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rawicl {

MulScheme parse_mul_scheme(std::string_view name) {
  if (name == "gelu") return MulScheme::gelu;
  if (name == "tanh_derivative") return MulScheme::tanh_derivative;
  if (name == "relu_piecewise") return MulScheme::relu_piecewise;
  throw std::invalid_argument("unknown multiplication scheme: " + std::string(name));
}

namespace {

double relu(double z) { return z > 0.0 ? z : 0.0; }

double tanh_slope(double z) { return (std::tanh(z + kTanhDelta) - std::tanh(z)) / kTanhDelta; }

}  // namespace

double relu_square(double z) {
  return 0.0375 * relu(z) + 0.0375 * relu(-z) + relu(0.05 * (z - 0.05)) + relu(-0.05 * (z + 0.05)) +
         relu(0.025 * (z - 0.025)) + relu(-0.025 * (z + 0.025));
}

MulResult approx_mul(double x, double y, MulScheme scheme) {
  MulResult r;
  r.in_domain = std::abs(x) <= kMulDomain && std::abs(y) <= kMulDomain;
  switch (scheme) {
    case MulScheme::gelu:
      r.value = std::sqrt(std::numbers::pi / 2.0) * (gelu(x + y) - gelu(x) - gelu(y));
      break;
    case MulScheme::tanh_derivative:
      r.value = -0.5 * (tanh_slope(x + y) - tanh_slope(x) - tanh_slope(y) + 1.0);
      break;
    case MulScheme::relu_piecewise:
      r.value = relu_square(0.5 * (x + y)) - relu_square(0.5 * (x - y));
      break;
  }
  return r;
}

double approx_mul_scaled(double x, double y, double scale) {
  return scale * scale * approx_mul(x / scale, y / scale, MulScheme::gelu).value;
}

double gelu_bypass(double x, double n) { return gelu(n + x) - n; }

Vector layer_norm_bypass(std::span<const double> x, double n, std::size_t length) {
  if (length < x.size() + 2) throw std::invalid_argument("layer_norm_bypass: length too small");
  Vector v(length, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = x[i];
    sum += x[i];
  }
  v[x.size()] = n;
  v[x.size() + 1] = -n - sum;
  const Vector out = layer_norm(v);
  const double scale = std::sqrt(2.0 / static_cast<double>(length)) * n;
  Vector r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = scale * out[i];
  return r;
}

Vector layer_norm_divide(std::span<const double> y, double c, double n, double m, std::size_t length) {
  if (length < y.size() + 2) throw std::invalid_argument("layer_norm_divide: length too small");
  Vector v(length, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    v[1 + i] = y[i] / m;
    sum += y[i] / m;
  }
  v[0] = n * c;
  v[y.size() + 1] = -n * c - sum;
  const Vector out = layer_norm(v);
  const double scale = std::sqrt(2.0 / static_cast<double>(length)) * m * n;
  Vector r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = scale * out[1 + i];
  return r;
}

}  // namespace rawicl
