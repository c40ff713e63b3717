#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "rawicl/numerics.hpp"

namespace rawicl {

enum class MulScheme { gelu, tanh_derivative, relu_piecewise };

MulScheme parse_mul_scheme(std::string_view name);

struct MulResult {
  double value = 0.0;
  /// False when |x| or |y| exceeds the 0.1 accuracy domain; the value is still
  /// computed but its error is no longer covered.
  bool in_domain = true;
};

inline constexpr double kMulDomain = 0.1;
inline constexpr double kTanhDelta = 1e-3;

/// xy from nonlinearity evaluations only:
///   gelu:            sqrt(pi/2) (gelu(x+y) - gelu(x) - gelu(y))
///   tanh_derivative: -1/2 (D(x+y) - D(x) - D(y) + 1), D(z) = (tanh(z+delta) - tanh(z)) / delta
///   relu_piecewise:  q((x+y)/2) - q((x-y)/2) with q the six-ReLU fit of z^2
MulResult approx_mul(double x, double y, MulScheme scheme);

/// Same as the gelu scheme after dividing both inputs by `scale` and
/// multiplying the result by scale^2.
double approx_mul_scaled(double x, double y, double scale);

/// Six-ReLU piecewise-linear fit of z^2 on [-0.1, 0.1].
double relu_square(double z);

/// gelu(n + x) - n.
double gelu_bypass(double x, double n);

/// sqrt(2/L) n layer_norm([x, n, -n - sum x, 0...]) restricted to the x entries,
/// where L >= |x| + 2 is the padded length.
Vector layer_norm_bypass(std::span<const double> x, double n, std::size_t length);

/// sqrt(2/L) m n layer_norm([n c, y/m, -n c - sum y/m, 0...]) restricted to the
/// y entries: approximately y / |c|.
Vector layer_norm_divide(std::span<const double> y, double c, double n, double m, std::size_t length);

}  // namespace rawicl
