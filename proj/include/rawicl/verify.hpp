#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rawicl/raw.hpp"

namespace rawicl {

/// Which reference a compiled program is checked against.
struct VerifySpec {
  std::string program = "sgd_step";  // sgd_step | sgd_multi_step | sherman_morrison
  std::size_t d = 2;
  std::size_t examples = 1;
  double alpha = 0.25;
  double lambda = 0.0;
  Vector w0;             // empty = zeros
  std::size_t trials = 1000;
  double range = 0.1;    // entries drawn uniformly from [-range, range]
  std::uint64_t seed = 0;
  std::size_t workers = 0;
};

struct VerifyReport {
  std::size_t trials = 0;
  double max_relative_error = 0.0;
  double mean_relative_error = 0.0;
  std::size_t worst_trial = 0;
  std::vector<std::string> warnings;  // first few division-floor warnings
  bool passed(double tolerance) const { return max_relative_error <= tolerance; }
};

/// The program a spec describes.
RawProgram build_program(const VerifySpec& spec);

/// Closed-form prediction the program is supposed to compute:
/// sgd: one-pass SGD from w0; sherman_morrison: ridge (lambda I + X^T X)^{-1} X^T y.
double reference_prediction(const VerifySpec& spec, const DenseMatrix& x, std::span<const double> y,
                            std::span<const double> query);

/// Runs `program` on spec.trials random tasks and compares with the reference
/// (relative error |got - ref| / |ref|).
VerifyReport verify_program(const CompiledProgram& program, const VerifySpec& spec);

}  // namespace rawicl
