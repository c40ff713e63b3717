#include "rawicl/verify.hpp"

#include <cmath>
#include <random>

#include "rawicl/metrics.hpp"
#include "rawicl/parallel.hpp"
#include "rawicl/predictors.hpp"

namespace rawicl {

RawProgram build_program(const VerifySpec& spec) {
  if (spec.program == "sgd_step") return program_sgd_step(spec.d, spec.w0, spec.alpha, spec.lambda);
  if (spec.program == "sgd_multi_step") return program_sgd({spec.d, spec.examples, spec.w0, spec.alpha, spec.lambda});
  if (spec.program == "sherman_morrison") return program_sherman_morrison(spec.d, spec.lambda);
  throw CompileError("unknown program \"" + spec.program + "\"");
}

double reference_prediction(const VerifySpec& spec, const DenseMatrix& x, std::span<const double> y,
                            std::span<const double> query) {
  if (spec.program == "sherman_morrison") return ridge_predict(x, y, query, spec.lambda);
  Vector w = spec.w0.empty() ? Vector(x.cols(), 0.0) : spec.w0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const double err = dot(w, xi) - y[i];
    for (std::size_t c = 0; c < w.size(); ++c) w[c] -= 2.0 * spec.alpha * (xi[c] * err + spec.lambda * w[c]);
  }
  return dot(w, query);
}

VerifyReport verify_program(const CompiledProgram& program, const VerifySpec& spec) {
  const std::size_t n = program.program().examples;
  const std::size_t d = spec.d;
  std::vector<double> errors(spec.trials, 0.0);
  std::vector<std::vector<std::string>> warnings(spec.trials);
  parallel_for(spec.trials, spec.workers, [&](std::size_t t) {
    auto rng = task_stream(spec.seed, t, 7);
    std::uniform_real_distribution<double> u(-spec.range, spec.range);
    DenseMatrix x(n, d);
    Vector y(n), q(d);
    for (double& v : x.data()) v = u(rng);
    for (double& v : y) v = u(rng);
    for (double& v : q) v = u(rng);
    const double ref = reference_prediction(spec, x, y, q);
    const ExecutionReport r = program.execute(encode_task(x, y, q));
    errors[t] = std::abs(r.output - ref) / std::abs(ref);
    if (!std::isfinite(errors[t])) errors[t] = r.output == ref ? 0.0 : std::numeric_limits<double>::infinity();
    warnings[t] = r.warnings;
  });
  VerifyReport report;
  report.trials = spec.trials;
  double sum = 0.0;
  for (std::size_t t = 0; t < errors.size(); ++t) {
    sum += errors[t];
    if (errors[t] > report.max_relative_error) {
      report.max_relative_error = errors[t];
      report.worst_trial = t;
    }
    for (const auto& w : warnings[t])
      if (report.warnings.size() < 10) report.warnings.push_back("trial " + std::to_string(t) + ": " + w);
  }
  report.mean_relative_error = errors.empty() ? 0.0 : sum / static_cast<double>(errors.size());
  return report;
}

}  // namespace rawicl
