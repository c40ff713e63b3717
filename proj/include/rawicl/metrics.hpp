#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rawicl/predictors.hpp"

namespace rawicl {

/// w ~ N(0, tau2 I), x ~ N(0, x_scale^2 I), y = w^T x + eps, eps ~ N(0, sigma2).
struct TaskDistribution {
  std::size_t d = 8;
  double sigma2 = 0.0;
  double tau2 = 1.0;
  double x_scale = 1.0;
};

struct RegressionTask {
  std::uint64_t id = 0;
  Vector w;
  DenseMatrix x;        // n x d
  Vector y;             // n
  DenseMatrix queries;  // q x d, drawn fresh from p(x)
  Vector query_y;       // noisy labels of the queries
};

/// Counter-based stream: a generator seeded from (seed, task, stream) only,
/// so any task can be regenerated independently of the others.
std::mt19937_64 task_stream(std::uint64_t seed, std::uint64_t task, std::uint64_t stream);

/// w, queries and context come from separate streams, so the context of size
/// n is a prefix of the context of size n+1 for the same task.
RegressionTask sample_task(const TaskDistribution& dist, std::size_t n_context, std::size_t n_queries,
                           std::uint64_t seed, std::uint64_t task_id);

struct MonteCarlo {
  std::size_t tasks = 2048;
  std::size_t queries = 8;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = all cores
};

struct MetricReport {
  std::string metric;
  std::string a1;
  std::string a2;
  std::string context;  // "n=<k>" or a region name
  double value = 0.0;   // normalized when `normalized`
  double raw = 0.0;
  double stderr_value = 0.0;  // of `value`
  std::size_t samples = 0;
  bool normalized = false;
  std::uint64_t seed = 0;
};

MetricReport spd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, std::size_t n_context,
                 const MonteCarlo& mc, bool normalize = true);

struct ImpliedFit {
  Vector w;
  double r_squared = 1.0;
  bool exact = false;  // taken from the predictor's own weights
};

/// Least-squares (min-norm) fit of a's predictions on `pool`; closed-form
/// linear predictors return their actual weights unless `force_fit`.
ImpliedFit implied_weights(const Predictor& a, const DenseMatrix& x, std::span<const double> y,
                           const DenseMatrix& pool, std::uint64_t task_id, bool force_fit = false);

MetricReport ilwd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, std::size_t n_context,
                  const MonteCarlo& mc, std::size_t pool_size, bool normalize = true);

/// SPD averaged over the underdetermined context sizes n = 1..d-1, dimension normalized.
MetricReport mspd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, const MonteCarlo& mc);

/// Mean R^2 of the implied-weight fit over tasks.
MetricReport r_squared_linearity(const Predictor& a, const TaskDistribution& dist, std::size_t n_context,
                                 const MonteCarlo& mc, std::size_t pool_size);

/// E[(y_new - a(D)(x'))^2] against fresh noisy labels, averaged over the
/// underdetermined context sizes n = 1..d-1 (or n = 1 when d = 1).
MetricReport bayes_risk(const Predictor& a, const TaskDistribution& dist, const MonteCarlo& mc);

/// Predictions of `a` at the query points of tasks 0..mc.tasks-1, for building dumps.
std::vector<DumpRecord> collect_predictions(const Predictor& a, const TaskDistribution& dist,
                                            const std::vector<std::size_t>& n_context, const MonteCarlo& mc);

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const MetricReport& r);

}  // namespace rawicl
