#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rawicl/metrics.hpp"
#include "rawicl/raw.hpp"

namespace rawicl {

/// Training diverged or received inconsistent data.
class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ProbeHead { linear, mlp };

ProbeHead parse_probe_head(const std::string& name);
std::string to_string(ProbeHead head);

/// v = head(W_v Z alpha), alpha = softmax(scores[0:T]), Z the standardized layer
/// (each hidden row shifted and scaled by fixed statistics of the training set).
/// Outputs are in standardized target units and mapped back with target_mean/std.
/// All trainable values live in one flat vector `theta`:
///   scores (T_max) | W_v (P x H) | linear: A (K x P), b (K)
///                                | mlp:    W1 (M x P), b1 (M), W2 (K x M), b2 (K)
struct ProbeParams {
  ProbeHead head = ProbeHead::linear;
  std::size_t hidden = 0;     // H
  std::size_t positions = 0;  // T_max
  std::size_t projection = 0; // P (H' in the write-up)
  std::size_t outputs = 0;    // K
  std::size_t width = 0;      // M, mlp only
  Vector theta;
  Vector input_mean, input_scale;    // H
  Vector target_mean, target_scale;  // K

  std::size_t size() const;
  std::size_t scores_offset() const { return 0; }
  std::size_t wv_offset() const { return positions; }
  std::size_t head_offset() const { return positions + projection * hidden; }

  /// softmax of the first T scores.
  Vector attention(std::size_t t) const;
};

struct ProbeConfig {
  ProbeHead head = ProbeHead::linear;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch = 256;
  std::size_t steps = 10000;
  std::size_t eval_every = 100;
  bool cosine_decay = false;  // when set, the learning rate decays to 1% of its start
  double weight_decay = 2e-2; // L2 penalty on W_v and the head's weight matrices (not biases or scores)
  std::size_t projection = 0; // 0 = hidden
  std::size_t mlp_width = 512;
  std::uint64_t seed = 0;
};

/// Random initial parameters; standardization statistics are left at (0, 1).
ProbeParams init_probe(std::size_t hidden, std::size_t positions, std::size_t outputs, const ProbeConfig& config);

/// Sets input and target standardization from a training set.
void fit_standardization(ProbeParams& p, const std::vector<DenseMatrix>& layers, const std::vector<Vector>& targets);

/// Prediction in target units for one hidden-state matrix (H x T, T <= T_max).
Vector probe_forward(const ProbeParams& p, const DenseMatrix& layer);

/// Mean over `indices` of the squared error in standardized target units,
/// summed over outputs, plus weight_decay * |weights|^2. If `gradient` is
/// non-null it receives d objective / d theta.
double probe_objective(const ProbeParams& p, const std::vector<DenseMatrix>& layers, const std::vector<Vector>& targets,
                       const std::vector<std::size_t>& indices, Vector* gradient, double weight_decay = 0.0);

struct ProbeResult {
  ProbeParams params;
  double train_mse = 0.0;  // raw target units, mean over samples and outputs
  double val_mse = 0.0;
  double val_stderr = 0.0;
  double target_variance = 0.0;  // validation target variance, mean over outputs
  std::vector<double> val_errors;  // per validation sample
  Vector attention;
  std::size_t best_step = 0;
};

/// Adam on the squared error; returns the parameters with the lowest validation loss.
ProbeResult probe_train(const std::vector<DenseMatrix>& train_layers, const std::vector<Vector>& train_targets,
                        const std::vector<DenseMatrix>& val_layers, const std::vector<Vector>& val_targets,
                        const ProbeConfig& config);

// ---- Traces and targets ------------------------------------------------

enum class ProbeTarget { moments, w_ols, w_sgd };
ProbeTarget parse_probe_target(const std::string& name);
std::string to_string(ProbeTarget target);

struct TraceSet {
  std::vector<RegressionTask> tasks;
  std::vector<HiddenTrace> traces;
  std::size_t examples = 0;
};

/// Runs `program` on tasks drawn from `dist` with `examples` in-context examples.
TraceSet generate_traces(const CompiledProgram& program, const TaskDistribution& dist, std::size_t examples,
                         std::size_t tasks, std::uint64_t seed, std::size_t workers = 0);

/// The model for the control task: with w fixed to all-ones there is nothing
/// to infer, so the fitted solution is "predict 1^T x" and ignores the context
/// (the SGD-step program with w0 = 1 and step size 0).
RawProgram control_program(std::size_t d);

/// Control-model traces on data generated by w ~ N(0, tau2 I).
TraceSet make_control_traces(std::size_t d, std::size_t tasks, const TaskDistribution& probe_data, std::uint64_t seed,
                             std::size_t workers = 0);

/// Target value for the first n examples of a task. w_sgd uses one-pass SGD
/// from `w0` with step `alpha` and penalty `lambda`.
Vector probe_target(ProbeTarget target, const RegressionTask& task, std::size_t n, double alpha, double lambda,
                    const Vector& w0);

/// Columns 0..2n-1 of layer `layer` (the part of the sequence covering n examples).
DenseMatrix prefix_layer(const HiddenTrace& trace, std::size_t layer, std::size_t n);

struct ProbeReportRow {
  std::string model = "main";  // "main" or "control"
  std::size_t layer = 0;
  std::string target;
  std::size_t n = 0;
  std::string head;
  double val_mse = 0.0;
  double val_stderr = 0.0;
  double target_variance = 0.0;
  double normalized = 0.0;
  Vector attention;
};

struct ProbeStudy {
  std::vector<std::size_t> layers;
  std::vector<ProbeTarget> targets;
  std::vector<std::size_t> prefixes;
  std::size_t train = 10000;
  std::size_t validation = 2000;
  double alpha = 0.25;  // SGD target hyperparameters
  double lambda = 0.0;
  Vector w0;
  ProbeConfig config;
  std::size_t workers = 0;
};

/// One independent probe per (layer, target, prefix). `traces` holds
/// study.train + study.validation samples, in that order.
std::vector<ProbeReportRow> probe_report(const TraceSet& traces, const ProbeStudy& study);

void write_probe_csv_header(std::ostream& out);
void write_probe_csv_row(std::ostream& out, const ProbeReportRow& row);

/// JSON tensor dump: {"format":1, "program_hash", "seed", "axes":["layer","timestep","hidden"], "traces":[...]}.
void write_trace_dump(const std::filesystem::path& path, const TraceSet& traces, const RawProgram& program,
                      std::uint64_t seed);

/// FNV-1a of the program's JSON serialization, hex.
std::string program_hash(const RawProgram& program);

}  // namespace rawicl
