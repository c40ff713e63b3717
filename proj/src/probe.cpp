#include "rawicl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "rawicl/parallel.hpp"
#include "rawicl/serialize.hpp"

namespace rawicl {

namespace {

double gelu_slope(double x) {
  const double cdf = 0.5 * (1.0 + rawicl::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

/// Per-sample scratch for the forward and backward passes.
struct Workspace {
  Vector alpha, zbar, u, pre, act, out;
  Vector d_out, d_act, d_pre, d_u, d_zbar, d_alpha;
};

void forward_standardized(const ProbeParams& p, const DenseMatrix& z, Workspace& w) {
  const std::size_t h = p.hidden, t = z.cols(), pr = p.projection, k = p.outputs;
  const double* theta = p.theta.data();
  w.alpha = p.attention(t);
  w.zbar.assign(h, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t; ++c) s += z(r, c) * w.alpha[c];
    w.zbar[r] = s;
  }
  const double* wv = theta + p.wv_offset();
  w.u.assign(pr, 0.0);
  for (std::size_t i = 0; i < pr; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < h; ++r) s += wv[i * h + r] * w.zbar[r];
    w.u[i] = s;
  }
  const double* hd = theta + p.head_offset();
  w.out.assign(k, 0.0);
  if (p.head == ProbeHead::linear) {
    const double* a = hd;
    const double* b = hd + k * pr;
    for (std::size_t o = 0; o < k; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < pr; ++i) s += a[o * pr + i] * w.u[i];
      w.out[o] = s;
    }
    return;
  }
  const std::size_t m = p.width;
  const double* w1 = hd;
  const double* b1 = w1 + m * pr;
  const double* w2 = b1 + m;
  const double* b2 = w2 + k * m;
  w.pre.assign(m, 0.0);
  w.act.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double s = b1[j];
    for (std::size_t i = 0; i < pr; ++i) s += w1[j * pr + i] * w.u[i];
    w.pre[j] = s;
    w.act[j] = gelu(s);
  }
  for (std::size_t o = 0; o < k; ++o) {
    double s = b2[o];
    for (std::size_t j = 0; j < m; ++j) s += w2[o * m + j] * w.act[j];
    w.out[o] = s;
  }
}

/// Accumulates d(sample loss)/d theta, with d loss / d out already in w.d_out.
void backward_standardized(const ProbeParams& p, const DenseMatrix& z, Workspace& w, Vector& grad) {
  const std::size_t h = p.hidden, t = z.cols(), pr = p.projection, k = p.outputs;
  const double* theta = p.theta.data();
  double* g = grad.data();
  const double* hd = theta + p.head_offset();
  double* ghd = g + p.head_offset();
  w.d_u.assign(pr, 0.0);
  if (p.head == ProbeHead::linear) {
    const double* a = hd;
    for (std::size_t o = 0; o < k; ++o) {
      const double go = w.d_out[o];
      for (std::size_t i = 0; i < pr; ++i) {
        ghd[o * pr + i] += go * w.u[i];
        w.d_u[i] += a[o * pr + i] * go;
      }
      ghd[k * pr + o] += go;
    }
  } else {
    const std::size_t m = p.width;
    const double* w1 = hd;
    const double* w2 = w1 + m * pr + m;
    double* gw1 = ghd;
    double* gb1 = gw1 + m * pr;
    double* gw2 = gb1 + m;
    double* gb2 = gw2 + k * m;
    w.d_act.assign(m, 0.0);
    for (std::size_t o = 0; o < k; ++o) {
      const double go = w.d_out[o];
      for (std::size_t j = 0; j < m; ++j) {
        gw2[o * m + j] += go * w.act[j];
        w.d_act[j] += w2[o * m + j] * go;
      }
      gb2[o] += go;
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double dp = w.d_act[j] * gelu_slope(w.pre[j]);
      if (dp == 0.0) continue;
      for (std::size_t i = 0; i < pr; ++i) {
        gw1[j * pr + i] += dp * w.u[i];
        w.d_u[i] += w1[j * pr + i] * dp;
      }
      gb1[j] += dp;
    }
  }
  const double* wv = theta + p.wv_offset();
  double* gwv = g + p.wv_offset();
  w.d_zbar.assign(h, 0.0);
  for (std::size_t i = 0; i < pr; ++i) {
    const double du = w.d_u[i];
    for (std::size_t r = 0; r < h; ++r) {
      gwv[i * h + r] += du * w.zbar[r];
      w.d_zbar[r] += wv[i * h + r] * du;
    }
  }
  w.d_alpha.assign(t, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < t; ++c) w.d_alpha[c] += w.d_zbar[r] * z(r, c);
  double mean = 0.0;
  for (std::size_t c = 0; c < t; ++c) mean += w.alpha[c] * w.d_alpha[c];
  for (std::size_t c = 0; c < t; ++c) g[p.scores_offset() + c] += w.alpha[c] * (w.d_alpha[c] - mean);
}

DenseMatrix standardize(const ProbeParams& p, const DenseMatrix& layer) {
  if (layer.rows() != p.hidden) throw ProbeError("layer has " + std::to_string(layer.rows()) + " rows, probe expects " +
                                                 std::to_string(p.hidden));
  if (layer.cols() == 0 || layer.cols() > p.positions)
    throw ProbeError("layer has " + std::to_string(layer.cols()) + " timesteps, probe supports 1.." +
                     std::to_string(p.positions));
  DenseMatrix z(layer.rows(), layer.cols());
  for (std::size_t r = 0; r < layer.rows(); ++r)
    for (std::size_t c = 0; c < layer.cols(); ++c) z(r, c) = (layer(r, c) - p.input_mean[r]) / p.input_scale[r];
  return z;
}

Vector standardize_target(const ProbeParams& p, const Vector& y) {
  if (y.size() != p.outputs) throw ProbeError("target has wrong dimension");
  Vector s(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) s[k] = (y[k] - p.target_mean[k]) / p.target_scale[k];
  return s;
}

/// [begin, end) ranges of theta holding weight matrices.
std::vector<std::pair<std::size_t, std::size_t>> weight_ranges(const ProbeParams& p) {
  const std::size_t h0 = p.head_offset();
  if (p.head == ProbeHead::linear) return {{p.wv_offset(), h0}, {h0, h0 + p.outputs * p.projection}};
  const std::size_t w2 = h0 + p.width * p.projection + p.width;
  return {{p.wv_offset(), h0}, {h0, h0 + p.width * p.projection}, {w2, w2 + p.outputs * p.width}};
}

double objective_standardized(const ProbeParams& p, const std::vector<DenseMatrix>& z, const std::vector<Vector>& y,
                              const std::vector<std::size_t>& indices, Vector* gradient, double weight_decay) {
  if (indices.empty()) throw ProbeError("empty batch");
  if (gradient) gradient->assign(p.size(), 0.0);
  Workspace w;
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(indices.size());
  for (std::size_t idx : indices) {
    forward_standardized(p, z[idx], w);
    w.d_out.assign(p.outputs, 0.0);
    for (std::size_t k = 0; k < p.outputs; ++k) {
      const double e = w.out[k] - y[idx][k];
      loss += e * e;
      w.d_out[k] = 2.0 * e * scale;
    }
    if (gradient) backward_standardized(p, z[idx], w, *gradient);
  }
  loss *= scale;
  if (weight_decay != 0.0)
    for (auto [b, e] : weight_ranges(p))
      for (std::size_t i = b; i < e; ++i) {
        loss += weight_decay * p.theta[i] * p.theta[i];
        if (gradient) (*gradient)[i] += 2.0 * weight_decay * p.theta[i];
      }
  return loss;
}

double sample_error(const ProbeParams& p, const DenseMatrix& z, const Vector& raw_target, Workspace& w) {
  forward_standardized(p, z, w);
  double e = 0.0;
  for (std::size_t k = 0; k < p.outputs; ++k) {
    const double pred = w.out[k] * p.target_scale[k] + p.target_mean[k];
    e += (pred - raw_target[k]) * (pred - raw_target[k]);
  }
  return e / static_cast<double>(p.outputs);
}

}  // namespace

ProbeHead parse_probe_head(const std::string& name) {
  if (name == "linear") return ProbeHead::linear;
  if (name == "mlp") return ProbeHead::mlp;
  throw ProbeError("unknown probe head \"" + name + "\"");
}

std::string to_string(ProbeHead head) { return head == ProbeHead::linear ? "linear" : "mlp"; }

std::size_t ProbeParams::size() const {
  const std::size_t head_size =
      head == ProbeHead::linear ? outputs * projection + outputs : width * projection + width + outputs * width + outputs;
  return positions + projection * hidden + head_size;
}

Vector ProbeParams::attention(std::size_t t) const {
  if (t > positions) throw ProbeError("sequence longer than the probe's position scores");
  return softmax(std::span<const double>(theta.data() + scores_offset(), t));
}

ProbeParams init_probe(std::size_t hidden, std::size_t positions, std::size_t outputs, const ProbeConfig& config) {
  if (hidden == 0 || positions == 0 || outputs == 0) throw ProbeError("probe dimensions must be positive");
  ProbeParams p;
  p.head = config.head;
  p.hidden = hidden;
  p.positions = positions;
  p.projection = config.projection == 0 ? hidden : config.projection;
  p.outputs = outputs;
  p.width = config.head == ProbeHead::mlp ? config.mlp_width : 0;
  p.theta.assign(p.size(), 0.0);
  std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  double* wv = p.theta.data() + p.wv_offset();
  for (std::size_t i = 0; i < p.projection * hidden; ++i) wv[i] = normal(rng) / std::sqrt(static_cast<double>(hidden));
  double* hd = p.theta.data() + p.head_offset();
  if (p.head == ProbeHead::linear) {
    for (std::size_t i = 0; i < outputs * p.projection; ++i)
      hd[i] = normal(rng) / std::sqrt(static_cast<double>(p.projection));
  } else {
    for (std::size_t i = 0; i < p.width * p.projection; ++i)
      hd[i] = normal(rng) / std::sqrt(static_cast<double>(p.projection));
    double* w2 = hd + p.width * p.projection + p.width;
    for (std::size_t i = 0; i < outputs * p.width; ++i) w2[i] = normal(rng) / std::sqrt(static_cast<double>(p.width));
  }
  p.input_mean.assign(hidden, 0.0);
  p.input_scale.assign(hidden, 1.0);
  p.target_mean.assign(outputs, 0.0);
  p.target_scale.assign(outputs, 1.0);
  return p;
}

void fit_standardization(ProbeParams& p, const std::vector<DenseMatrix>& layers, const std::vector<Vector>& targets) {
  if (layers.empty() || layers.size() != targets.size()) throw ProbeError("standardization needs matching samples");
  const std::size_t h = p.hidden;
  Vector sum(h, 0.0), sq(h, 0.0);
  double count = 0.0;
  for (const auto& l : layers) {
    if (l.rows() != h) throw ProbeError("layer has wrong hidden size");
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < l.cols(); ++c) sum[r] += l(r, c);
    count += static_cast<double>(l.cols());
  }
  for (std::size_t r = 0; r < h; ++r) p.input_mean[r] = sum[r] / count;
  for (const auto& l : layers)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < l.cols(); ++c) sq[r] += (l(r, c) - p.input_mean[r]) * (l(r, c) - p.input_mean[r]);
  for (std::size_t r = 0; r < h; ++r) {
    const double sd = std::sqrt(sq[r] / count);
    p.input_scale[r] = sd > 1e-12 * (1.0 + std::abs(p.input_mean[r])) ? sd : 1.0;
  }
  const std::size_t k = p.outputs;
  for (std::size_t o = 0; o < k; ++o) {
    double m = 0.0, v = 0.0;
    for (const auto& t : targets) m += t.at(o);
    m /= static_cast<double>(targets.size());
    for (const auto& t : targets) v += (t[o] - m) * (t[o] - m);
    const double sd = std::sqrt(v / static_cast<double>(targets.size()));
    p.target_mean[o] = m;
    p.target_scale[o] = sd > 0.0 ? sd : 1.0;
  }
}

Vector probe_forward(const ProbeParams& p, const DenseMatrix& layer) {
  Workspace w;
  forward_standardized(p, standardize(p, layer), w);
  Vector out(p.outputs);
  for (std::size_t k = 0; k < p.outputs; ++k) out[k] = w.out[k] * p.target_scale[k] + p.target_mean[k];
  return out;
}

double probe_objective(const ProbeParams& p, const std::vector<DenseMatrix>& layers, const std::vector<Vector>& targets,
                       const std::vector<std::size_t>& indices, Vector* gradient, double weight_decay) {
  std::vector<DenseMatrix> z(layers.size());
  std::vector<Vector> y(targets.size());
  for (std::size_t i : indices) {
    z.at(i) = standardize(p, layers.at(i));
    y.at(i) = standardize_target(p, targets.at(i));
  }
  return objective_standardized(p, z, y, indices, gradient, weight_decay);
}

ProbeResult probe_train(const std::vector<DenseMatrix>& train_layers, const std::vector<Vector>& train_targets,
                        const std::vector<DenseMatrix>& val_layers, const std::vector<Vector>& val_targets,
                        const ProbeConfig& config) {
  if (train_layers.empty() || train_layers.size() != train_targets.size())
    throw ProbeError("training set is empty or mismatched");
  if (val_layers.empty() || val_layers.size() != val_targets.size())
    throw ProbeError("validation set is empty or mismatched");
  const std::size_t hidden = train_layers.front().rows();
  std::size_t positions = 0;
  for (const auto& l : train_layers) positions = std::max(positions, l.cols());
  for (const auto& l : val_layers) positions = std::max(positions, l.cols());
  ProbeParams p = init_probe(hidden, positions, train_targets.front().size(), config);
  fit_standardization(p, train_layers, train_targets);

  std::vector<DenseMatrix> z_train, z_val;
  std::vector<Vector> y_train;
  for (std::size_t i = 0; i < train_layers.size(); ++i) {
    z_train.push_back(standardize(p, train_layers[i]));
    y_train.push_back(standardize_target(p, train_targets[i]));
  }
  for (const auto& l : val_layers) z_val.push_back(standardize(p, l));

  auto validation = [&](const ProbeParams& q, std::vector<double>* errors) {
    Workspace w;
    double s = 0.0;
    for (std::size_t i = 0; i < z_val.size(); ++i) {
      const double e = sample_error(q, z_val[i], val_targets[i], w);
      if (errors) errors->push_back(e);
      s += e;
    }
    return s / static_cast<double>(z_val.size());
  };

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(z_train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t batch = std::min(config.batch, order.size());

  Vector m(p.size(), 0.0), v(p.size(), 0.0), grad;
  Vector best = p.theta;
  double best_val = validation(p, nullptr);
  std::size_t best_step = 0;
  std::vector<std::size_t> idx(batch);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }
    const double loss = objective_standardized(p, z_train, y_train, idx, &grad, config.weight_decay);
    if (!std::isfinite(loss))
      throw ProbeError("probe training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) +
                       ", learning rate " + std::to_string(config.learning_rate) + ")");
    double lr = config.learning_rate;
    if (config.cosine_decay) {
      const double progress = static_cast<double>(step - 1) / static_cast<double>(config.steps);
      lr *= 0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      p.theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
    }
    if (step % config.eval_every == 0 || step == config.steps) {
      const double val = validation(p, nullptr);
      if (!std::isfinite(val)) throw ProbeError("validation loss is not finite at step " + std::to_string(step));
      if (val < best_val) {
        best_val = val;
        best = p.theta;
        best_step = step;
      }
    }
  }
  p.theta = best;

  ProbeResult r;
  r.params = p;
  r.best_step = best_step;
  r.val_mse = validation(p, &r.val_errors);
  {
    double ss = 0.0;
    for (double e : r.val_errors) ss += (e - r.val_mse) * (e - r.val_mse);
    const double n = static_cast<double>(r.val_errors.size());
    r.val_stderr = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  }
  {
    Workspace w;
    double s = 0.0;
    for (std::size_t i = 0; i < z_train.size(); ++i) s += sample_error(p, z_train[i], train_targets[i], w);
    r.train_mse = s / static_cast<double>(z_train.size());
  }
  for (std::size_t k = 0; k < p.outputs; ++k) {
    double mean = 0.0, var = 0.0;
    for (const auto& t : val_targets) mean += t[k];
    mean /= static_cast<double>(val_targets.size());
    for (const auto& t : val_targets) var += (t[k] - mean) * (t[k] - mean);
    r.target_variance += var / static_cast<double>(val_targets.size());
  }
  r.target_variance /= static_cast<double>(p.outputs);
  r.attention = p.attention(positions);
  return r;
}

ProbeTarget parse_probe_target(const std::string& name) {
  if (name == "moments") return ProbeTarget::moments;
  if (name == "w_ols") return ProbeTarget::w_ols;
  if (name == "w_sgd") return ProbeTarget::w_sgd;
  throw ProbeError("unknown probe target \"" + name + "\"");
}

std::string to_string(ProbeTarget target) {
  switch (target) {
    case ProbeTarget::moments:
      return "moments";
    case ProbeTarget::w_ols:
      return "w_ols";
    case ProbeTarget::w_sgd:
      return "w_sgd";
  }
  return "?";
}

TraceSet generate_traces(const CompiledProgram& program, const TaskDistribution& dist, std::size_t examples,
                         std::size_t tasks, std::uint64_t seed, std::size_t workers) {
  if (program.program().token_dim != dist.d + 1) throw ProbeError("program dimension does not match the task dimension");
  TraceSet set;
  set.examples = examples;
  set.tasks.resize(tasks);
  set.traces.resize(tasks);
  parallel_for(tasks, workers, [&](std::size_t i) {
    set.tasks[i] = sample_task(dist, examples, 1, seed, i);
    const auto& t = set.tasks[i];
    set.traces[i] = program.interpreter().forward(encode_task(t.x, t.y, t.queries.row(0)));
  });
  return set;
}

RawProgram control_program(std::size_t d) { return program_sgd_step(d, Vector(d, 1.0), 0.0, 0.0); }

TraceSet make_control_traces(std::size_t d, std::size_t tasks, const TaskDistribution& probe_data, std::uint64_t seed,
                             std::size_t workers) {
  TaskDistribution dist = probe_data;
  dist.d = d;
  const CompiledProgram model(control_program(d), 3);
  return generate_traces(model, dist, 1, tasks, seed, workers);
}

Vector probe_target(ProbeTarget target, const RegressionTask& task, std::size_t n, double alpha, double lambda,
                    const Vector& w0) {
  if (n > task.x.rows()) throw ProbeError("prefix longer than the task context");
  const std::size_t d = task.x.cols();
  DenseMatrix x(n, d);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) x(r, c) = task.x(r, c);
  const std::span<const double> y(task.y.data(), n);
  switch (target) {
    case ProbeTarget::moments: {
      Vector m(d, 0.0);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) m[c] += x(r, c) * y[r];
      return m;
    }
    case ProbeTarget::w_ols:
      return solve_least_squares(x, y, 0.0);
    case ProbeTarget::w_sgd: {
      Vector w = w0.empty() ? Vector(d, 0.0) : w0;
      for (std::size_t r = 0; r < n; ++r) {
        const auto xr = x.row(r);
        const double err = dot(w, xr) - y[r];
        for (std::size_t c = 0; c < d; ++c) w[c] -= 2.0 * alpha * (xr[c] * err + lambda * w[c]);
      }
      return w;
    }
  }
  return {};
}

DenseMatrix prefix_layer(const HiddenTrace& trace, std::size_t layer, std::size_t n) {
  const DenseMatrix& full = trace.layer(layer);
  const std::size_t cols = std::min(full.cols(), 2 * n);
  DenseMatrix out(full.rows(), cols);
  for (std::size_t r = 0; r < full.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = full(r, c);
  return out;
}

std::vector<ProbeReportRow> probe_report(const TraceSet& traces, const ProbeStudy& study) {
  if (traces.traces.size() < study.train + study.validation)
    throw ProbeError("need " + std::to_string(study.train + study.validation) + " traces, have " +
                     std::to_string(traces.traces.size()));
  struct Job {
    std::size_t layer;
    ProbeTarget target;
    std::size_t n;
  };
  std::vector<Job> jobs;
  for (std::size_t layer : study.layers)
    for (ProbeTarget target : study.targets)
      for (std::size_t n : study.prefixes) {
        if (n == 0 || n > traces.examples) throw ProbeError("prefix " + std::to_string(n) + " outside 1.." +
                                                            std::to_string(traces.examples));
        jobs.push_back({layer, target, n});
      }
  std::vector<ProbeReportRow> rows(jobs.size());
  parallel_for(jobs.size(), study.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    std::vector<DenseMatrix> tl, vl;
    std::vector<Vector> tt, vt;
    for (std::size_t i = 0; i < study.train + study.validation; ++i) {
      DenseMatrix l = prefix_layer(traces.traces[i], job.layer, job.n);
      Vector t = probe_target(job.target, traces.tasks[i], job.n, study.alpha, study.lambda, study.w0);
      if (i < study.train) {
        tl.push_back(std::move(l));
        tt.push_back(std::move(t));
      } else {
        vl.push_back(std::move(l));
        vt.push_back(std::move(t));
      }
    }
    ProbeConfig config = study.config;
    config.seed = study.config.seed + j;
    const ProbeResult r = probe_train(tl, tt, vl, vt, config);
    ProbeReportRow& row = rows[j];
    row.layer = job.layer;
    row.target = to_string(job.target);
    row.n = job.n;
    row.head = to_string(config.head);
    row.val_mse = r.val_mse;
    row.val_stderr = r.val_stderr;
    row.target_variance = r.target_variance;
    row.normalized = r.target_variance > 0.0 ? r.val_mse / r.target_variance : 0.0;
    row.attention = r.attention;
  });
  return rows;
}

void write_probe_csv_header(std::ostream& out) {
  out << "model,layer,target,n,head,val_mse,val_stderr,target_variance,normalized_error,attention\n";
}

void write_probe_csv_row(std::ostream& out, const ProbeReportRow& row) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << row.model << ',' << row.layer << ',' << row.target << ',' << row.n << ',' << row.head << ',' << row.val_mse << ','
      << row.val_stderr << ',' << row.target_variance << ',' << row.normalized << ',';
  for (std::size_t i = 0; i < row.attention.size(); ++i) out << (i ? ";" : "") << row.attention[i];
  out << '\n';
  out.precision(old);
}

std::string program_hash(const RawProgram& program) {
  const std::string s = to_json(program).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

void write_trace_dump(const std::filesystem::path& path, const TraceSet& traces, const RawProgram& program,
                      std::uint64_t seed) {
  nlohmann::json j;
  j["format"] = kFormatVersion;
  j["program_hash"] = program_hash(program);
  j["program_kind"] = program.kind;
  j["seed"] = seed;
  j["examples"] = traces.examples;
  j["axes"] = {"layer", "timestep", "hidden"};
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < traces.traces.size(); ++i) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& state : traces.traces[i].states) layers.push_back(to_json(state.transpose()));
    items.push_back({{"task_id", traces.tasks[i].id}, {"states", std::move(layers)}});
  }
  j["traces"] = std::move(items);
  write_json_file(path, j);
}

}  // namespace rawicl
