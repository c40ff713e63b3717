#include "rawicl/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

#include "rawicl/parallel.hpp"

namespace rawicl {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Summary {
  double mean = 0.0;
  double stderr_value = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stderr_value = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

MetricReport make_report(std::string metric, const Predictor& a1, const Predictor* a2, std::string context,
                         const std::vector<double>& per_task, double scale, bool normalized, const MonteCarlo& mc) {
  const Summary s = summarize(per_task);
  MetricReport r;
  r.metric = std::move(metric);
  r.a1 = a1.name();
  r.a2 = a2 ? a2->name() : "";
  r.context = std::move(context);
  r.raw = s.mean;
  r.value = s.mean * scale;
  r.stderr_value = s.stderr_value * scale;
  r.samples = per_task.size();
  r.normalized = normalized;
  r.seed = mc.seed;
  return r;
}

std::vector<std::size_t> underdetermined(std::size_t d) {
  std::vector<std::size_t> ns;
  for (std::size_t n = 1; n + 1 <= d; ++n) ns.push_back(n);
  if (ns.empty()) ns.push_back(1);
  return ns;
}

std::span<const double> query_row(const RegressionTask& t, std::size_t q) { return t.queries.row(q); }

/// Mean over queries of (a1 - a2)^2 for one task.
double task_spd(const Predictor& a1, const Predictor& a2, const RegressionTask& t, std::size_t n) {
  double s = 0.0;
  for (std::size_t q = 0; q < t.queries.rows(); ++q) {
    const QueryKey key{t.id, n, q};
    const double diff = a1.predict(t.x, t.y, query_row(t, q), key) - a2.predict(t.x, t.y, query_row(t, q), key);
    s += diff * diff;
  }
  return s / static_cast<double>(t.queries.rows());
}

}  // namespace

std::mt19937_64 task_stream(std::uint64_t seed, std::uint64_t task, std::uint64_t stream) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  state = h ^ task;
  h = splitmix64(state);
  state = h ^ stream;
  return std::mt19937_64(splitmix64(state));
}

RegressionTask sample_task(const TaskDistribution& dist, std::size_t n_context, std::size_t n_queries,
                           std::uint64_t seed, std::uint64_t task_id) {
  if (dist.d == 0) throw NumericError("task dimension must be positive");
  if (dist.tau2 < 0.0 || dist.sigma2 < 0.0) throw NumericError("variances must be non-negative");
  RegressionTask t;
  t.id = task_id;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double tau = std::sqrt(dist.tau2), sigma = std::sqrt(dist.sigma2);

  auto w_rng = task_stream(seed, task_id, 0);
  t.w.resize(dist.d);
  for (double& v : t.w) v = tau * normal(w_rng);

  auto q_rng = task_stream(seed, task_id, 1);
  t.queries = DenseMatrix(n_queries, dist.d);
  t.query_y.resize(n_queries);
  for (std::size_t q = 0; q < n_queries; ++q) {
    for (std::size_t c = 0; c < dist.d; ++c) t.queries(q, c) = dist.x_scale * normal(q_rng);
    t.query_y[q] = dot(t.w, t.queries.row(q)) + sigma * normal(q_rng);
  }

  auto x_rng = task_stream(seed, task_id, 2);
  t.x = DenseMatrix(n_context, dist.d);
  t.y.resize(n_context);
  for (std::size_t i = 0; i < n_context; ++i) {
    for (std::size_t c = 0; c < dist.d; ++c) t.x(i, c) = dist.x_scale * normal(x_rng);
    t.y[i] = dot(t.w, t.x.row(i)) + sigma * normal(x_rng);
  }
  return t;
}

MetricReport spd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, std::size_t n_context,
                 const MonteCarlo& mc, bool normalize) {
  std::vector<double> per_task(mc.tasks, 0.0);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    const RegressionTask t = sample_task(dist, n_context, mc.queries, mc.seed, i);
    per_task[i] = task_spd(a1, a2, t, n_context);
  });
  const double scale = normalize ? 1.0 / static_cast<double>(dist.d) : 1.0;
  return make_report("spd", a1, &a2, "n=" + std::to_string(n_context), per_task, scale, normalize, mc);
}

ImpliedFit implied_weights(const Predictor& a, const DenseMatrix& x, std::span<const double> y,
                           const DenseMatrix& pool, std::uint64_t task_id, bool force_fit) {
  ImpliedFit fit;
  if (!force_fit) {
    if (auto w = a.weights(x, y)) {
      fit.w = std::move(*w);
      fit.exact = true;
      return fit;
    }
  }
  Vector pred(pool.rows());
  for (std::size_t q = 0; q < pool.rows(); ++q) pred[q] = a.predict(x, y, pool.row(q), {task_id, x.rows(), q});
  fit.w = solve_least_squares(pool, pred, 0.0);
  double mean = 0.0;
  for (double p : pred) mean += p;
  mean /= static_cast<double>(pred.size());
  double ss_res = 0.0, ss_tot = 0.0, ss = 0.0;
  for (std::size_t q = 0; q < pool.rows(); ++q) {
    const double r = pred[q] - dot(fit.w, pool.row(q));
    ss_res += r * r;
    ss_tot += (pred[q] - mean) * (pred[q] - mean);
    ss += pred[q] * pred[q];
  }
  // A constant prediction has no variance to explain; count it as no fit.
  // (Rounding in the mean leaves ss_tot at ~1e-32 relative, not exactly 0.)
  if (ss_tot <= 1e-20 * ss)
    fit.r_squared = ss_res == 0.0 ? 1.0 : 0.0;
  else
    fit.r_squared = 1.0 - ss_res / ss_tot;
  return fit;
}

MetricReport ilwd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, std::size_t n_context,
                  const MonteCarlo& mc, std::size_t pool_size, bool normalize) {
  std::vector<double> per_task(mc.tasks, 0.0);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    const RegressionTask t = sample_task(dist, n_context, pool_size, mc.seed, i);
    const ImpliedFit f1 = implied_weights(a1, t.x, t.y, t.queries, t.id);
    const ImpliedFit f2 = implied_weights(a2, t.x, t.y, t.queries, t.id);
    double s = 0.0;
    for (std::size_t c = 0; c < dist.d; ++c) s += (f1.w[c] - f2.w[c]) * (f1.w[c] - f2.w[c]);
    per_task[i] = s;
  });
  const double scale = normalize ? 1.0 / static_cast<double>(dist.d) : 1.0;
  return make_report("ilwd", a1, &a2, "n=" + std::to_string(n_context), per_task, scale, normalize, mc);
}

MetricReport mspd(const Predictor& a1, const Predictor& a2, const TaskDistribution& dist, const MonteCarlo& mc) {
  const auto ns = underdetermined(dist.d);
  std::vector<double> per_task(mc.tasks, 0.0);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    const RegressionTask full = sample_task(dist, ns.back(), mc.queries, mc.seed, i);
    double s = 0.0;
    for (std::size_t n : ns) {
      RegressionTask t = full;
      t.x = DenseMatrix(n, dist.d);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dist.d; ++c) t.x(r, c) = full.x(r, c);
      t.y.assign(full.y.begin(), full.y.begin() + static_cast<std::ptrdiff_t>(n));
      s += task_spd(a1, a2, t, n);
    }
    per_task[i] = s / static_cast<double>(ns.size());
  });
  return make_report("mspd", a1, &a2, "underdetermined", per_task, 1.0 / static_cast<double>(dist.d), true, mc);
}

MetricReport r_squared_linearity(const Predictor& a, const TaskDistribution& dist, std::size_t n_context,
                                 const MonteCarlo& mc, std::size_t pool_size) {
  std::vector<double> per_task(mc.tasks, 0.0);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    const RegressionTask t = sample_task(dist, n_context, pool_size, mc.seed, i);
    per_task[i] = implied_weights(a, t.x, t.y, t.queries, t.id, true).r_squared;
  });
  return make_report("r2", a, nullptr, "n=" + std::to_string(n_context), per_task, 1.0, false, mc);
}

MetricReport bayes_risk(const Predictor& a, const TaskDistribution& dist, const MonteCarlo& mc) {
  const auto ns = underdetermined(dist.d);
  std::vector<double> per_task(mc.tasks, 0.0);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    const RegressionTask full = sample_task(dist, ns.back(), mc.queries, mc.seed, i);
    double s = 0.0;
    for (std::size_t n : ns) {
      DenseMatrix x(n, dist.d);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dist.d; ++c) x(r, c) = full.x(r, c);
      const std::span<const double> y(full.y.data(), n);
      double e = 0.0;
      for (std::size_t q = 0; q < full.queries.rows(); ++q) {
        const double diff = full.query_y[q] - a.predict(x, y, full.queries.row(q), {full.id, n, q});
        e += diff * diff;
      }
      s += e / static_cast<double>(full.queries.rows());
    }
    per_task[i] = s / static_cast<double>(ns.size());
  });
  return make_report("bayes_risk", a, nullptr, "underdetermined", per_task, 1.0, false, mc);
}

std::vector<DumpRecord> collect_predictions(const Predictor& a, const TaskDistribution& dist,
                                            const std::vector<std::size_t>& n_context, const MonteCarlo& mc) {
  std::vector<std::vector<DumpRecord>> per_task(mc.tasks);
  parallel_for(mc.tasks, mc.workers, [&](std::size_t i) {
    for (std::size_t n : n_context) {
      const RegressionTask t = sample_task(dist, n, mc.queries, mc.seed, i);
      for (std::size_t q = 0; q < t.queries.rows(); ++q) {
        const QueryKey key{t.id, n, q};
        per_task[i].push_back({key, a.predict(t.x, t.y, t.queries.row(q), key)});
      }
    }
  });
  std::vector<DumpRecord> out;
  for (auto& v : per_task) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_csv_header(std::ostream& out) { out << "metric,a1,a2,context,value,stderr,raw,samples,normalized,seed\n"; }

void write_csv_row(std::ostream& out, const MetricReport& r) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << r.metric << ',' << quote(r.a1) << ',' << quote(r.a2) << ',' << r.context << ',' << r.value << ','
      << r.stderr_value << ',' << r.raw << ',' << r.samples << ',' << (r.normalized ? 1 : 0) << ',' << r.seed << '\n';
  out.precision(old);
}

}  // namespace rawicl
