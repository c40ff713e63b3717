#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rawicl/probe.hpp"

using namespace rawicl;

namespace {

std::vector<DenseMatrix> random_layers(std::mt19937_64& rng, std::size_t count, std::size_t h, std::size_t t) {
  std::vector<DenseMatrix> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(DenseMatrix::from_rows(oracle::random_matrix(rng, h, t)));
  return out;
}

std::vector<Vector> random_targets(std::mt19937_64& rng, std::size_t count, std::size_t k) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(oracle::random_vector(rng, k));
  return out;
}

ProbeConfig config_for(ProbeHead head, std::size_t width = 6) {
  ProbeConfig c;
  c.head = head;
  c.mlp_width = width;
  c.seed = 3;
  return c;
}

/// Planted task: the target is rows 0..1 of column `col`, scaled.
void planted(std::mt19937_64& rng, std::size_t count, std::size_t col, std::vector<DenseMatrix>& layers,
             std::vector<Vector>& targets) {
  layers = random_layers(rng, count, 6, 5);
  targets.clear();
  for (const auto& l : layers) targets.push_back({2.0 * l(0, col) - 0.5, l(1, col) + 0.25 * l(3, col)});
}

}  // namespace

TEST_CASE("analytic gradient agrees with finite differences") {
  std::mt19937_64 rng(71);
  const auto layers = random_layers(rng, 8, 5, 4);
  const auto targets = random_targets(rng, 8, 2);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  for (ProbeHead head : {ProbeHead::linear, ProbeHead::mlp}) {
    ProbeConfig cfg = config_for(head);
    cfg.projection = 3;
    ProbeParams p = init_probe(5, 4, 2, cfg);
    fit_standardization(p, layers, targets);
    for (double& v : p.theta) v += 0.3 * std::normal_distribution<double>(0.0, 1.0)(rng);
    Vector grad;
    probe_objective(p, layers, targets, idx, &grad, 0.05);
    std::uniform_int_distribution<std::size_t> pick(0, p.theta.size() - 1);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const std::size_t i = pick(rng);
      const double h = 1e-5;
      ProbeParams a = p, b = p;
      a.theta[i] += h;
      b.theta[i] -= h;
      const double fd = (probe_objective(a, layers, targets, idx, nullptr, 0.05) -
                         probe_objective(b, layers, targets, idx, nullptr, 0.05)) / (2.0 * h);
      const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      worst = std::max(worst, rel);
    }
    MESSAGE(to_string(head) << " head: worst relative gradient deviation " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("probe forward") {
  ProbeConfig cfg = config_for(ProbeHead::linear);
  ProbeParams p = init_probe(3, 4, 3, cfg);
  std::fill(p.theta.begin(), p.theta.end(), 0.0);
  const DenseMatrix layer{{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}};

  SUBCASE("zero head gives zero") {
    for (double v : probe_forward(p, layer)) CHECK(v == 0.0);
  }
  SUBCASE("one-hot scores read a single column") {
    for (std::size_t r = 0; r < 3; ++r) {
      p.theta[p.wv_offset() + r * 3 + r] = 1.0;
      p.theta[p.head_offset() + r * 3 + r] = 1.0;
    }
    for (std::size_t t = 0; t < 4; ++t) p.theta[t] = t == 2 ? 30.0 : -30.0;
    const Vector out = probe_forward(p, layer);
    for (std::size_t r = 0; r < 3; ++r) CHECK(out[r] == doctest::Approx(layer(r, 2)).epsilon(1e-12));
  }
  SUBCASE("attention is a distribution over the positions present") {
    std::mt19937_64 rng(72);
    for (std::size_t t = 0; t < 4; ++t) p.theta[t] = std::normal_distribution<double>(0.0, 3.0)(rng);
    for (std::size_t t = 1; t <= 4; ++t) {
      const Vector a = p.attention(t);
      CHECK(a.size() == t);
      double s = 0.0;
      for (double v : a) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(probe_forward(p, DenseMatrix(2, 4)), ProbeError);
    CHECK_THROWS_AS(probe_forward(p, DenseMatrix(3, 5)), ProbeError);
  }
}

TEST_CASE("zero targets train to zero loss") {
  std::mt19937_64 rng(73);
  const auto layers = random_layers(rng, 200, 4, 3);
  const std::vector<Vector> zeros(200, Vector{0.0, 0.0});
  ProbeConfig cfg = config_for(ProbeHead::linear);
  cfg.steps = 2000;
  cfg.learning_rate = 1e-2;
  const std::vector<DenseMatrix> tl(layers.begin(), layers.begin() + 150), vl(layers.begin() + 150, layers.end());
  const std::vector<Vector> tt(zeros.begin(), zeros.begin() + 150), vt(zeros.begin() + 150, zeros.end());
  const ProbeResult r = probe_train(tl, tt, vl, vt, cfg);
  CHECK(r.val_mse <= 1e-8);
  CHECK(r.train_mse <= 1e-8);
}

TEST_CASE("planted signal is recovered and located") {
  std::mt19937_64 rng(74);
  std::vector<DenseMatrix> layers;
  std::vector<Vector> targets;
  planted(rng, 1200, 2, layers, targets);
  const std::vector<DenseMatrix> tl(layers.begin(), layers.begin() + 1000), vl(layers.begin() + 1000, layers.end());
  const std::vector<Vector> tt(targets.begin(), targets.begin() + 1000), vt(targets.begin() + 1000, targets.end());
  // no decay here: the shrinkage would bias the recovered weights
  ProbeConfig cfg = config_for(ProbeHead::linear);
  cfg.steps = 3000;
  cfg.learning_rate = 1e-2;
  cfg.weight_decay = 0.0;
  const ProbeResult lin = probe_train(tl, tt, vl, vt, cfg);
  MESSAGE("planted linear probe: normalized error " << lin.val_mse / lin.target_variance << ", attention on column 2 "
                                                    << lin.attention[2]);
  CHECK(lin.val_mse / lin.target_variance <= 1e-3);
  CHECK(lin.attention[2] >= 0.9);

  ProbeConfig mcfg = config_for(ProbeHead::mlp, 32);
  mcfg.steps = 3000;
  mcfg.learning_rate = 1e-2;
  mcfg.weight_decay = 0.0;
  const ProbeResult mlp = probe_train(tl, tt, vl, vt, mcfg);
  MESSAGE("planted mlp probe: val mse " << mlp.val_mse << " vs linear " << lin.val_mse << " (stderr " << lin.val_stderr << ")");
  CHECK(mlp.val_mse <= lin.val_mse + 3.0 * std::max(lin.val_stderr, mlp.val_stderr) + 1e-3 * lin.target_variance);

  // same seed, same result
  const ProbeResult again = probe_train(tl, tt, vl, vt, cfg);
  CHECK(again.params.theta == lin.params.theta);
  CHECK(again.val_mse == lin.val_mse);
}

TEST_CASE("divergence is reported") {
  std::mt19937_64 rng(75);
  auto layers = random_layers(rng, 20, 3, 2);
  auto targets = random_targets(rng, 20, 1);
  targets[3][0] = std::nan("");
  ProbeConfig cfg = config_for(ProbeHead::linear);
  cfg.steps = 10;
  cfg.batch = 20;
  CHECK_THROWS_AS(probe_train(layers, targets, layers, targets, cfg), ProbeError);
}

TEST_CASE("targets and traces") {
  const TaskDistribution dist{2, 0.0, 1.0, 0.03};
  const RegressionTask task = sample_task(dist, 3, 1, 5, 0);
  const Vector m = probe_target(ProbeTarget::moments, task, 2, 0.25, 0.0, {});
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(m[c] == doctest::Approx(task.x(0, c) * task.y[0] + task.x(1, c) * task.y[1]).epsilon(1e-14));
  const Vector ols = probe_target(ProbeTarget::w_ols, task, 2, 0.25, 0.0, {});
  for (std::size_t c = 0; c < 2; ++c) CHECK(ols[c] == doctest::Approx(task.w[c]).epsilon(1e-8));
  oracle::Mat x(2, oracle::Vec(2));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) x[r][c] = task.x(r, c);
  const auto w = oracle::sgd_pass(x, {task.y[0], task.y[1]}, {0.1, 0.2}, 0.25, 0.1);
  const Vector sgd = probe_target(ProbeTarget::w_sgd, task, 2, 0.25, 0.1, {0.1, 0.2});
  for (std::size_t c = 0; c < 2; ++c) CHECK(sgd[c] == doctest::Approx(w[c]).epsilon(1e-14));
  CHECK_THROWS_AS(probe_target(ProbeTarget::moments, task, 4, 0.25, 0.0, {}), ProbeError);
  CHECK(parse_probe_target("w_ols") == ProbeTarget::w_ols);
  CHECK_THROWS_AS(parse_probe_target("w_gd"), ProbeError);

  const CompiledProgram prog(program_sgd_step(2, {}, 0.25, 0.0), 3);
  const TraceSet a = generate_traces(prog, dist, 1, 20, 9, 2), b = generate_traces(prog, dist, 1, 20, 9, 1);
  REQUIRE(a.traces.size() == 20);
  CHECK(a.traces[7].states.size() == 10);
  for (std::size_t i = 0; i < 20; ++i) CHECK(a.traces[i].output() == b.traces[i].output());
  const DenseMatrix pre = prefix_layer(a.traces[0], 7, 1);
  CHECK(pre.cols() == 2);
  CHECK(pre.rows() == prog.layout().hidden);

  const TraceSet control = make_control_traces(2, 10, dist, 9);
  CHECK(control.traces.size() == 10);
  // the control model ignores the context: its output is 1^T x_query
  for (std::size_t i = 0; i < 10; ++i) {
    const RegressionTask& t = control.tasks[i];
    const double want = t.queries(0, 0) + t.queries(0, 1);
    CHECK(control.traces[i].output()(control_program(2).output_row, 2) == doctest::Approx(want).epsilon(1e-5));
  }
}
