#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rawicl/metrics.hpp"

using namespace rawicl;

namespace {

/// A procedural predictor that is secretly linear with fixed weights.
class PlantedLinear final : public Predictor {
 public:
  explicit PlantedLinear(Vector w) : w_(std::move(w)) {}
  std::string name() const override { return "planted"; }
  PredictorKind kind() const override { return PredictorKind::procedural; }
  double predict(const DenseMatrix&, std::span<const double>, std::span<const double> q, const QueryKey&) const override {
    return dot(w_, q);
  }

 private:
  Vector w_;
};

oracle::Mat rows_of(const DenseMatrix& m) {
  oracle::Mat r(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) r[i].assign(m.row(i).begin(), m.row(i).end());
  return r;
}

MonteCarlo small_mc(std::size_t tasks, std::uint64_t seed = 5) {
  MonteCarlo mc;
  mc.tasks = tasks;
  mc.queries = 8;
  mc.seed = seed;
  mc.workers = 2;
  return mc;
}

std::vector<double> lambda_grid() {
  std::vector<double> g;
  for (int k = -6; k <= 6; ++k) g.push_back(std::ldexp(1.0, k));
  return g;
}

}  // namespace

TEST_CASE("task sampling") {
  const TaskDistribution dist{4, 0.1, 1.0, 1.0};
  const RegressionTask a = sample_task(dist, 3, 5, 11, 2), b = sample_task(dist, 6, 5, 11, 2);
  CHECK(a.w == b.w);
  CHECK(a.queries == b.queries);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::vector<double>(a.x.row(i).begin(), a.x.row(i).end()) == std::vector<double>(b.x.row(i).begin(), b.x.row(i).end()));
    CHECK(a.y[i] == b.y[i]);
  }
  const RegressionTask other = sample_task(dist, 3, 5, 11, 3);
  CHECK(other.w != a.w);
  CHECK(sample_task(dist, 3, 5, 12, 2).w != a.w);
  // noiseless labels are exactly w^T x
  const RegressionTask clean = sample_task({4, 0.0, 1.0, 1.0}, 3, 2, 1, 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(clean.y[i] == doctest::Approx(dot(clean.w, clean.x.row(i))).epsilon(1e-15));
}

TEST_CASE("spd basics") {
  const TaskDistribution dist{4, 0.25, 1.0, 1.0};
  const MonteCarlo mc = small_mc(64);
  const auto ols = make_predictor("ols");
  const auto knn = make_predictor("knn_uniform");
  CHECK(spd(*ols, *ols, dist, 2, mc).value == 0.0);
  CHECK(spd(*knn, *knn, dist, 5, mc).value == 0.0);
  const auto ridge = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", 0.25}});
  const auto bayes = make_predictor("bayes", 0.25, 1.0);
  CHECK(spd(*ridge, *bayes, dist, 3, mc).value == 0.0);
  const MetricReport ab = spd(*ols, *knn, dist, 3, mc), ba = spd(*knn, *ols, dist, 3, mc);
  CHECK(ab.value == ba.value);
  CHECK(ab.value > 0.0);
  CHECK(ab.raw == doctest::Approx(4.0 * ab.value).epsilon(1e-14));
  CHECK(ab.samples == 64);
}

TEST_CASE("spd matches a double loop over the same tasks") {
  const TaskDistribution dist{8, 0.0, 1.0, 1.0};
  const MonteCarlo mc = small_mc(16, 9);
  const auto ols = make_predictor("ols");
  const auto ridge = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", 0.1}});
  const MetricReport r = spd(*ols, *ridge, dist, 16, mc);
  double total = 0.0;
  for (std::size_t t = 0; t < 16; ++t) {
    const RegressionTask task = sample_task(dist, 16, 8, 9, t);
    const auto x = rows_of(task.x);
    const auto w_ols = oracle::ridge(x, task.y, 0.0);
    const auto w_ridge = oracle::ridge(x, task.y, 0.1);
    for (std::size_t q = 0; q < 8; ++q) {
      const oracle::Vec xq(task.queries.row(q).begin(), task.queries.row(q).end());
      const double diff = oracle::dot(w_ols, xq) - oracle::dot(w_ridge, xq);
      total += diff * diff;
    }
  }
  const double want = total / (16.0 * 8.0);
  CHECK(std::abs(r.raw - want) <= 1e-10 * std::max(1.0, want));
  CHECK(std::abs(r.value - want / 8.0) <= 1e-10 * std::max(1.0, want));
}

TEST_CASE("relaxed triangle inequality") {
  const TaskDistribution dist{4, 0.1, 1.0, 1.0};
  const MonteCarlo mc = small_mc(64);
  std::vector<PredictorPtr> ps{make_predictor("ols"), make_predictor("knn_uniform"), make_predictor("knn_weighted"),
                               make_predictor("sgd_one_pass"), make_predictor("gd_one_step"),
                               make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", 1.0}})};
  for (std::size_t n : {2, 6}) {
    std::vector<std::vector<double>> s(ps.size(), std::vector<double>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < ps.size(); ++j) s[i][j] = spd(*ps[i], *ps[j], dist, n, mc).value;
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < ps.size(); ++j) {
        CHECK(s[i][j] >= 0.0);
        CHECK(s[i][j] == s[j][i]);
        for (std::size_t k = 0; k < ps.size(); ++k) CHECK(s[i][j] <= 2.0 * s[i][k] + 2.0 * s[k][j] + 1e-15);
      }
  }
}

TEST_CASE("implied weights") {
  std::mt19937_64 rng(61);
  const DenseMatrix x = DenseMatrix::from_rows(oracle::random_matrix(rng, 3, 4));
  const Vector y = oracle::random_vector(rng, 3);
  const DenseMatrix pool = DenseMatrix::from_rows(oracle::random_matrix(rng, 8, 4));

  const auto ridge = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", 0.5}});
  const ImpliedFit exact = implied_weights(*ridge, x, y, pool, 0);
  CHECK(exact.exact);
  CHECK(exact.w == *ridge->weights(x, y));

  const Vector planted{0.3, -1.2, 0.05, 2.0};
  const ImpliedFit fit = implied_weights(PlantedLinear(planted), x, y, pool, 0);
  CHECK_FALSE(fit.exact);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(fit.w[c] - planted[c]) <= 1e-8);
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-10));

  const DenseMatrix x6 = DenseMatrix::from_rows(oracle::random_matrix(rng, 6, 4));
  const ImpliedFit knn = implied_weights(*make_predictor("knn_uniform"), x6, oracle::random_vector(rng, 6), pool, 0);
  CHECK(knn.r_squared < 1.0);
}

TEST_CASE("ilwd") {
  const TaskDistribution dist{4, 0.0, 1.0, 1.0};
  const MonteCarlo mc = small_mc(64);
  const auto ols = make_predictor("ols");
  const auto knn = make_predictor("knn_weighted");
  CHECK(ilwd(*ols, *ols, dist, 3, mc, 8).value == 0.0);
  CHECK(ilwd(*knn, *knn, dist, 3, mc, 8).value == 0.0);
  const auto tiny = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", 1e-8}});
  CHECK(ilwd(*ols, *tiny, dist, 6, mc, 8).value <= 1e-10);
  CHECK(ilwd(*ols, *knn, dist, 5, mc, 8).value == ilwd(*knn, *ols, dist, 5, mc, 8).value);
  CHECK(ilwd(*ols, *knn, dist, 5, mc, 8).value > 0.0);
}

TEST_CASE("r squared linearity") {
  const TaskDistribution dist{4, 0.0, 1.0, 1.0};
  const MonteCarlo mc = small_mc(32);
  CHECK(r_squared_linearity(PlantedLinear({1.0, 2.0, 3.0, 4.0}), dist, 3, mc, 8).value ==
        doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r_squared_linearity(*make_predictor("sgd_one_pass"), dist, 3, mc, 8).value == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r_squared_linearity(*make_predictor("knn_uniform"), dist, 1, mc, 8).value < 1.0);

  // the compiled one-step program, on inputs inside its accuracy domain
  auto compiled = std::make_shared<const CompiledProgram>(program_sgd_step(4, {}, 0.25, 0.0), 3);
  const CompiledPredictor cp(compiled, 1, "compiled");
  const double r2 = r_squared_linearity(cp, {4, 0.0, 1.0, 0.03}, 1, mc, 8).value;
  CHECK(r2 >= 0.99);
}

TEST_CASE("mspd over the ridge grid has its minimum at the prior ratio") {
  const auto grid = lambda_grid();
  const MonteCarlo mc = small_mc(256, 3);
  for (auto [s2, t2] : {std::pair{0.25, 1.0}, std::pair{1.0, 1.0}, std::pair{1.0, 0.25}}) {
    const TaskDistribution dist{4, s2, t2, 1.0};
    const auto bayes = make_predictor("bayes", s2, t2);
    std::vector<double> values;
    for (double l : grid) {
      const auto ridge = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", l}});
      values.push_back(mspd(*ridge, *bayes, dist, mc).value);
    }
    const std::size_t best = std::min_element(values.begin(), values.end()) - values.begin();
    CAPTURE(s2 / t2);
    CHECK(grid[best] == s2 / t2);
    CHECK(values[best] == 0.0);
    for (std::size_t i = best + 1; i < grid.size(); ++i) CHECK(values[i] > values[i - 1]);
    for (std::size_t i = best; i-- > 0;) CHECK(values[i] > values[i + 1]);
  }
  const auto ols = make_predictor("ols");
  CHECK(mspd(*ols, *ols, {4, 0.0, 1.0, 1.0}, mc).value == 0.0);
}

TEST_CASE("bayes risk is lowest for the posterior mean") {
  const TaskDistribution dist{4, 1.0, 1.0, 1.0};
  const MonteCarlo mc = small_mc(1024, 4);
  const double at_prior = bayes_risk(*make_predictor("bayes", 1.0, 1.0), dist, mc).value;
  for (double l : {0.125, 0.5, 2.0, 8.0}) {
    const auto ridge = make_predictor(nlohmann::json{{"name", "ridge"}, {"lambda", l}});
    CHECK(bayes_risk(*ridge, dist, mc).value > at_prior);
  }
}

TEST_CASE("reports are reproducible and independent of the worker count") {
  const TaskDistribution dist{4, 0.1, 1.0, 1.0};
  MonteCarlo a = small_mc(100, 17), b = a;
  b.workers = 1;
  const auto ols = make_predictor("ols");
  const auto knn = make_predictor("knn_uniform");
  const MetricReport r1 = spd(*ols, *knn, dist, 3, a), r2 = spd(*ols, *knn, dist, 3, b), r3 = spd(*ols, *knn, dist, 3, a);
  CHECK(r1.value == r2.value);
  CHECK(r1.stderr_value == r2.stderr_value);
  CHECK(r1.value == r3.value);
  MonteCarlo c = a;
  c.seed = 18;
  CHECK(spd(*ols, *knn, dist, 3, c).value != r1.value);

  std::ostringstream o1, o2;
  write_csv_header(o1);
  write_csv_row(o1, r1);
  write_csv_header(o2);
  write_csv_row(o2, r2);
  CHECK(o1.str() == o2.str());
  CHECK(o1.str().rfind("metric,a1,a2,context,value,stderr,raw,samples,normalized,seed\n", 0) == 0);
}
