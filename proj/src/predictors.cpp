#include "rawicl/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rawicl {

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void check_shapes(const DenseMatrix& x, std::span<const double> y, std::span<const double> query) {
  if (x.rows() != y.size()) throw NumericError("context has " + std::to_string(x.rows()) + " inputs but " +
                                               std::to_string(y.size()) + " labels");
  if (x.rows() > 0 && x.cols() != query.size()) throw NumericError("query dimension does not match context");
}

double predict_linear(const Vector& w, std::span<const double> query) {
  if (w.size() != query.size()) throw NumericError("query dimension does not match weights");
  return dot(w, query);
}

}  // namespace

Vector ridge_weights(const DenseMatrix& x, std::span<const double> y, double lambda) {
  if (!(lambda >= 0.0)) throw NumericError("ridge lambda must be non-negative");
  return solve_least_squares(x, y, lambda);
}

double ridge_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, double lambda) {
  check_shapes(x, y, query);
  if (x.rows() == 0) return 0.0;
  return predict_linear(ridge_weights(x, y, lambda), query);
}

double ols_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query) {
  return ridge_predict(x, y, query, 0.0);
}

double bayes_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, double sigma2,
                     double tau2) {
  if (!(tau2 > 0.0)) throw NumericError("bayes predictor needs tau2 > 0");
  if (!(sigma2 >= 0.0)) throw NumericError("bayes predictor needs sigma2 >= 0");
  return ridge_predict(x, y, query, sigma2 / tau2);
}

double knn_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, KnnVariant variant,
                   std::size_t k) {
  check_shapes(x, y, query);
  const std::size_t n = x.rows();
  if (n == 0) throw NumericError("kNN needs at least one example");
  if (k == 0) throw NumericError("kNN needs k >= 1");
  std::vector<double> dist2(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < query.size(); ++c) {
      const double diff = x(i, c) - query[c];
      s += diff * diff;
    }
    dist2[i] = s;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist2[a] < dist2[b]; });
  const std::size_t m = std::min(k, n);
  if (variant == KnnVariant::uniform) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += y[order[i]];
    return s / static_cast<double>(m);
  }
  // Exact matches take all the weight, shared equally.
  std::size_t exact = 0;
  double exact_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (dist2[order[i]] == 0.0) {
      ++exact;
      exact_sum += y[order[i]];
    }
  if (exact > 0) return exact_sum / static_cast<double>(exact);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = 1.0 / dist2[order[i]];
    num += w * y[order[i]];
    den += w;
  }
  return num / den;
}

Vector sgd_one_pass_weights(const DenseMatrix& x, std::span<const double> y, double alpha, double lambda) {
  const std::size_t d = x.cols();
  Vector w(d, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const double err = dot(w, xi) - y[i];
    for (std::size_t c = 0; c < d; ++c) w[c] -= 2.0 * alpha * (xi[c] * err + lambda * w[c]);
  }
  return w;
}

double sgd_one_pass_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                            double alpha, double lambda) {
  check_shapes(x, y, query);
  if (x.rows() == 0) return 0.0;
  return predict_linear(sgd_one_pass_weights(x, y, alpha, lambda), query);
}

Vector gd_one_step_weights(const DenseMatrix& x, std::span<const double> y, double alpha, double lambda) {
  (void)lambda;  // lambda w0 vanishes at w0 = 0
  Vector w(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) w[c] += 2.0 * alpha * x(i, c) * y[i];
  return w;
}

double gd_one_step_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                           double alpha, double lambda) {
  check_shapes(x, y, query);
  if (x.rows() == 0) return 0.0;
  return predict_linear(gd_one_step_weights(x, y, alpha, lambda), query);
}

RidgePredictor::RidgePredictor(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0)) throw PredictorConfigError("ridge lambda must be non-negative");
}
std::string RidgePredictor::name() const { return lambda_ == 0.0 ? "ols" : "ridge(" + fmt(lambda_) + ")"; }
double RidgePredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                               const QueryKey&) const {
  return ridge_predict(x, y, query, lambda_);
}
std::optional<Vector> RidgePredictor::weights(const DenseMatrix& x, std::span<const double> y) const {
  return ridge_weights(x, y, lambda_);
}

BayesPredictor::BayesPredictor(double sigma2, double tau2) : sigma2_(sigma2), tau2_(tau2) {
  if (!(tau2 > 0.0)) throw PredictorConfigError("bayes predictor needs tau2 > 0");
  if (!(sigma2 >= 0.0)) throw PredictorConfigError("bayes predictor needs sigma2 >= 0");
}
std::string BayesPredictor::name() const { return "bayes(" + fmt(sigma2_) + "," + fmt(tau2_) + ")"; }
double BayesPredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                               const QueryKey&) const {
  return bayes_predict(x, y, query, sigma2_, tau2_);
}
std::optional<Vector> BayesPredictor::weights(const DenseMatrix& x, std::span<const double> y) const {
  return ridge_weights(x, y, sigma2_ / tau2_);
}

KnnPredictor::KnnPredictor(KnnVariant variant, std::size_t k) : variant_(variant), k_(k) {
  if (k == 0) throw PredictorConfigError("kNN needs k >= 1");
}
std::string KnnPredictor::name() const {
  return std::string(variant_ == KnnVariant::uniform ? "knn_uniform" : "knn_weighted") +
         (k_ == 3 ? "" : "(" + std::to_string(k_) + ")");
}
double KnnPredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                             const QueryKey&) const {
  return knn_predict(x, y, query, variant_, k_);
}

SgdOnePassPredictor::SgdOnePassPredictor(double alpha, double lambda) : alpha_(alpha), lambda_(lambda) {}
std::string SgdOnePassPredictor::name() const { return "sgd_one_pass(" + fmt(alpha_) + "," + fmt(lambda_) + ")"; }
double SgdOnePassPredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                                    const QueryKey&) const {
  return sgd_one_pass_predict(x, y, query, alpha_, lambda_);
}
std::optional<Vector> SgdOnePassPredictor::weights(const DenseMatrix& x, std::span<const double> y) const {
  return sgd_one_pass_weights(x, y, alpha_, lambda_);
}

GdOneStepPredictor::GdOneStepPredictor(double alpha, double lambda) : alpha_(alpha), lambda_(lambda) {}
std::string GdOneStepPredictor::name() const { return "gd_one_step(" + fmt(alpha_) + "," + fmt(lambda_) + ")"; }
double GdOneStepPredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                                   const QueryKey&) const {
  return gd_one_step_predict(x, y, query, alpha_, lambda_);
}
std::optional<Vector> GdOneStepPredictor::weights(const DenseMatrix& x, std::span<const double> y) const {
  return gd_one_step_weights(x, y, alpha_, lambda_);
}

CompiledPredictor::CompiledPredictor(std::shared_ptr<const CompiledProgram> program, std::size_t examples,
                                     std::string name)
    : program_(std::move(program)), examples_(examples), name_(std::move(name)) {}

double CompiledPredictor::predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                                  const QueryKey&) const {
  if (x.rows() != examples_)
    throw NumericError(name_ + " is compiled for " + std::to_string(examples_) + " examples, got " +
                       std::to_string(x.rows()));
  return program_->predict(x, y, query);
}

void write_prediction_dump(const std::filesystem::path& path, const DumpHeader& header,
                           const std::vector<DumpRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json h = {{"type", "header"}, {"d", header.d}, {"sigma2", header.sigma2}, {"tau2", header.tau2},
                      {"seed", header.seed}};
  out << h.dump() << '\n';
  for (const auto& r : records) {
    nlohmann::json j = {{"task_id", r.key.task_id},
                        {"n_context", r.key.n_context},
                        {"query_index", r.key.query_index},
                        {"prediction", r.prediction}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::shared_ptr<DumpPredictor> DumpPredictor::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PredictorConfigError("cannot open prediction dump " + path.string());
  std::string line;
  std::optional<DumpHeader> header;
  std::map<QueryKey, double> table;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.value("type", "") == "header") {
        DumpHeader h;
        h.d = j.at("d").get<std::size_t>();
        h.sigma2 = j.at("sigma2").get<double>();
        h.tau2 = j.at("tau2").get<double>();
        h.seed = j.at("seed").get<std::uint64_t>();
        header = h;
        continue;
      }
      QueryKey key{j.at("task_id").get<std::uint64_t>(), j.at("n_context").get<std::size_t>(),
                   j.value("query_index", std::size_t{0})};
      table[key] = j.at("prediction").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw PredictorConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw PredictorConfigError(path.string() + ": missing header record");
  return std::make_shared<DumpPredictor>(*header, std::move(table), "dump(" + path.filename().string() + ")");
}

DumpPredictor::DumpPredictor(DumpHeader header, std::map<QueryKey, double> table, std::string name)
    : header_(header), table_(std::move(table)), name_(std::move(name)) {}

double DumpPredictor::predict(const DenseMatrix&, std::span<const double>, std::span<const double>,
                              const QueryKey& key) const {
  const auto it = table_.find(key);
  if (it == table_.end())
    throw std::out_of_range(name_ + " has no prediction for task " + std::to_string(key.task_id) + ", n=" +
                            std::to_string(key.n_context) + ", query " + std::to_string(key.query_index));
  return it->second;
}

PredictorPtr make_predictor(const nlohmann::json& spec, double sigma2, double tau2) {
  nlohmann::json j = spec.is_string() ? nlohmann::json{{"name", spec.get<std::string>()}} : spec;
  if (!j.is_object() || !j.contains("name") || !j.at("name").is_string())
    throw PredictorConfigError("predictor spec needs a \"name\"");
  const std::string name = j.at("name").get<std::string>();
  auto num = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw PredictorConfigError(std::string("predictor field ") + key + " must be a number");
    return j.at(key).get<double>();
  };
  if (name == "ols") return std::make_shared<RidgePredictor>(0.0);
  if (name == "ridge") return std::make_shared<RidgePredictor>(num("lambda", 0.0));
  if (name == "bayes") return std::make_shared<BayesPredictor>(num("sigma2", sigma2), num("tau2", tau2));
  if (name == "knn_uniform" || name == "knn_weighted")
    return std::make_shared<KnnPredictor>(name == "knn_uniform" ? KnnVariant::uniform : KnnVariant::weighted,
                                          static_cast<std::size_t>(num("k", 3)));
  if (name == "sgd_one_pass") return std::make_shared<SgdOnePassPredictor>(num("alpha", 0.25), num("lambda", 0.0));
  if (name == "gd_one_step") return std::make_shared<GdOneStepPredictor>(num("alpha", 0.25), num("lambda", 0.0));
  if (name == "dump") {
    if (!j.contains("path")) throw PredictorConfigError("dump predictor needs a \"path\"");
    return DumpPredictor::load(j.at("path").get<std::string>());
  }
  throw PredictorConfigError("unknown predictor \"" + name + "\"");
}

}  // namespace rawicl
