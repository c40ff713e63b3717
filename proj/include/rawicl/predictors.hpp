#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>

#include <json.hpp>

#include "rawicl/numerics.hpp"
#include "rawicl/raw.hpp"

namespace rawicl {

/// Identifies one prediction inside a sampled experiment, so that predictors
/// backed by precomputed dumps can look their answer up.
struct QueryKey {
  std::uint64_t task_id = 0;
  std::size_t n_context = 0;
  std::size_t query_index = 0;

  friend auto operator<=>(const QueryKey&, const QueryKey&) = default;
};

enum class PredictorKind { closed_form_linear, procedural, external_dump };

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual PredictorKind kind() const = 0;
  /// x is n x d (one example per row), y has n entries.
  virtual double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                         const QueryKey& key) const = 0;
  /// The weight vector for closed-form linear predictors, nullopt otherwise.
  virtual std::optional<Vector> weights(const DenseMatrix& x, std::span<const double> y) const {
    (void)x;
    (void)y;
    return std::nullopt;
  }
};

using PredictorPtr = std::shared_ptr<const Predictor>;

// Plain functions (w0 = 0 wherever an initial weight is involved).
Vector ridge_weights(const DenseMatrix& x, std::span<const double> y, double lambda);
double ols_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query);
double ridge_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, double lambda);
double bayes_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, double sigma2,
                     double tau2);

enum class KnnVariant { uniform, weighted };
double knn_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query, KnnVariant variant,
                   std::size_t k = 3);

Vector sgd_one_pass_weights(const DenseMatrix& x, std::span<const double> y, double alpha, double lambda);
double sgd_one_pass_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                            double alpha, double lambda);
Vector gd_one_step_weights(const DenseMatrix& x, std::span<const double> y, double alpha, double lambda);
double gd_one_step_predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                           double alpha, double lambda);

/// Ridge regression; lambda = 0 is minimum-norm OLS.
class RidgePredictor final : public Predictor {
 public:
  explicit RidgePredictor(double lambda);
  std::string name() const override;
  PredictorKind kind() const override { return PredictorKind::closed_form_linear; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;
  std::optional<Vector> weights(const DenseMatrix& x, std::span<const double> y) const override;
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

/// Posterior-mean predictor for w ~ N(0, tau2 I), noise N(0, sigma2): ridge with lambda = sigma2 / tau2.
class BayesPredictor final : public Predictor {
 public:
  BayesPredictor(double sigma2, double tau2);
  std::string name() const override;
  PredictorKind kind() const override { return PredictorKind::closed_form_linear; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;
  std::optional<Vector> weights(const DenseMatrix& x, std::span<const double> y) const override;

 private:
  double sigma2_, tau2_;
};

class KnnPredictor final : public Predictor {
 public:
  explicit KnnPredictor(KnnVariant variant, std::size_t k = 3);
  std::string name() const override;
  PredictorKind kind() const override { return PredictorKind::procedural; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;

 private:
  KnnVariant variant_;
  std::size_t k_;
};

class SgdOnePassPredictor final : public Predictor {
 public:
  SgdOnePassPredictor(double alpha, double lambda);
  std::string name() const override;
  PredictorKind kind() const override { return PredictorKind::closed_form_linear; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;
  std::optional<Vector> weights(const DenseMatrix& x, std::span<const double> y) const override;

 private:
  double alpha_, lambda_;
};

class GdOneStepPredictor final : public Predictor {
 public:
  GdOneStepPredictor(double alpha, double lambda);
  std::string name() const override;
  PredictorKind kind() const override { return PredictorKind::closed_form_linear; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;
  std::optional<Vector> weights(const DenseMatrix& x, std::span<const double> y) const override;

 private:
  double alpha_, lambda_;
};

/// Runs a compiled program. Programs built for a fixed number of examples
/// only accept contexts of that size.
class CompiledPredictor final : public Predictor {
 public:
  CompiledPredictor(std::shared_ptr<const CompiledProgram> program, std::size_t examples, std::string name);
  std::string name() const override { return name_; }
  PredictorKind kind() const override { return PredictorKind::procedural; }
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;

 private:
  std::shared_ptr<const CompiledProgram> program_;
  std::size_t examples_;
  std::string name_;
};

// ---- Prediction dumps (JSON lines) -------------------------------------

struct DumpHeader {
  std::size_t d = 0;
  double sigma2 = 0.0;
  double tau2 = 1.0;
  std::uint64_t seed = 0;
  friend bool operator==(const DumpHeader&, const DumpHeader&) = default;
};

struct DumpRecord {
  QueryKey key;
  double prediction = 0.0;
};

/// First line: {"type":"header","d":..,"sigma2":..,"tau2":..,"seed":..};
/// then one {"task_id":..,"n_context":..,"query_index":..,"prediction":..} per line
/// (query_index is optional and defaults to 0).
void write_prediction_dump(const std::filesystem::path& path, const DumpHeader& header,
                           const std::vector<DumpRecord>& records);

class DumpPredictor final : public Predictor {
 public:
  static std::shared_ptr<DumpPredictor> load(const std::filesystem::path& path);
  DumpPredictor(DumpHeader header, std::map<QueryKey, double> table, std::string name);

  std::string name() const override { return name_; }
  PredictorKind kind() const override { return PredictorKind::external_dump; }
  /// Throws std::out_of_range when the dump has no record for `key`.
  double predict(const DenseMatrix& x, std::span<const double> y, std::span<const double> query,
                 const QueryKey& key) const override;
  const DumpHeader& header() const { return header_; }
  std::size_t size() const { return table_.size(); }

 private:
  DumpHeader header_;
  std::map<QueryKey, double> table_;
  std::string name_;
};

/// Unknown predictor name or bad parameters.
class PredictorConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds a predictor from a name ("ols", "ridge", "bayes", "knn_uniform",
/// "knn_weighted", "sgd_one_pass", "gd_one_step", "dump") or an object such as
/// {"name":"ridge","lambda":0.1}. `sigma2`/`tau2` are the defaults for "bayes".
PredictorPtr make_predictor(const nlohmann::json& spec, double sigma2 = 0.0, double tau2 = 1.0);

}  // namespace rawicl
