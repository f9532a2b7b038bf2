#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

/// Real-valued observed cells of a learners x questions x attempts tensor.
struct Observations {
  struct Entry {
    std::size_t learner, question, attempt;
    double value;
  };
  Dims dims;
  std::vector<Entry> entries;
  // Optional per-learner keys for the BPTF row-sampling streams; defaults to the row index.
  std::vector<std::uint64_t> learner_keys;
};

Observations observations(const PerformanceTensor& t);

/// Three factor matrices sharing rank r: learners x r, questions x r, attempts x r.
struct Factors {
  Eigen::MatrixXd learner;
  Eigen::MatrixXd question;
  Eigen::MatrixXd attempt;

  std::size_t rank() const { return static_cast<std::size_t>(learner.cols()); }
  Dims dims() const;
  /// Unclamped sum over r of the three factor entries' product.
  double product(std::size_t u, std::size_t j, std::size_t i) const;
};

struct TfConfig {
  std::size_t rank = 3;
  double lambda_reg = 0.01;
  double lambda_rank = 0.1;
  double learning_rate = 0.01;
  std::size_t epochs = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CpdConfig {
  std::size_t rank = 3;
  double lambda_reg = 0.01;
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  bool project_attempts = true;  // cumulative max down each attempt-factor column after a sweep

  void validate() const;
};

struct BptfConfig {
  std::size_t rank = 3;
  std::size_t gibbs_steps = 200;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TfConfig& c);
nlohmann::json to_json(const CpdConfig& c);
nlohmann::json to_json(const BptfConfig& c);
TfConfig tf_config_from_json(const nlohmann::json& j);
CpdConfig cpd_config_from_json(const nlohmann::json& j);
BptfConfig bptf_config_from_json(const nlohmann::json& j);

struct FactorModel {
  Factors factors;
  double lambda_reg = 0.0;
  double lambda_rank = 0.0;
};

struct CpdModel {
  Factors factors;
};

struct BptfModel {
  std::vector<Factors> samples;  // kept (post burn-in) draws
  std::vector<double> precision;
  std::size_t burn_in = 0;
};

double predict_cell(const FactorModel& m, std::size_t u, std::size_t j, std::size_t i);
double predict_cell(const CpdModel& m, std::size_t u, std::size_t j, std::size_t i);
/// Posterior mean of the per-sample products, clamped.
double predict_cell(const BptfModel& m, std::size_t u, std::size_t j, std::size_t i);

/// Squared-hinge penalty on prediction drops between consecutive attempts, summed over all cells.
double rank_violation(const Factors& f);

/// Sum over observed cells of (value - product)^2.
double observed_sse(const Factors& f, const Observations& obs);

FactorModel tf_train(const Observations& obs, const TfConfig& cfg);
FactorModel tf_train(const PerformanceTensor& t, const TfConfig& cfg);

/// One masked ALS sweep (learner, question, then attempt factors), optionally followed
/// by the attempt projection.
void als_sweep(Factors& f, const Observations& obs, double lambda_reg, bool project_attempts);
CpdModel cpd_train(const Observations& obs, const CpdConfig& cfg);
CpdModel cpd_train(const PerformanceTensor& t, const CpdConfig& cfg);

BptfModel bptf_train(const Observations& obs, const BptfConfig& cfg);
BptfModel bptf_train(const PerformanceTensor& t, const BptfConfig& cfg);

DenseTensor factor_impute(const FactorModel& m, const PerformanceTensor& t);
DenseTensor factor_impute(const CpdModel& m, const PerformanceTensor& t);
DenseTensor factor_impute(const BptfModel& m, const PerformanceTensor& t);

void save_factor_model(const FactorModel& m, const std::filesystem::path& dir, const std::string& name);
void save_factor_model(const CpdModel& m, const std::filesystem::path& dir, const std::string& name);
void save_factor_model(const BptfModel& m, const std::filesystem::path& dir, const std::string& name);
FactorModel load_tf_model(const std::filesystem::path& manifest);
CpdModel load_cpd_model(const std::filesystem::path& manifest);
BptfModel load_bptf_model(const std::filesystem::path& manifest);

}  // namespace sparsekt
