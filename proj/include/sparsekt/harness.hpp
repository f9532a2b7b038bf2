#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsekt/bkt.hpp"
#include "sparsekt/divergence.hpp"
#include "sparsekt/factor.hpp"
#include "sparsekt/gain.hpp"
#include "sparsekt/gan.hpp"
#include "sparsekt/ingest.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

/// Raised for invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- synthetic cohorts ----

struct SynthSpec {
  Dims dims{100, 10, 5};
  std::vector<BktParams> params;  // one per question; empty means drawn from the seed
  double mcar_rate = 0.0;
  double dropout_hazard = 0.0;  // chance of leaving before each attempt after the first
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

/// Ground-truth parameters used when a spec lists none:
/// L0 in [0.1, 0.5], T in [0.1, 0.4], G in [0.1, 0.3], S in [0.05, 0.2].
std::vector<BktParams> draw_synth_params(std::size_t questions, std::uint64_t seed);

/// Simulates BKT per learner and question, deletes records by MCAR coin flips and
/// truncates each series at its first dropout. Learner ids "u0001", question ids "q001".
std::vector<InteractionRecord> synth_generate(const SynthSpec& spec);

// ---- configuration ----

inline constexpr std::array<const char*, 7> kModelNames{"gain", "gan", "infogan", "ambientgan", "tf", "cpd", "bptf"};

struct ExperimentConfig {
  std::optional<std::string> dataset;  // CSV interaction log
  std::optional<SynthSpec> synth;
  std::vector<std::string> models{"gain"};
  std::size_t max_attempt_first = 1;
  std::size_t max_attempt_last = 5;
  std::size_t folds = 5;
  std::size_t cycles = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  GainConfig gain;
  GanConfig gan;
  GanConfig infogan;
  GanConfig ambientgan;
  TfConfig tf;
  CpdConfig cpd;
  BptfConfig bptf;

  std::string comparison_model = "gain";  // imputer behind bkt and divergence
  BktConfig bkt;
  double binarize_threshold = 0.5;
  std::size_t bootstrap = 100;

  std::string output_dir = "out";

  void validate() const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& c);
/// Throws ConfigError on unknown keys, bad values or invalid model blocks.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// "a..b" -> {a, b}; a single number means a..a.
std::pair<std::size_t, std::size_t> parse_attempt_range(const std::string& s);

/// Tensor over attempts 1..max_attempt_last from the dataset or synthetic spec.
TensorBuild load_experiment_data(const ExperimentConfig& cfg);

// ---- imputers ----

using ImputeFn = std::function<DenseTensor(const PerformanceTensor& train, std::uint64_t seed)>;

struct Imputer {
  std::string name;
  ImputeFn fn;
};

/// Library models by name plus the reference predictors "constant" (0.5 everywhere
/// unobserved) and "observed_mean".
Imputer make_imputer(const std::string& name, const ExperimentConfig& cfg);

/// Observed cells copied, every other cell set to `fill`.
DenseTensor fill_missing(const PerformanceTensor& t, double fill);

/// RMSE between imputed probabilities and held-out binary outcomes.
double holdout_rmse(const DenseTensor& imputed, std::span<const HeldOutCell> test);

// ---- imputation experiment ----

struct RunRecord {
  std::string model;
  std::size_t max_attempt = 0;
  std::size_t cycle = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::optional<double> rmse;  // empty when the run failed
  std::string error;
};

struct ModelSummary {
  std::string model;
  std::size_t max_attempt = 0;
  double mean_rmse = 0.0;
  double std_error = 0.0;  // sample sd / sqrt(successful runs)
  std::size_t runs = 0;
  std::size_t failures = 0;
};

struct RunReport {
  std::vector<RunRecord> runs;  // sorted by (model order, max_attempt, cycle, fold)
  std::vector<ModelSummary> summary;
  SparsityProfile sparsity;
  std::vector<std::uint64_t> fold_seeds;  // per (max_attempt, cycle)
};

/// For every model and max attempt: truncate, re-fold per cycle, train on each
/// fold's complement and score the held-out cells. Failures are recorded per run.
RunReport run_imputation_experiment(const PerformanceTensor& t, std::span<const Imputer> models,
                                    const ExperimentConfig& cfg);

std::uint64_t fold_seed(const ExperimentConfig& cfg, std::size_t max_attempt, std::size_t cycle);
std::uint64_t run_seed(const ExperimentConfig& cfg, const std::string& model, std::size_t max_attempt,
                       std::size_t cycle, std::size_t fold);

struct AttemptSweep {
  SparsityProfile sparsity;
  std::vector<double> increase_rate;
  RunReport report;
};

AttemptSweep run_attempt_sweep(const PerformanceTensor& t, std::span<const Imputer> models,
                               const ExperimentConfig& cfg);

// ---- BKT comparison ----

struct BktComparisonRow {
  std::string dataset;
  std::size_t max_attempt = 0;
  double original_rmse = 0.0;
  double imputed_rmse = 0.0;
  double difference = 0.0;  // imputed - original
};

struct BktComparison {
  std::vector<BktComparisonRow> rows;
  std::optional<TTestResult> ttest;
  std::string ttest_error;
};

/// Per max attempt: BKT on the observed cells of the truncated tensor against BKT on
/// the binarized imputation, each scored on its own data.
BktComparison run_bkt_comparison(const PerformanceTensor& t, const Imputer& imputer, const ExperimentConfig& cfg,
                                 const std::string& dataset_name);

/// Paired one-sided test over rows; fills ttest or ttest_error.
void attach_ttest(BktComparison& c);

// ---- divergence ----

/// Bootstrap parameter distributions at max_attempt_last on original and imputed data.
KlReport run_divergence_analysis(const PerformanceTensor& t, const Imputer& imputer, const ExperimentConfig& cfg,
                                 std::span<const std::string> question_ids);

// ---- output ----

struct ExperimentReport {
  ExperimentConfig config;
  std::string dataset_name;
  std::optional<AttemptSweep> sweep;
  std::optional<BktComparison> bkt;
  std::optional<KlReport> divergence;
};

/// Writes CSV tables, plot-data files (x y yerr) and manifest.json into `dir`.
/// Identical reports produce identical bytes. Throws std::runtime_error naming the path.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace sparsekt
