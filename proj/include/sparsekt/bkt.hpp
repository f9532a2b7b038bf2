#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

struct BktParams {
  double L0 = 0.0;  // initial mastery
  double T = 0.0;   // learn
  double G = 0.0;   // guess
  double S = 0.0;   // slip

  bool operator==(const BktParams&) const = default;
};

/// One learner's outcomes (0/1) on one question, in attempt order, missing attempts dropped.
using ResponseSequence = std::vector<std::uint8_t>;

enum class BinarizeMode { Threshold, Bernoulli };

/// Threshold mode: value >= threshold is Correct. Bernoulli mode: Correct with
/// probability equal to the value, seeded.
PerformanceTensor binarize(const DenseTensor& d, double threshold = 0.5, BinarizeMode mode = BinarizeMode::Threshold,
                           std::uint64_t seed = 0);

struct SequencePrediction {
  std::vector<double> p_correct;  // prediction for step t uses observations before t
  bool degenerate = false;        // a 0/0 posterior was replaced by 0
};

SequencePrediction predict_sequence(const BktParams& p, std::span<const std::uint8_t> seq);

struct BktConfig {
  std::size_t restarts = 5;
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const BktConfig& c);
BktConfig bkt_config_from_json(const nlohmann::json& j);

struct BktFit {
  BktParams params;
  double log_likelihood = 0.0;
  double rmse = 0.0;
  std::size_t sequences = 0;
};

/// Identical sequences collapsed to one entry with a count, in lexicographic order.
struct SequenceGroup {
  ResponseSequence seq;
  std::size_t count = 0;
};
std::vector<SequenceGroup> group_sequences(std::span<const ResponseSequence> sequences);

double log_likelihood(const BktParams& p, std::span<const SequenceGroup> groups);

struct EmTrace {
  BktParams params;
  std::vector<double> log_likelihood;  // after each iteration, starting with the initial params
};

/// Baum-Welch from `init` with clipping to [1e-4, 1 - 1e-4] and G, S <= 0.5.
EmTrace run_em(std::span<const SequenceGroup> groups, BktParams init, const BktConfig& cfg);

/// Best of cfg.restarts seeded EM runs.
BktFit fit_question(std::span<const ResponseSequence> sequences, const BktConfig& cfg);

std::vector<ResponseSequence> question_sequences(const PerformanceTensor& t, std::size_t question);

/// One fit per question; questions without observations stay empty.
std::vector<std::optional<BktFit>> fit_questions(const PerformanceTensor& t, const BktConfig& cfg);

/// RMSE of causal BKT predictions over every observed step of t.
double bkt_rmse(std::span<const std::optional<BktFit>> fits, const PerformanceTensor& t);

struct TTestResult {
  double t = 0.0;
  double p = 0.0;  // P(T_df <= t): alternative is imputed < original
  std::size_t df = 0;
};

TTestResult paired_t_test_one_sided(std::span<const double> original, std::span<const double> imputed);

/// Student-t CDF via the regularized incomplete beta function.
double student_t_cdf(double t, double df);

/// CSV: question_id,L0,T,G,S,loglik,rmse,n_sequences. Questions without a fit are skipped.
void write_fit_report(std::ostream& out, std::span<const std::optional<BktFit>> fits,
                      std::span<const std::string> question_ids);

}  // namespace sparsekt
