#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsekt/bkt.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

struct DensityEstimate {
  std::vector<double> grid;  // ascending
  std::vector<double> densities;
  double bandwidth = 0.0;
};

/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5), falling back to whichever spread is nonzero,
/// floored at 1e-3.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian KDE on `grid_points` evenly spaced points over [min - 3h, max + 3h],
/// renormalized to unit trapezoid mass.
DensityEstimate kde(std::span<const double> samples, std::optional<double> bandwidth = std::nullopt,
                    std::size_t grid_points = 512);

double trapezoid(std::span<const double> x, std::span<const double> y);

/// Linear interpolation, zero outside the grid.
double density_at(const DensityEstimate& d, double x);

/// KL(P || Q) by the trapezoid rule on the union of both grids, densities floored at 1e-12.
double kl(const DensityEstimate& p, const DensityEstimate& q);

/// 100 * |{v : lo <= v <= hi}| / n.
double percent_within(std::span<const double> values, double lo = 0.0, double hi = 1.0);

inline constexpr std::array<const char*, 4> kBktParameterNames{"L0", "T", "G", "S"};

/// Bootstrap samples of each BKT parameter for one question, indexed like kBktParameterNames.
using ParameterSamples = std::array<std::vector<double>, 4>;

struct ParameterDistributions {
  std::vector<std::optional<ParameterSamples>> questions;  // empty for skipped questions
  std::vector<std::size_t> skipped;                        // questions with no sequences
};

/// B bootstrap resamples of learners (with replacement); each resample refits every
/// question. Resample r draws the same learner indices for any tensor of the same
/// dims and seed, so original and imputed runs are paired.
ParameterDistributions parameter_distributions(const PerformanceTensor& t, const BktConfig& fitter, std::size_t B,
                                               std::uint64_t seed);

struct KlEntry {
  std::size_t question = 0;
  std::string question_id;
  std::string parameter;
  double kl = 0.0;
};

struct KlReport {
  std::vector<KlEntry> entries;
  std::array<double, 4> percent_within_unit{};  // per parameter, KL values in [0, 1]
  std::vector<std::size_t> skipped;
};

/// KL(original || imputed) per question and parameter, over questions fitted on both sides.
KlReport kl_report(const ParameterDistributions& original, const ParameterDistributions& imputed,
                   std::span<const std::string> question_ids);

void write_kl_csv(std::ostream& out, const KlReport& r);
nlohmann::ordered_json kl_summary_json(const KlReport& r);

}  // namespace sparsekt
