#include "sparsekt/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "sparsekt/random.hpp"

namespace sparsekt {

namespace {

constexpr double kBandwidthFloor = 1e-3;
constexpr double kDensityFloor = 1e-12;

// Linear-interpolated quantile (type 7).
double quantile(std::vector<double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::array<double, 4> as_array(const BktParams& p) { return {p.L0, p.T, p.G, p.S}; }

}  // namespace

double silverman_bandwidth(std::span<const double> samples) {
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = (quantile(sorted, 0.75) - quantile(sorted, 0.25)) / 1.34;
  const double spread = (sd > 0.0 && iqr > 0.0) ? std::min(sd, iqr) : std::max(sd, iqr);
  return std::max(0.9 * spread * std::pow(n, -0.2), kBandwidthFloor);
}

DensityEstimate kde(std::span<const double> samples, std::optional<double> bandwidth, std::size_t grid_points) {
  if (samples.size() < 2) throw std::invalid_argument("kde needs at least 2 samples");
  if (grid_points < 2) throw std::invalid_argument("kde needs at least 2 grid points");
  DensityEstimate d;
  d.bandwidth = bandwidth ? std::max(*bandwidth, kBandwidthFloor) : silverman_bandwidth(samples);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it - 3.0 * d.bandwidth;
  const double hi = *hi_it + 3.0 * d.bandwidth;
  d.grid.resize(grid_points);
  d.densities.assign(grid_points, 0.0);
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  for (std::size_t k = 0; k < grid_points; ++k) d.grid[k] = lo + step * static_cast<double>(k);

  const double inv_h = 1.0 / d.bandwidth;
  const double norm = inv_h / (std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(samples.size()));
  for (double s : samples) {
    // Kernel mass past 8 bandwidths is below 1e-14 and skipped.
    const double from = s - 8.0 * d.bandwidth, to = s + 8.0 * d.bandwidth;
    const auto k0 = static_cast<std::size_t>(std::max(0.0, std::ceil((from - lo) / step)));
    for (std::size_t k = k0; k < grid_points && d.grid[k] <= to; ++k) {
      const double z = (d.grid[k] - s) * inv_h;
      d.densities[k] += norm * std::exp(-0.5 * z * z);
    }
  }
  const double mass = trapezoid(d.grid, d.densities);
  for (double& v : d.densities) v /= mass;
  return d;
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("trapezoid: size mismatch");
  double s = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) s += 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1]);
  return s;
}

double density_at(const DensityEstimate& d, double x) {
  if (d.grid.empty() || x < d.grid.front() || x > d.grid.back()) return 0.0;
  const auto it = std::upper_bound(d.grid.begin(), d.grid.end(), x);
  if (it == d.grid.end()) return d.densities.back();
  const auto k = static_cast<std::size_t>(it - d.grid.begin());
  const double x0 = d.grid[k - 1], x1 = d.grid[k];
  const double w = (x - x0) / (x1 - x0);
  return (1.0 - w) * d.densities[k - 1] + w * d.densities[k];
}

double kl(const DensityEstimate& p, const DensityEstimate& q) {
  std::vector<double> grid;
  grid.reserve(p.grid.size() + q.grid.size());
  std::merge(p.grid.begin(), p.grid.end(), q.grid.begin(), q.grid.end(), std::back_inserter(grid));
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<double> integrand(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double pv = std::max(density_at(p, grid[k]), kDensityFloor);
    const double qv = std::max(density_at(q, grid[k]), kDensityFloor);
    integrand[k] = pv * std::log(pv / qv);
  }
  return trapezoid(grid, integrand);
}

double percent_within(std::span<const double> values, double lo, double hi) {
  if (values.empty()) throw std::invalid_argument("percent_within: empty list");
  const auto inside = std::count_if(values.begin(), values.end(), [&](double v) { return lo <= v && v <= hi; });
  return 100.0 * static_cast<double>(inside) / static_cast<double>(values.size());
}

ParameterDistributions parameter_distributions(const PerformanceTensor& t, const BktConfig& fitter, std::size_t B,
                                               std::uint64_t seed) {
  if (B < 2) throw std::invalid_argument("parameter_distributions: B must be >= 2");
  const Dims& d = t.dims();
  ParameterDistributions out;
  out.questions.resize(d.questions);

  // Per-learner sequences, computed once.
  std::vector<std::vector<ResponseSequence>> by_learner(d.learners, std::vector<ResponseSequence>(d.questions));
  std::vector<bool> has_data(d.questions, false);
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < d.attempts; ++i) {
        const Outcome o = t.at(u, j, i);
        if (!is_observed(o)) continue;
        by_learner[u][j].push_back(o == Outcome::Correct ? 1 : 0);
        has_data[j] = true;
      }
  for (std::size_t j = 0; j < d.questions; ++j) {
    if (has_data[j]) {
      out.questions[j].emplace();
    } else {
      out.skipped.push_back(j);
    }
  }

  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 1, b));
    std::vector<std::size_t> draw(d.learners);
    for (auto& u : draw) u = rng.below(d.learners);
    for (std::size_t j = 0; j < d.questions; ++j) {
      if (!out.questions[j]) continue;
      std::vector<ResponseSequence> seqs;
      for (std::size_t u : draw) {
        if (!by_learner[u][j].empty()) seqs.push_back(by_learner[u][j]);
      }
      if (seqs.empty()) continue;  // this resample missed every learner with data on j
      BktConfig cfg = fitter;
      cfg.seed = derive_seed(fitter.seed, b, j);
      const auto params = as_array(fit_question(seqs, cfg).params);
      for (std::size_t k = 0; k < 4; ++k) (*out.questions[j])[k].push_back(params[k]);
    }
  }
  return out;
}

KlReport kl_report(const ParameterDistributions& original, const ParameterDistributions& imputed,
                   std::span<const std::string> question_ids) {
  if (original.questions.size() != imputed.questions.size() || original.questions.size() != question_ids.size()) {
    throw std::invalid_argument("kl_report: question counts differ");
  }
  KlReport r;
  std::array<std::vector<double>, 4> values;
  for (std::size_t j = 0; j < question_ids.size(); ++j) {
    const auto& p = original.questions[j];
    const auto& q = imputed.questions[j];
    if (!p || !q || (*p)[0].size() < 2 || (*q)[0].size() < 2) {
      r.skipped.push_back(j);
      continue;
    }
    for (std::size_t k = 0; k < 4; ++k) {
      const double v = kl(kde((*p)[k]), kde((*q)[k]));
      r.entries.push_back({j, question_ids[j], kBktParameterNames[k], v});
      values[k].push_back(v);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) r.percent_within_unit[k] = values[k].empty() ? 0.0 : percent_within(values[k]);
  return r;
}

void write_kl_csv(std::ostream& out, const KlReport& r) {
  out << "question_id,parameter,kl\n";
  const auto old = out.precision(12);
  for (const auto& e : r.entries) out << e.question_id << ',' << e.parameter << ',' << e.kl << '\n';
  out.precision(old);
}

nlohmann::ordered_json kl_summary_json(const KlReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json pw;
  for (std::size_t k = 0; k < 4; ++k) pw[kBktParameterNames[k]] = r.percent_within_unit[k];
  j["percent_within_0_1"] = pw;
  j["entries"] = r.entries.size();
  j["skipped_questions"] = r.skipped;
  return j;
}

}  // namespace sparsekt
