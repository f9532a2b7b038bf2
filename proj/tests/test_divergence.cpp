#include "doctest.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include "sparsekt/divergence.hpp"
#include "sparsekt/random.hpp"
#include "test_util.hpp"

using namespace sparsekt;

namespace {

std::vector<double> normal_draws(double mean, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(mean, 1.0);
  return v;
}

}  // namespace

TEST_CASE("kde: symmetric samples give a symmetric density") {
  const std::vector<double> s{0.1, 0.3, 0.45, 0.55, 0.7, 0.9};
  const auto d = kde(s);
  const std::size_t n = d.grid.size();
  CHECK(n == 512);
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(d.grid[k] - 0.5 == doctest::Approx(0.5 - d.grid[n - 1 - k]).epsilon(1e-9));
    CHECK(std::abs(d.densities[k] - d.densities[n - 1 - k]) < 1e-6);
  }
}

TEST_CASE("kde: unit mass and support") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = normal_draws(0.0, 50, seed);
    const auto d = kde(s);
    CHECK(std::abs(trapezoid(d.grid, d.densities) - 1.0) < 1e-3);
    CHECK(d.grid.front() <= *std::min_element(s.begin(), s.end()) - 3 * d.bandwidth + 1e-12);
    CHECK(d.grid.back() >= *std::max_element(s.begin(), s.end()) + 3 * d.bandwidth - 1e-12);
  }
}

TEST_CASE("kde: standard normal density at zero") {
  const auto d = kde(normal_draws(0.0, 100000, 7));
  const double expected = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  CHECK(std::abs(density_at(d, 0.0) - expected) < 0.05 * expected);
}

TEST_CASE("kde: bandwidth rule, override and floor") {
  // sd = 1.2910, IQR/1.34 = 1.1194 for {1,2,3,4}; n^(-1/5) = 0.7579
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(silverman_bandwidth(s) == doctest::Approx(0.9 * 1.5 / 1.34 * std::pow(4.0, -0.2)).epsilon(1e-12));
  CHECK(kde(s, 0.25).bandwidth == 0.25);
  const std::vector<double> flat{0.3, 0.3, 0.3};
  const auto d = kde(flat);
  CHECK(d.bandwidth == 1e-3);
  CHECK(std::abs(trapezoid(d.grid, d.densities) - 1.0) < 1e-3);
  CHECK_THROWS_AS(kde(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("kl: self divergence and the Gaussian pair") {
  const auto p = kde(normal_draws(0.0, 100000, 11));
  const auto q = kde(normal_draws(1.0, 100000, 12));
  CHECK(std::abs(kl(p, p)) < 1e-6);
  const double pq = kl(p, q), qp = kl(q, p);
  CHECK(std::abs(pq - 0.5) < 0.05);
  CHECK(std::abs(qp - 0.5) < 0.05);
  CHECK(pq != qp);
}

TEST_CASE("kl: grid refinement and non-negativity") {
  const auto a = normal_draws(0.0, 100000, 11);
  const auto b = normal_draws(1.0, 100000, 12);
  const double coarse = kl(kde(a), kde(b));
  const double fine = kl(kde(a, std::nullopt, 1024), kde(b, std::nullopt, 1024));
  CHECK(std::abs(coarse - fine) < 1e-3);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(2 + rng.below(30)), y(2 + rng.below(30));
    for (auto& v : x) v = rng.uniform();
    for (auto& v : y) v = rng.uniform(0.2, 1.4);
    CHECK(kl(kde(x), kde(y)) >= -1e-9);
  }
}

TEST_CASE("percent_within") {
  CHECK(percent_within(std::vector<double>{0.2, 1.5, 0.8}) == doctest::Approx(200.0 / 3.0));
  CHECK(percent_within(std::vector<double>{0.0, 0.5, 1.0}) == 100.0);
  CHECK(percent_within(std::vector<double>{-2.0, 3.0}, -2.0, 2.0) == 50.0);
  CHECK_THROWS_AS(percent_within(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("parameter_distributions: determinism and skipped questions") {
  auto t = testing::random_tensor({20, 4, 5}, 0.2, 3);
  for (std::size_t u = 0; u < 20; ++u)
    for (std::size_t i = 0; i < 5; ++i) t.set(u, 2, i, Outcome::Missing);

  BktConfig cfg;
  cfg.seed = 9;
  const auto a = parameter_distributions(t, cfg, 2, 17);
  const auto b = parameter_distributions(t, cfg, 2, 17);
  REQUIRE(a.questions.size() == 4);
  CHECK(a.skipped == std::vector<std::size_t>{2});
  CHECK_FALSE(a.questions[2].has_value());
  for (std::size_t j : {0, 1, 3}) {
    REQUIRE(a.questions[j].has_value());
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK((*a.questions[j])[k].size() == 2);
      CHECK((*a.questions[j])[k] == (*b.questions[j])[k]);
    }
  }
  CHECK_THROWS_AS(parameter_distributions(t, cfg, 1, 17), std::invalid_argument);
}

TEST_CASE("parameter_distributions: all-correct question pushes L0 to the clip") {
  auto t = testing::random_tensor({30, 2, 4}, 0.0, 4);
  for (std::size_t u = 0; u < 30; ++u)
    for (std::size_t i = 0; i < 4; ++i) t.set(u, 1, i, Outcome::Correct);
  const auto pd = parameter_distributions(t, BktConfig{}, 5, 1);
  for (double l0 : (*pd.questions[1])[0]) CHECK(l0 > 0.99);
}

TEST_CASE("kl_report: entries, summary and CSV") {
  ParameterDistributions p, q;
  ParameterSamples same;
  for (auto& v : same) v = {0.1, 0.2, 0.3, 0.25};
  ParameterSamples shifted;
  for (auto& v : shifted) v = {0.6, 0.7, 0.8, 0.75};
  p.questions = {same, same, std::nullopt};
  q.questions = {same, shifted, same};
  const std::vector<std::string> ids{"q1", "q2", "q3"};
  const auto r = kl_report(p, q, ids);
  REQUIRE(r.entries.size() == 8);
  CHECK(r.skipped == std::vector<std::size_t>{2});
  CHECK(r.entries[0].kl < 1e-6);
  CHECK(r.entries[4].kl > 1.0);
  for (double pw : r.percent_within_unit) CHECK(pw == 50.0);

  std::ostringstream csv;
  write_kl_csv(csv, r);
  CHECK(csv.str().rfind("question_id,parameter,kl\nq1,L0,", 0) == 0);
  const auto j = kl_summary_json(r);
  CHECK(j["percent_within_0_1"]["S"] == 50.0);
  CHECK(j["skipped_questions"][0] == 2);
  CHECK_THROWS_AS(kl_report(p, q, std::vector<std::string>{"a"}), std::invalid_argument);
}
