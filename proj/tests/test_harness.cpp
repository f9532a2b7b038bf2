#include "doctest.h"

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sparsekt/harness.hpp"
#include "test_util.hpp"

using namespace sparsekt;
namespace fs = std::filesystem;

namespace {

PerformanceTensor synth_tensor(const SynthSpec& s) { return build_tensor(synth_generate(s), s.dims.attempts).tensor; }

ExperimentConfig synth_config(SynthSpec s) {
  ExperimentConfig cfg;
  cfg.synth = s;
  cfg.seed = 5;
  cfg.max_attempt_first = s.dims.attempts;
  cfg.max_attempt_last = s.dims.attempts;
  return cfg;
}

DenseTensor values_of(const PerformanceTensor& t) {
  std::vector<double> v;
  for (Outcome o : t.cells()) v.push_back(is_observed(o) ? outcome_value(o) : 0.5);
  return DenseTensor(t.dims(), std::move(v));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("sparsekt_test_harness_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("synth: zero rates give a fully observed tensor") {
  const SynthSpec s{{12, 4, 5}, {}, 0.0, 0.0, 1};
  const auto records = synth_generate(s);
  CHECK(records.size() == 12 * 4 * 5);
  CHECK(records.front().learner_id == "u0001");
  CHECK(records.front().question_id == "q001");
  CHECK(sparsity_level(synth_tensor(s)) == 0.0);
  CHECK(synth_generate(s) == records);
}

TEST_CASE("synth: MCAR rate concentrates") {
  const SynthSpec s{{100, 20, 5}, {}, 0.3, 0.0, 2};
  CHECK(std::abs(sparsity_level(synth_tensor(s)) - 0.30) < 0.02);
}

TEST_CASE("synth: dropout makes sparsity non-decreasing in max attempt") {
  for (std::uint64_t seed : {3, 4, 5}) {
    const auto t = synth_tensor(SynthSpec{{80, 6, 6}, {}, 0.1, 0.25, seed});
    const auto profile = sparsity_profile(t, 1, 6);
    for (std::size_t k = 1; k < profile.size(); ++k) CHECK(profile[k].level >= profile[k - 1].level);
  }
}

TEST_CASE("synth: parameter draws and spec validation") {
  const auto p = draw_synth_params(50, 9);
  REQUIRE(p.size() == 50);
  for (const auto& q : p) {
    CHECK((q.L0 >= 0.1 && q.L0 <= 0.5));
    CHECK((q.T >= 0.1 && q.T <= 0.4));
    CHECK((q.G >= 0.1 && q.G <= 0.3));
    CHECK((q.S >= 0.05 && q.S <= 0.2));
  }
  CHECK_THROWS(SynthSpec{{10, 2, 3}, {}, 1.5, 0.0, 0}.validate());
  CHECK_THROWS(SynthSpec{{10, 2, 3}, {BktParams{0.2, 0.2, 0.2, 0.1}}, 0.0, 0.0, 0}.validate());
}

TEST_CASE("synthetic closed loop: original-side BKT recovers the generating parameters") {
  // A single 200-learner draw at MCAR 0.3 lands within 0.1 for roughly 60% of questions,
  // so recovery is checked on the mean over replicate cohorts.
  const std::vector<BktParams> truth{{0.3, 0.2, 0.15, 0.1}, {0.4, 0.3, 0.2, 0.1}, {0.2, 0.25, 0.1, 0.15}};
  const std::size_t replicates = 20;
  std::vector<std::array<double, 4>> mean(truth.size(), {0, 0, 0, 0});
  for (std::uint64_t r = 0; r < replicates; ++r) {
    const auto t = synth_tensor(SynthSpec{{200, 3, 5}, truth, 0.3, 0.0, 100 + r});
    const auto fits = fit_questions(t, BktConfig{});
    for (std::size_t j = 0; j < truth.size(); ++j) {
      REQUIRE(fits[j].has_value());
      const BktParams& f = fits[j]->params;
      for (std::size_t k = 0; k < 4; ++k) mean[j][k] += std::array{f.L0, f.T, f.G, f.S}[k] / replicates;
    }
  }
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const std::array want{truth[j].L0, truth[j].T, truth[j].G, truth[j].S};
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(mean[j][k] - want[k]) < 0.1);
  }

  // The original side never sees the imputer.
  const auto t = synth_tensor(SynthSpec{{200, 3, 5}, truth, 0.3, 0.0, 99});
  auto cfg = synth_config(SynthSpec{{200, 3, 5}, truth, 0.3, 0.0, 99});
  cfg.max_attempt_first = 3;
  const auto a = run_bkt_comparison(t, make_imputer("constant", cfg), cfg, "synthetic");
  const auto b = run_bkt_comparison(t, make_imputer("observed_mean", cfg), cfg, "synthetic");
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) CHECK(a.rows[k].original_rmse == b.rows[k].original_rmse);
}

TEST_CASE("experiment: oracle, constant and run counts") {
  const auto t = testing::random_tensor({30, 4, 3}, 0.0, 6);
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.max_attempt_first = cfg.max_attempt_last = 3;
  const std::vector<Imputer> models{
      {"oracle", [&](const PerformanceTensor&, std::uint64_t) { return values_of(t); }},
      {"half", [](const PerformanceTensor& train, std::uint64_t) { return fill_missing(train, 0.5); }}};
  const auto r = run_imputation_experiment(t, models, cfg);
  REQUIRE(r.runs.size() == 50);
  CHECK(r.fold_seeds.size() == 5);
  std::map<std::string, std::size_t> counts;
  for (const auto& run : r.runs) {
    REQUIRE(run.rmse.has_value());
    ++counts[run.model];
    CHECK(*run.rmse == (run.model == "oracle" ? 0.0 : 0.5));
  }
  CHECK(counts["oracle"] == 25);
  CHECK(counts["half"] == 25);
  REQUIRE(r.summary.size() == 2);
  CHECK(r.summary[1].mean_rmse == doctest::Approx(0.5));
  CHECK(r.summary[1].std_error == doctest::Approx(0.0));
  CHECK(r.summary[0].runs == 25);
}

TEST_CASE("experiment: failures are recorded per run") {
  const auto t = testing::random_tensor({10, 3, 2}, 0.2, 7);
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.max_attempt_first = 1;
  cfg.max_attempt_last = 2;
  cfg.folds = 2;
  cfg.cycles = 2;
  const std::vector<Imputer> models{
      {"broken", [](const PerformanceTensor&, std::uint64_t) -> DenseTensor { throw std::runtime_error("nope"); }}};
  const auto r = run_imputation_experiment(t, models, cfg);
  REQUIRE(r.runs.size() == 8);
  for (const auto& run : r.runs) {
    CHECK_FALSE(run.rmse.has_value());
    CHECK(run.error == "nope");
  }
  for (const auto& s : r.summary) {
    CHECK(s.runs == 0);
    CHECK(s.failures == 4);
  }
}

TEST_CASE("experiment: held-out cells never reach the model") {
  const auto t = testing::random_tensor({25, 4, 4}, 0.3, 8);
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.max_attempt_first = 3;
  cfg.max_attempt_last = 4;
  cfg.cycles = 2;
  std::vector<PerformanceTensor> seen;
  const std::vector<Imputer> spy{{"spy", [&](const PerformanceTensor& train, std::uint64_t) {
                                    seen.push_back(train);
                                    return fill_missing(train, 0.5);
                                  }}};
  const auto r = run_imputation_experiment(t, spy, cfg);
  REQUIRE(seen.size() == 20);
  for (std::size_t m = 3, k = 0; m <= 4; ++m) {
    const auto full = truncate_attempts(t, m);
    for (std::size_t cycle = 0; cycle < cfg.cycles; ++cycle, k += cfg.folds) {
      // Each observed cell is hidden from exactly one fold's training tensor and never invented.
      for (std::size_t idx = 0; idx < full.cells().size(); ++idx) {
        std::size_t hidden = 0;
        for (std::size_t f = 0; f < cfg.folds; ++f) {
          const Outcome o = seen[k + f].cells()[idx];
          if (!is_observed(full.cells()[idx])) {
            CHECK(o == Outcome::Missing);
          } else if (o == Outcome::Missing) {
            ++hidden;
          } else {
            CHECK(o == full.cells()[idx]);
          }
        }
        if (is_observed(full.cells()[idx])) CHECK(hidden == 1);
      }
    }
  }
  CHECK(r.runs.size() == 20);
}

TEST_CASE("experiment: seeded runs are reproducible and thread-count independent") {
  const auto t = testing::random_tensor({20, 3, 3}, 0.3, 9);
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.max_attempt_first = 2;
  cfg.max_attempt_last = 3;
  cfg.cycles = 2;
  cfg.tf.epochs = 50;
  const std::vector<Imputer> models{make_imputer("tf", cfg), make_imputer("observed_mean", cfg)};
  const auto a = run_imputation_experiment(t, models, cfg);
  cfg.threads = 3;
  const auto b = run_imputation_experiment(t, models, cfg);
  REQUIRE(a.runs.size() == b.runs.size());
  for (std::size_t k = 0; k < a.runs.size(); ++k) {
    CHECK(a.runs[k].seed == b.runs[k].seed);
    CHECK(a.runs[k].rmse == b.runs[k].rmse);
  }
}

TEST_CASE("make_imputer: every model keeps observed cells and stays in range") {
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.gain.epochs = 2;
  for (GanConfig* g : {&cfg.gan, &cfg.infogan, &cfg.ambientgan}) {
    g->epochs = 2;
    g->inversion_steps = 5;
    g->inversion_restarts = 2;
  }
  cfg.tf.epochs = 20;
  cfg.bptf.gibbs_steps = 10;
  cfg.bptf.burn_in = 5;
  const auto t = testing::random_tensor({6, 3, 4}, 0.4, 10);
  std::vector<std::string> names(kModelNames.begin(), kModelNames.end());
  names.push_back("constant");
  names.push_back("observed_mean");
  for (const auto& name : names) {
    CAPTURE(name);
    const auto imp = make_imputer(name, cfg);
    const auto out = imp.fn(t, 3);
    CHECK(out == imp.fn(t, 3));
    for (std::size_t k = 0; k < t.cells().size(); ++k) {
      const double v = out.values()[k];
      CHECK((v >= 0.0 && v <= 1.0));
      if (is_observed(t.cells()[k])) CHECK(v == outcome_value(t.cells()[k]));
    }
  }
  CHECK_THROWS_AS(make_imputer("knn", cfg), ConfigError);
  CHECK_THROWS_AS(holdout_rmse(fill_missing(t, 0.5), {}), DataError);
}

TEST_CASE("bkt comparison: identical sides give zero differences and a t-test error") {
  const auto t = testing::random_tensor({30, 3, 4}, 0.0, 11);
  ExperimentConfig cfg;
  cfg.synth = SynthSpec{};
  cfg.max_attempt_first = 2;
  cfg.max_attempt_last = 4;
  const Imputer same{"same", [](const PerformanceTensor& train, std::uint64_t) { return fill_missing(train, 0.5); }};
  const auto c = run_bkt_comparison(t, same, cfg, "hand");
  REQUIRE(c.rows.size() == 3);
  for (const auto& r : c.rows) {
    CHECK(r.dataset == "hand");
    CHECK(r.difference == 0.0);
    CHECK(r.original_rmse == r.imputed_rmse);
  }
  CHECK_FALSE(c.ttest.has_value());
  CHECK_FALSE(c.ttest_error.empty());
}

TEST_CASE("divergence: self-comparison stays near zero and the CSV matches the summary") {
  const auto t = synth_tensor(SynthSpec{{40, 3, 4}, {}, 0.0, 0.0, 12});
  auto cfg = synth_config(SynthSpec{{40, 3, 4}, {}, 0.0, 0.0, 12});
  cfg.models = {"observed_mean"};
  cfg.comparison_model = "observed_mean";
  cfg.bootstrap = 100;
  const std::vector<std::string> ids{"q001", "q002", "q003"};
  const auto kl = run_divergence_analysis(t, make_imputer("observed_mean", cfg), cfg, ids);
  REQUIRE(kl.entries.size() == 12);
  for (const auto& e : kl.entries) CHECK(e.kl < 0.05);
  for (double pw : kl.percent_within_unit) CHECK(pw == 100.0);

  const fs::path dir = scratch_dir("kl");
  ExperimentReport r{cfg, "synthetic", std::nullopt, std::nullopt, kl};
  emit_report(r, dir);
  const auto rows = lines(dir / "kl.csv");
  REQUIRE(rows.size() == 13);
  std::map<std::string, std::pair<int, int>> within;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    std::istringstream s(rows[k]);
    std::string q, param, value;
    std::getline(s, q, ',');
    std::getline(s, param, ',');
    std::getline(s, value);
    const double v = std::stod(value);
    within[param].first += (v >= 0.0 && v <= 1.0);
    ++within[param].second;
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "kl_summary.json"));
  for (const auto& [param, c] : within) {
    CHECK(summary["percent_within_0_1"][param].get<double>() == doctest::Approx(100.0 * c.first / c.second));
  }
  fs::remove_all(dir);
}

TEST_CASE("sweep: dropout rates, telescoping and the degenerate range") {
  const SynthSpec s{{100, 5, 5}, {}, 0.0, 0.3, 13};
  const auto t = synth_tensor(s);
  auto cfg = synth_config(s);
  cfg.max_attempt_first = 1;
  cfg.max_attempt_last = 5;
  cfg.folds = 2;
  cfg.cycles = 1;
  const std::vector<Imputer> models{make_imputer("constant", cfg)};
  const auto sweep = run_attempt_sweep(t, models, cfg);
  REQUIRE(sweep.increase_rate.size() == 4);
  double sum = 0.0;
  for (double r : sweep.increase_rate) {
    CHECK(r > 0.0);
    sum += r;
  }
  CHECK(sum == doctest::Approx(sweep.sparsity[4].level - sweep.sparsity[0].level).epsilon(1e-12));

  cfg.max_attempt_first = 3;
  cfg.max_attempt_last = 3;
  const auto single = run_attempt_sweep(t, models, cfg);
  CHECK(single.sparsity.size() == 1);
  CHECK(single.increase_rate.empty());
}

TEST_CASE("emit_report: empty report writes header-only tables") {
  ExperimentReport r;
  r.config.synth = SynthSpec{};
  r.dataset_name = "synthetic";
  const fs::path dir = scratch_dir("empty");
  emit_report(r, dir);
  for (const char* f : {"sparsity.csv", "imputation_runs.csv", "imputation_summary.csv", "bkt_comparison.csv", "kl.csv"}) {
    CAPTURE(f);
    CHECK(lines(dir / f).size() == 1);
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["tool"] == "sparsekt");
  CHECK(manifest["seeds"].contains("experiment"));
  CHECK_FALSE(manifest["config"].contains("output_dir"));
  fs::remove_all(dir);
}

TEST_CASE("emit_report: full report lists every seed and is byte-stable") {
  const SynthSpec s{{30, 3, 4}, {}, 0.2, 0.1, 14};
  const auto t = synth_tensor(s);
  auto cfg = synth_config(s);
  cfg.max_attempt_first = 2;
  cfg.max_attempt_last = 4;
  cfg.folds = 2;
  cfg.cycles = 2;
  cfg.bootstrap = 3;
  cfg.models = {"constant", "observed_mean"};
  cfg.comparison_model = "observed_mean";
  std::vector<Imputer> models;
  for (const auto& m : cfg.models) models.push_back(make_imputer(m, cfg));
  const Imputer comparison = make_imputer(cfg.comparison_model, cfg);
  ExperimentReport r{cfg, "synthetic", run_attempt_sweep(t, models, cfg),
                     run_bkt_comparison(t, comparison, cfg, "synthetic"),
                     run_divergence_analysis(t, comparison, cfg, std::vector<std::string>{"q001", "q002", "q003"})};

  const fs::path a = scratch_dir("full_a"), b = scratch_dir("full_b");
  emit_report(r, a);
  emit_report(r, b);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    CAPTURE(e.path().filename().string());
    CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  }
  CHECK(files == 12);

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  const auto& seeds = manifest["seeds"];
  CHECK(seeds["synth"] == 14);
  CHECK(seeds["folds"].size() == 3 * 2);
  CHECK(seeds["runs"].size() == r.sweep->report.runs.size());
  CHECK(seeds["comparison_imputer"].size() == 3);
  CHECK(seeds.contains("bootstrap"));
  CHECK(manifest["files"].size() == files);

  CHECK(lines(a / "imputation_runs.csv").size() == 1 + r.sweep->report.runs.size());
  CHECK(lines(a / "plot_rmse_constant.dat").size() == 1 + 3);
  CHECK(lines(a / "plot_bkt.dat").size() == 1 + r.bkt->rows.size());
  CHECK(lines(a / "plot_sparsity.dat").size() == 1 + r.sweep->sparsity.size());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config: parsing, round trip and errors") {
  const auto j = nlohmann::json::parse(R"({
    "synth": {"learners": 20, "questions": 3, "attempts": 4, "mcar_rate": 0.2, "seed": 3},
    "models": ["gain", "tf"],
    "max_attempt": "2..4",
    "folds": 3,
    "seed": 17,
    "hyperparameters": {"tf": {"rank": 2}, "gain": {"epochs": 7}}
  })");
  const auto cfg = experiment_config_from_json(j);
  CHECK(cfg.max_attempt_first == 2);
  CHECK(cfg.max_attempt_last == 4);
  CHECK(cfg.tf.rank == 2);
  CHECK(cfg.gain.epochs == 7);
  CHECK(cfg.synth->dims.learners == 20);
  const auto again = experiment_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  CHECK(to_json(again).dump() == to_json(cfg).dump());

  auto bad = j;
  bad["colour"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["dataset"] = "log.csv";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["models"] = {"gain", "gain"};
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["hyperparameters"]["knn"] = nlohmann::json::object();
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["max_attempt"] = "4..9";
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  bad = j;
  bad["folds"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("parse_attempt_range") {
  CHECK(parse_attempt_range("1..5") == std::pair<std::size_t, std::size_t>{1, 5});
  CHECK(parse_attempt_range("3") == std::pair<std::size_t, std::size_t>{3, 3});
  for (const char* bad : {"", "..", "a..3", "1..", "1...3", "-1..2", "2..x"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_attempt_range(bad), ConfigError);
  }
}
