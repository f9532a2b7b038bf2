// Command-line front end for the imputation and learner-model experiments.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "sparsekt/harness.hpp"

using namespace sparsekt;

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
  std::string range;
};

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (!o.range.empty()) std::tie(cfg.max_attempt_first, cfg.max_attempt_last) = parse_attempt_range(o.range);
  cfg.validate();
  return cfg;
}

std::string dataset_name(const ExperimentConfig& cfg) {
  return cfg.dataset ? std::filesystem::path(*cfg.dataset).stem().string() : "synthetic";
}

std::ofstream create(const std::filesystem::path& p) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void cmd_synth(const Options& o) {
  const ExperimentConfig cfg = load(o);
  if (!cfg.synth) throw ConfigError("config has no synth block");
  const auto records = synth_generate(*cfg.synth);
  const std::filesystem::path dir = cfg.output_dir;
  auto log = create(dir / "synth_log.csv");
  serialize_log(records, log);
  SynthSpec truth = *cfg.synth;
  if (truth.params.empty()) truth.params = draw_synth_params(truth.dims.questions, truth.seed);
  create(dir / "synth_truth.json") << to_json(truth).dump(2) << '\n';
  std::cerr << "wrote " << records.size() << " records to " << (dir / "synth_log.csv").string() << '\n';
}

void cmd_ingest(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const TensorBuild b = load_experiment_data(cfg);
  const std::filesystem::path dir = cfg.output_dir;
  create(dir / "index_mapping.json") << index_mapping_json(b) << '\n';
  const auto profile = sparsity_profile(b.tensor, cfg.max_attempt_first, cfg.max_attempt_last);
  nlohmann::ordered_json j;
  const Dims& d = b.tensor.dims();
  j["learners"] = d.learners;
  j["questions"] = d.questions;
  j["attempts"] = d.attempts;
  j["observed_cells"] = b.tensor.observed_count();
  j["duplicates"] = b.duplicates;
  j["overflow"] = b.overflow;
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  for (const auto& p : profile.points()) levels.push_back({{"max_attempt", p.max_attempt}, {"sparsity", p.level}});
  j["sparsity"] = levels;
  create(dir / "ingest_summary.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
}

void cmd_impute(const Options& o) {
  ExperimentConfig cfg = load(o);
  const std::string model = o.model.empty() ? cfg.comparison_model : o.model;
  const TensorBuild b = load_experiment_data(cfg);
  const PerformanceTensor t = truncate_attempts(b.tensor, cfg.max_attempt_last);
  const Imputer imp = make_imputer(model, cfg);
  const DenseTensor out = imp.fn(t, run_seed(cfg, model, cfg.max_attempt_last, 0, 0));
  const auto path = std::filesystem::path(cfg.output_dir) / ("imputed_" + model + ".csv");
  auto f = create(path);
  f << "learner_id,question_id,attempt,probability,observed\n";
  const Dims& d = t.dims();
  char buf[64];
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < d.attempts; ++i) {
        std::snprintf(buf, sizeof buf, "%.10g", out.at(u, j, i));
        f << b.learner_ids[u] << ',' << b.question_ids[j] << ',' << i + 1 << ',' << buf << ','
          << (is_observed(t.at(u, j, i)) ? 1 : 0) << '\n';
      }
  std::cerr << "wrote " << path.string() << '\n';
}

ExperimentReport base_report(const ExperimentConfig& cfg) {
  ExperimentReport r;
  r.config = cfg;
  r.dataset_name = dataset_name(cfg);
  return r;
}

void run_sweep(ExperimentReport& r, const PerformanceTensor& t) {
  std::vector<Imputer> models;
  for (const auto& m : r.config.models) models.push_back(make_imputer(m, r.config));
  r.sweep = run_attempt_sweep(t, models, r.config);
  for (const auto& run : r.sweep->report.runs) {
    if (!run.rmse) std::cerr << "run failed: " << run.model << " m=" << run.max_attempt << ": " << run.error << '\n';
  }
}

void cmd_eval(const Options& o) {
  ExperimentConfig cfg = load(o);
  if (!o.model.empty()) cfg.models = {o.model};
  cfg.validate();
  const TensorBuild b = load_experiment_data(cfg);
  ExperimentReport r = base_report(cfg);
  run_sweep(r, b.tensor);
  emit_report(r, cfg.output_dir);
}

void cmd_bkt(const Options& o) {
  ExperimentConfig cfg = load(o);
  if (!o.model.empty()) cfg.comparison_model = o.model;
  cfg.validate();
  const TensorBuild b = load_experiment_data(cfg);
  ExperimentReport r = base_report(cfg);
  r.bkt = run_bkt_comparison(b.tensor, make_imputer(cfg.comparison_model, cfg), cfg, r.dataset_name);
  if (!r.bkt->ttest_error.empty()) std::cerr << "t-test: " << r.bkt->ttest_error << '\n';
  emit_report(r, cfg.output_dir);
}

void cmd_divergence(const Options& o) {
  ExperimentConfig cfg = load(o);
  if (!o.model.empty()) cfg.comparison_model = o.model;
  cfg.validate();
  const TensorBuild b = load_experiment_data(cfg);
  ExperimentReport r = base_report(cfg);
  r.divergence = run_divergence_analysis(b.tensor, make_imputer(cfg.comparison_model, cfg), cfg, b.question_ids);
  emit_report(r, cfg.output_dir);
}

void cmd_report(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const TensorBuild b = load_experiment_data(cfg);
  ExperimentReport r = base_report(cfg);
  run_sweep(r, b.tensor);
  const Imputer comparison = make_imputer(cfg.comparison_model, cfg);
  r.bkt = run_bkt_comparison(b.tensor, comparison, cfg, r.dataset_name);
  r.divergence = run_divergence_analysis(b.tensor, comparison, cfg, b.question_ids);
  emit_report(r, cfg.output_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse learner-performance imputation experiments"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "experiment config (JSON)");
  app.add_option("--seed", o.seed, "override the experiment seed");
  app.add_option("--out", o.out, "output directory");

  using Handler = void (*)(const Options&);
  Handler handler = nullptr;
  const auto sub = [&](const char* name, const char* help, Handler h) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    s->callback([&handler, h] { handler = h; });
    return s;
  };
  sub("synth", "generate a synthetic interaction log", cmd_synth);
  sub("ingest", "build the tensor and report sparsity", cmd_ingest);
  sub("impute", "impute the full tensor with one model", cmd_impute)->add_option("--model", o.model);
  auto* eval = sub("eval", "cross-validated imputation RMSE over the max attempt range", cmd_eval);
  eval->add_option("--model", o.model, "evaluate only this model");
  eval->add_option("--max-attempt-range", o.range, "a..b");
  auto* bkt = sub("bkt", "BKT on original vs imputed data, with the paired t-test", cmd_bkt);
  bkt->add_option("--model", o.model, "imputer");
  bkt->add_option("--max-attempt-range", o.range, "a..b");
  sub("divergence", "KL divergence of bootstrapped BKT parameters", cmd_divergence)->add_option("--model", o.model);
  sub("report", "eval, bkt and divergence into one report", cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    handler(o);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
