#include "sparsekt/factor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "sparsekt/diffgraph.hpp"
#include "sparsekt/random.hpp"

namespace sparsekt {

namespace {

constexpr double kRidgeFloor = 1e-6;

enum SeedTag : std::uint64_t { kInit = 1, kHyper, kLearnerRow, kQuestionRow, kAttemptRow, kPrecision };

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void check_index(const Dims& d, std::size_t u, std::size_t j, std::size_t i) {
  if (u >= d.learners || j >= d.questions || i >= d.attempts) throw std::out_of_range("predict_cell: index out of range");
}

void require_entries(const Observations& obs) {
  if (obs.entries.empty()) throw DataError("no observed cells to fit");
}

// Positive init with expected product near 0.5.
Factors init_factors(const Dims& d, std::size_t rank, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInit));
  const double c = std::cbrt(0.5 / static_cast<double>(rank));
  auto fill = [&](std::size_t rows) {
    Eigen::MatrixXd m(rows, rank);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index k = 0; k < m.cols(); ++k) m(r, k) = c * rng.uniform(0.5, 1.5);
    return m;
  };
  Factors f;
  f.learner = fill(d.learners);
  f.question = fill(d.questions);
  f.attempt = fill(d.attempts);
  return f;
}

// Entry indices grouped by each mode's row.
struct ModeIndex {
  std::vector<std::vector<std::size_t>> learner, question, attempt;
};

ModeIndex index_modes(const Observations& obs) {
  ModeIndex ix;
  ix.learner.resize(obs.dims.learners);
  ix.question.resize(obs.dims.questions);
  ix.attempt.resize(obs.dims.attempts);
  for (std::size_t k = 0; k < obs.entries.size(); ++k) {
    const auto& e = obs.entries[k];
    ix.learner[e.learner].push_back(k);
    ix.question[e.question].push_back(k);
    ix.attempt[e.attempt].push_back(k);
  }
  return ix;
}

// z = elementwise product of the two factor rows other than `mode`'s.
Eigen::VectorXd design_row(const Factors& f, const Observations::Entry& e, int mode) {
  switch (mode) {
    case 0:
      return f.question.row(e.question).cwiseProduct(f.attempt.row(e.attempt)).transpose();
    case 1:
      return f.learner.row(e.learner).cwiseProduct(f.attempt.row(e.attempt)).transpose();
    default:
      return f.learner.row(e.learner).cwiseProduct(f.question.row(e.question)).transpose();
  }
}

Eigen::MatrixXd& mode_matrix(Factors& f, int mode) {
  return mode == 0 ? f.learner : mode == 1 ? f.question : f.attempt;
}

const std::vector<std::vector<std::size_t>>& mode_rows(const ModeIndex& ix, int mode) {
  return mode == 0 ? ix.learner : mode == 1 ? ix.question : ix.attempt;
}

void solve_mode(Factors& f, const Observations& obs, const ModeIndex& ix, int mode, double lambda) {
  const std::size_t r = f.rank();
  auto& target = mode_matrix(f, mode);
  const auto& rows = mode_rows(ix, mode);
  for (std::size_t row = 0; row < rows.size(); ++row) {
    Eigen::MatrixXd gram = lambda * Eigen::MatrixXd::Identity(r, r);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
    for (std::size_t k : rows[row]) {
      const auto z = design_row(f, obs.entries[k], mode);
      gram.noalias() += z * z.transpose();
      rhs.noalias() += obs.entries[k].value * z;
    }
    target.row(row) = gram.ldlt().solve(rhs).transpose();
  }
}

void project_attempt_columns(Eigen::MatrixXd& c) {
  for (Eigen::Index k = 0; k < c.cols(); ++k)
    for (Eigen::Index i = 1; i < c.rows(); ++i) c(i, k) = std::max(c(i, k), c(i - 1, k));
}

template <typename Predict>
DenseTensor impute_with(const PerformanceTensor& t, const Dims& model_dims, Predict predict) {
  const Dims& d = t.dims();
  if (!(d.learners == model_dims.learners && d.questions == model_dims.questions && d.attempts == model_dims.attempts)) {
    throw std::invalid_argument("factor_impute: tensor dims do not match the model");
  }
  std::vector<double> out(d.cell_count());
  std::size_t k = 0;
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < d.attempts; ++i, ++k) {
        const Outcome o = t.at(u, j, i);
        out[k] = is_observed(o) ? outcome_value(o) : predict(u, j, i);
      }
  return DenseTensor(d, std::move(out));
}

// Normal-Wishart posterior draw of (mu, Lambda) given factor rows, with mu0 = 0,
// beta0 = 1, nu0 = r, W0 = I.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> sample_hyper(const Eigen::MatrixXd& x, Rng& rng) {
  const Eigen::Index r = x.cols();
  const double n = static_cast<double>(x.rows());
  const double beta0 = 1.0;
  const double nu0 = static_cast<double>(r);
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const Eigen::MatrixXd scatter = centered.transpose() * centered;
  Eigen::MatrixXd w_inv = Eigen::MatrixXd::Identity(r, r) + scatter + (beta0 * n / (beta0 + n)) * mean * mean.transpose();
  w_inv = 0.5 * (w_inv + w_inv.transpose());
  const Eigen::MatrixXd w = w_inv.inverse();
  const double nu = nu0 + n;
  const double beta = beta0 + n;
  const Eigen::VectorXd mu_star = (n / beta) * mean;

  // Bartlett decomposition.
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(0.5 * (w + w.transpose())).matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    a(i, i) = std::sqrt(rng.gamma((nu - static_cast<double>(i)) / 2.0, 2.0));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd la = l * a;
  const Eigen::MatrixXd lambda = la * la.transpose();

  Eigen::VectorXd eps(r);
  for (Eigen::Index i = 0; i < r; ++i) eps(i) = rng.normal();
  const Eigen::MatrixXd cov_chol = Eigen::LLT<Eigen::MatrixXd>(beta * lambda).matrixU();
  const Eigen::VectorXd mu = mu_star + cov_chol.triangularView<Eigen::Upper>().solve(eps);
  return {mu, lambda};
}

void sample_rows(Factors& f, const Observations& obs, const ModeIndex& ix, int mode, double alpha,
                 const Eigen::VectorXd& mu, const Eigen::MatrixXd& lambda, std::uint64_t seed,
                 std::span<const std::uint64_t> keys) {
  const std::size_t r = f.rank();
  auto& target = mode_matrix(f, mode);
  const auto& rows = mode_rows(ix, mode);
  const Eigen::VectorXd prior = lambda * mu;
  for (std::size_t row = 0; row < rows.size(); ++row) {
    Eigen::MatrixXd prec = lambda;
    Eigen::VectorXd rhs = prior;
    for (std::size_t k : rows[row]) {
      const auto z = design_row(f, obs.entries[k], mode);
      prec.noalias() += alpha * z * z.transpose();
      rhs.noalias() += alpha * obs.entries[k].value * z;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(prec);
    const Eigen::VectorXd mean = llt.solve(rhs);
    Rng rng(derive_seed(seed, keys.empty() ? row : keys[row]));
    Eigen::VectorXd eps(r);
    for (std::size_t k = 0; k < r; ++k) eps(static_cast<Eigen::Index>(k)) = rng.normal();
    // prec = L L^T, so L^{-T} eps has covariance prec^{-1}.
    target.row(row) = (mean + llt.matrixU().solve(eps)).transpose();
  }
}

}  // namespace

Observations observations(const PerformanceTensor& t) {
  Observations obs{t.dims(), {}, {}};
  for (const auto& c : t.observed_cells()) {
    obs.entries.push_back({c.learner, c.question, c.attempt, outcome_value(t.at(c))});
  }
  return obs;
}

Dims Factors::dims() const {
  return Dims{static_cast<std::size_t>(learner.rows()), static_cast<std::size_t>(question.rows()),
              static_cast<std::size_t>(attempt.rows())};
}

double Factors::product(std::size_t u, std::size_t j, std::size_t i) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < learner.cols(); ++k) {
    s += learner(static_cast<Eigen::Index>(u), k) * question(static_cast<Eigen::Index>(j), k) *
         attempt(static_cast<Eigen::Index>(i), k);
  }
  return s;
}

void TfConfig::validate() const {
  if (rank == 0) throw std::invalid_argument("tf rank must be >= 1");
  if (lambda_reg < 0.0 || lambda_rank < 0.0) throw std::invalid_argument("tf penalties must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("tf learning_rate must be > 0");
}

void CpdConfig::validate() const {
  if (rank == 0) throw std::invalid_argument("cpd rank must be >= 1");
  if (lambda_reg < 0.0) throw std::invalid_argument("cpd lambda_reg must be >= 0");
}

void BptfConfig::validate() const {
  if (rank == 0) throw std::invalid_argument("bptf rank must be >= 1");
  if (gibbs_steps <= burn_in) throw std::invalid_argument("bptf gibbs_steps must exceed burn_in");
}

nlohmann::json to_json(const TfConfig& c) {
  nlohmann::ordered_json j;
  j["rank"] = c.rank;
  j["lambda_reg"] = c.lambda_reg;
  j["lambda_rank"] = c.lambda_rank;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  return j;
}

nlohmann::json to_json(const CpdConfig& c) {
  nlohmann::ordered_json j;
  j["rank"] = c.rank;
  j["lambda_reg"] = c.lambda_reg;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["project_attempts"] = c.project_attempts;
  return j;
}

nlohmann::json to_json(const BptfConfig& c) {
  nlohmann::ordered_json j;
  j["rank"] = c.rank;
  j["gibbs_steps"] = c.gibbs_steps;
  j["burn_in"] = c.burn_in;
  j["seed"] = c.seed;
  return j;
}

TfConfig tf_config_from_json(const nlohmann::json& j) {
  TfConfig c;
  c.rank = j.value("rank", c.rank);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.lambda_rank = j.value("lambda_rank", c.lambda_rank);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

CpdConfig cpd_config_from_json(const nlohmann::json& j) {
  CpdConfig c;
  c.rank = j.value("rank", c.rank);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.project_attempts = j.value("project_attempts", c.project_attempts);
  c.validate();
  return c;
}

BptfConfig bptf_config_from_json(const nlohmann::json& j) {
  BptfConfig c;
  c.rank = j.value("rank", c.rank);
  c.gibbs_steps = j.value("gibbs_steps", c.gibbs_steps);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double predict_cell(const FactorModel& m, std::size_t u, std::size_t j, std::size_t i) {
  check_index(m.factors.dims(), u, j, i);
  return clamp01(m.factors.product(u, j, i));
}

double predict_cell(const CpdModel& m, std::size_t u, std::size_t j, std::size_t i) {
  check_index(m.factors.dims(), u, j, i);
  return clamp01(m.factors.product(u, j, i));
}

double predict_cell(const BptfModel& m, std::size_t u, std::size_t j, std::size_t i) {
  if (m.samples.empty()) throw std::logic_error("BPTF model has no kept samples");
  check_index(m.samples.front().dims(), u, j, i);
  double s = 0.0;
  for (const auto& f : m.samples) s += f.product(u, j, i);
  return clamp01(s / static_cast<double>(m.samples.size()));
}

double rank_violation(const Factors& f) {
  const Dims d = f.dims();
  double total = 0.0;
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i + 1 < d.attempts; ++i) {
        const double drop = std::max(0.0, f.product(u, j, i) - f.product(u, j, i + 1));
        total += drop * drop;
      }
  return total;
}

double observed_sse(const Factors& f, const Observations& obs) {
  double sse = 0.0;
  for (const auto& e : obs.entries) {
    const double r = e.value - f.product(e.learner, e.question, e.attempt);
    sse += r * r;
  }
  return sse;
}

FactorModel tf_train(const Observations& obs, const TfConfig& cfg) {
  cfg.validate();
  require_entries(obs);
  const Dims& d = obs.dims;
  const std::size_t r = cfg.rank;
  Factors f = init_factors(d, r, cfg.seed);

  // Parameters live in one flat buffer for the optimizer; the matrices are views into it.
  const std::size_t nu = d.learners * r, nq = d.questions * r, na = d.attempts * r;
  std::vector<double> flat(nu + nq + na);
  std::vector<double> grad(flat.size());
  using RowMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  RowMap U(flat.data(), d.learners, r), Q(flat.data() + nu, d.questions, r), A(flat.data() + nu + nq, d.attempts, r);
  RowMap gU(grad.data(), d.learners, r), gQ(grad.data() + nu, d.questions, r), gA(grad.data() + nu + nq, d.attempts, r);
  U = f.learner;
  Q = f.question;
  A = f.attempt;

  dg::AdamState opt(flat.size(), cfg.learning_rate);
  std::vector<double> dpred(d.cell_count());
  auto cell = [&](std::size_t u, std::size_t j, std::size_t i) { return (u * d.questions + j) * d.attempts + i; };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(dpred.begin(), dpred.end(), 0.0);
    for (const auto& e : obs.entries) {
      const double p = U.row(e.learner).dot(Q.row(e.question).cwiseProduct(A.row(e.attempt)));
      dpred[cell(e.learner, e.question, e.attempt)] += -2.0 * (e.value - p);
    }
    if (cfg.lambda_rank > 0.0 && d.attempts > 1) {
      for (std::size_t u = 0; u < d.learners; ++u)
        for (std::size_t j = 0; j < d.questions; ++j) {
          const Eigen::RowVectorXd uq = U.row(u).cwiseProduct(Q.row(j));
          double prev = uq.dot(A.row(0));
          for (std::size_t i = 0; i + 1 < d.attempts; ++i) {
            const double next = uq.dot(A.row(i + 1));
            const double drop = prev - next;
            if (drop > 0.0) {
              dpred[cell(u, j, i)] += 2.0 * cfg.lambda_rank * drop;
              dpred[cell(u, j, i + 1)] -= 2.0 * cfg.lambda_rank * drop;
            }
            prev = next;
          }
        }
    }
    gU = 2.0 * cfg.lambda_reg * U;
    gQ = 2.0 * cfg.lambda_reg * Q;
    gA = 2.0 * cfg.lambda_reg * A;
    for (std::size_t u = 0; u < d.learners; ++u)
      for (std::size_t j = 0; j < d.questions; ++j)
        for (std::size_t i = 0; i < d.attempts; ++i) {
          const double g = dpred[cell(u, j, i)];
          if (g == 0.0) continue;
          gU.row(u) += g * Q.row(j).cwiseProduct(A.row(i));
          gQ.row(j) += g * U.row(u).cwiseProduct(A.row(i));
          gA.row(i) += g * U.row(u).cwiseProduct(Q.row(j));
        }
    dg::adam_step(flat, grad, opt);
  }

  f.learner = U;
  f.question = Q;
  f.attempt = A;
  return FactorModel{std::move(f), cfg.lambda_reg, cfg.lambda_rank};
}

FactorModel tf_train(const PerformanceTensor& t, const TfConfig& cfg) { return tf_train(observations(t), cfg); }

void als_sweep(Factors& f, const Observations& obs, double lambda_reg, bool project_attempts) {
  const double lambda = std::max(lambda_reg, kRidgeFloor);
  const auto ix = index_modes(obs);
  for (int mode = 0; mode < 3; ++mode) solve_mode(f, obs, ix, mode, lambda);
  if (project_attempts) project_attempt_columns(f.attempt);
}

CpdModel cpd_train(const Observations& obs, const CpdConfig& cfg) {
  cfg.validate();
  require_entries(obs);
  Factors f = init_factors(obs.dims, cfg.rank, cfg.seed);
  const double lambda = std::max(cfg.lambda_reg, kRidgeFloor);
  const auto ix = index_modes(obs);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (int mode = 0; mode < 3; ++mode) solve_mode(f, obs, ix, mode, lambda);
    if (cfg.project_attempts) project_attempt_columns(f.attempt);
  }
  return CpdModel{std::move(f)};
}

CpdModel cpd_train(const PerformanceTensor& t, const CpdConfig& cfg) { return cpd_train(observations(t), cfg); }

BptfModel bptf_train(const Observations& obs, const BptfConfig& cfg) {
  cfg.validate();
  require_entries(obs);
  if (!obs.learner_keys.empty() && obs.learner_keys.size() != obs.dims.learners) {
    throw std::invalid_argument("learner_keys must have one entry per learner");
  }
  Factors f = init_factors(obs.dims, cfg.rank, cfg.seed);
  const auto ix = index_modes(obs);
  const double n = static_cast<double>(obs.entries.size());
  double alpha = 1.0;

  BptfModel model;
  model.burn_in = cfg.burn_in;
  for (std::size_t step = 0; step < cfg.gibbs_steps; ++step) {
    Rng hyper_rng(derive_seed(cfg.seed, kHyper, step));
    const std::uint64_t tags[3] = {kLearnerRow, kQuestionRow, kAttemptRow};
    for (int mode = 0; mode < 3; ++mode) {
      const auto [mu, lambda] = sample_hyper(mode_matrix(f, mode), hyper_rng);
      const std::span<const std::uint64_t> keys =
          mode == 0 ? std::span<const std::uint64_t>(obs.learner_keys) : std::span<const std::uint64_t>{};
      sample_rows(f, obs, ix, mode, alpha, mu, lambda, derive_seed(cfg.seed, tags[mode], step), keys);
    }
    Rng prec_rng(derive_seed(cfg.seed, kPrecision, step));
    // Gamma(1, 1) prior: shape 1 + n/2, rate 1 + SSE/2.
    alpha = prec_rng.gamma(1.0 + n / 2.0, 1.0 / (1.0 + observed_sse(f, obs) / 2.0));
    if (step >= cfg.burn_in) {
      model.samples.push_back(f);
      model.precision.push_back(alpha);
    }
  }
  return model;
}

BptfModel bptf_train(const PerformanceTensor& t, const BptfConfig& cfg) { return bptf_train(observations(t), cfg); }

DenseTensor factor_impute(const FactorModel& m, const PerformanceTensor& t) {
  return impute_with(t, m.factors.dims(), [&](std::size_t u, std::size_t j, std::size_t i) { return predict_cell(m, u, j, i); });
}

DenseTensor factor_impute(const CpdModel& m, const PerformanceTensor& t) {
  return impute_with(t, m.factors.dims(), [&](std::size_t u, std::size_t j, std::size_t i) { return predict_cell(m, u, j, i); });
}

DenseTensor factor_impute(const BptfModel& m, const PerformanceTensor& t) {
  if (m.samples.empty()) throw std::logic_error("BPTF model has no kept samples");
  return impute_with(t, m.samples.front().dims(),
                     [&](std::size_t u, std::size_t j, std::size_t i) { return predict_cell(m, u, j, i); });
}

// Model files: <name>.json manifest and <name>.bin holding each factor set's three
// matrices row-major, then (BPTF only) the precision draws.
namespace {

void write_factors(std::ostream& out, const Factors& f) {
  for (const Eigen::MatrixXd* m : {&f.learner, &f.question, &f.attempt}) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = *m;
    dg::write_f64_le(out, std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
  }
}

Factors read_factors(std::istream& in, const Dims& d, std::size_t r) {
  auto read = [&](std::size_t rows) {
    const auto v = dg::read_f64_le(in, rows * r);
    return Eigen::MatrixXd(
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), rows, r));
  };
  Factors f;
  f.learner = read(d.learners);
  f.question = read(d.questions);
  f.attempt = read(d.attempts);
  return f;
}

void write_model(const std::filesystem::path& dir, const std::string& name, const std::string& kind,
                 const std::vector<const Factors*>& sets, std::span<const double> precision, nlohmann::ordered_json extra) {
  const Dims d = sets.front()->dims();
  nlohmann::ordered_json manifest;
  manifest["format"] = "sparsekt-factors-v1";
  manifest["kind"] = kind;
  manifest["dims"] = {d.learners, d.questions, d.attempts};
  manifest["rank"] = sets.front()->rank();
  manifest["factor_sets"] = sets.size();
  manifest["precision_count"] = precision.size();
  manifest["binary"] = name + ".bin";
  for (auto& [k, v] : extra.items()) manifest[k] = v;

  std::filesystem::create_directories(dir);
  std::ofstream js(dir / (name + ".json"));
  if (!js) throw std::runtime_error("cannot write " + (dir / (name + ".json")).string());
  js << manifest.dump(2) << "\n";
  std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + (dir / (name + ".bin")).string());
  for (const Factors* f : sets) write_factors(bin, *f);
  dg::write_f64_le(bin, precision);
}

struct RawModel {
  nlohmann::json manifest;
  std::vector<Factors> sets;
  std::vector<double> precision;
};

RawModel read_model(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream js(path);
  if (!js) throw std::runtime_error("cannot read " + path.string());
  RawModel m;
  m.manifest = nlohmann::json::parse(js);
  if (m.manifest.at("kind").get<std::string>() != kind) {
    throw std::runtime_error(path.string() + " holds a " + m.manifest.at("kind").get<std::string>() + " model, expected " + kind);
  }
  const auto& dj = m.manifest.at("dims");
  const Dims d{dj.at(0).get<std::size_t>(), dj.at(1).get<std::size_t>(), dj.at(2).get<std::size_t>()};
  const auto r = m.manifest.at("rank").get<std::size_t>();
  const auto bin_path = path.parent_path() / m.manifest.at("binary").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
  const auto sets = m.manifest.at("factor_sets").get<std::size_t>();
  for (std::size_t s = 0; s < sets; ++s) m.sets.push_back(read_factors(bin, d, r));
  m.precision = dg::read_f64_le(bin, m.manifest.at("precision_count").get<std::size_t>());
  return m;
}

}  // namespace

void save_factor_model(const FactorModel& m, const std::filesystem::path& dir, const std::string& name) {
  nlohmann::ordered_json extra;
  extra["lambda_reg"] = m.lambda_reg;
  extra["lambda_rank"] = m.lambda_rank;
  write_model(dir, name, "tf", {&m.factors}, {}, extra);
}

void save_factor_model(const CpdModel& m, const std::filesystem::path& dir, const std::string& name) {
  write_model(dir, name, "cpd", {&m.factors}, {}, nlohmann::ordered_json::object());
}

void save_factor_model(const BptfModel& m, const std::filesystem::path& dir, const std::string& name) {
  if (m.samples.empty()) throw std::logic_error("BPTF model has no kept samples");
  std::vector<const Factors*> sets;
  for (const auto& f : m.samples) sets.push_back(&f);
  nlohmann::ordered_json extra;
  extra["burn_in"] = m.burn_in;
  write_model(dir, name, "bptf", sets, m.precision, extra);
}

FactorModel load_tf_model(const std::filesystem::path& manifest) {
  auto raw = read_model(manifest, "tf");
  return FactorModel{std::move(raw.sets.at(0)), raw.manifest.at("lambda_reg").get<double>(),
                     raw.manifest.at("lambda_rank").get<double>()};
}

CpdModel load_cpd_model(const std::filesystem::path& manifest) {
  auto raw = read_model(manifest, "cpd");
  return CpdModel{std::move(raw.sets.at(0))};
}

BptfModel load_bptf_model(const std::filesystem::path& manifest) {
  auto raw = read_model(manifest, "bptf");
  return BptfModel{std::move(raw.sets), std::move(raw.precision), raw.manifest.at("burn_in").get<std::size_t>()};
}

}  // namespace sparsekt
