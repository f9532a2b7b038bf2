#include "sparsekt/bkt.hpp"

#include <algorithm>
#include <array>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "sparsekt/random.hpp"

namespace sparsekt {

namespace {

constexpr double kLo = 1e-4;
constexpr double kHi = 1.0 - 1e-4;
constexpr double kCap = 0.5;

BktParams clip(BktParams p) {
  p.L0 = std::clamp(p.L0, kLo, kHi);
  p.T = std::clamp(p.T, kLo, kHi);
  p.G = std::clamp(p.G, kLo, kCap);
  p.S = std::clamp(p.S, kLo, kCap);
  return p;
}

struct Emission {
  double unmastered, mastered;
};

Emission emission(const BktParams& p, std::uint8_t obs) {
  return obs ? Emission{p.G, 1.0 - p.S} : Emission{1.0 - p.G, p.S};
}

struct Counts {
  double l0 = 0, weight = 0;
  double learn = 0, stay_unmastered = 0;
  double guess = 0, unmastered = 0;
  double slip = 0, mastered = 0;
};

// Scaled forward-backward on the absorbing two-state chain; adds expected counts and
// returns log P(seq).
double accumulate(const BktParams& p, const ResponseSequence& seq, double w, Counts& c) {
  const std::size_t n = seq.size();
  std::vector<std::array<double, 2>> a(n), b(n);
  std::vector<double> scale(n);
  for (std::size_t t = 0; t < n; ++t) {
    const Emission e = emission(p, seq[t]);
    double a0, a1;
    if (t == 0) {
      a0 = (1.0 - p.L0) * e.unmastered;
      a1 = p.L0 * e.mastered;
    } else {
      a0 = a[t - 1][0] * (1.0 - p.T) * e.unmastered;
      a1 = (a[t - 1][0] * p.T + a[t - 1][1]) * e.mastered;
    }
    scale[t] = a0 + a1;
    a[t] = {a0 / scale[t], a1 / scale[t]};
  }
  b[n - 1] = {1.0, 1.0};
  for (std::size_t t = n - 1; t-- > 0;) {
    const Emission e = emission(p, seq[t + 1]);
    const double b0 = (1.0 - p.T) * e.unmastered * b[t + 1][0] + p.T * e.mastered * b[t + 1][1];
    const double b1 = e.mastered * b[t + 1][1];
    b[t] = {b0 / scale[t + 1], b1 / scale[t + 1]};
  }

  double ll = 0.0;
  for (double s : scale) ll += std::log(s);

  c.weight += w;
  for (std::size_t t = 0; t < n; ++t) {
    const double g0 = a[t][0] * b[t][0];
    const double g1 = a[t][1] * b[t][1];
    if (t == 0) c.l0 += w * g1;
    c.unmastered += w * g0;
    c.mastered += w * g1;
    if (seq[t]) {
      c.guess += w * g0;
    } else {
      c.slip += w * g1;
    }
    if (t + 1 < n) {
      const Emission e = emission(p, seq[t + 1]);
      c.learn += w * a[t][0] * p.T * e.mastered * b[t + 1][1] / scale[t + 1];
      c.stay_unmastered += w * a[t][0] * (1.0 - p.T) * e.unmastered * b[t + 1][0] / scale[t + 1];
    }
  }
  return ll;
}

// Separable M-step; each ratio maximizes a concave one-parameter term, so clipping it to
// the box keeps the EM step monotone.
BktParams maximize(const Counts& c, const BktParams& prev) {
  BktParams p = prev;
  if (c.weight > 0) p.L0 = c.l0 / c.weight;
  if (c.learn + c.stay_unmastered > 0) p.T = c.learn / (c.learn + c.stay_unmastered);
  if (c.unmastered > 0) p.G = c.guess / c.unmastered;
  if (c.mastered > 0) p.S = c.slip / c.mastered;
  return clip(p);
}

BktParams random_start(Rng& rng) {
  return clip(BktParams{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.45),
                        rng.uniform(0.05, 0.45)});
}

void check_sequence(std::span<const std::uint8_t> seq) {
  if (seq.empty()) throw std::invalid_argument("empty response sequence");
  for (auto v : seq) {
    if (v > 1) throw std::invalid_argument("response sequence values must be 0 or 1");
  }
}

}  // namespace

PerformanceTensor binarize(const DenseTensor& d, double threshold, BinarizeMode mode, std::uint64_t seed) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize threshold must be in (0, 1)");
  PerformanceTensor out(d.dims());
  Rng rng(seed);
  const Dims& dims = d.dims();
  for (std::size_t u = 0; u < dims.learners; ++u)
    for (std::size_t j = 0; j < dims.questions; ++j)
      for (std::size_t i = 0; i < dims.attempts; ++i) {
        const double v = d.at(u, j, i);
        const bool correct = mode == BinarizeMode::Threshold ? v >= threshold : rng.bernoulli(v);
        out.set(u, j, i, correct ? Outcome::Correct : Outcome::Incorrect);
      }
  return out;
}

SequencePrediction predict_sequence(const BktParams& p, std::span<const std::uint8_t> seq) {
  SequencePrediction out;
  out.p_correct.reserve(seq.size());
  double L = p.L0;
  for (std::uint8_t obs : seq) {
    out.p_correct.push_back(L * (1.0 - p.S) + (1.0 - L) * p.G);
    const double num = obs ? L * (1.0 - p.S) : L * p.S;
    const double den = num + (obs ? (1.0 - L) * p.G : (1.0 - L) * (1.0 - p.G));
    double post = 0.0;
    if (den > 0.0) {
      post = num / den;
    } else {
      out.degenerate = true;
    }
    L = post + (1.0 - post) * p.T;
  }
  return out;
}

void BktConfig::validate() const {
  if (restarts == 0) throw std::invalid_argument("bkt restarts must be >= 1");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("bkt tolerance must be >= 0");
}

nlohmann::json to_json(const BktConfig& c) {
  return {{"restarts", c.restarts}, {"max_iterations", c.max_iterations}, {"tolerance", c.tolerance}, {"seed", c.seed}};
}

BktConfig bkt_config_from_json(const nlohmann::json& j) {
  BktConfig c;
  c.restarts = j.value("restarts", c.restarts);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<SequenceGroup> group_sequences(std::span<const ResponseSequence> sequences) {
  std::map<ResponseSequence, std::size_t> counts;
  for (const auto& s : sequences) {
    check_sequence(s);
    ++counts[s];
  }
  std::vector<SequenceGroup> groups;
  groups.reserve(counts.size());
  for (auto& [seq, n] : counts) groups.push_back({seq, n});
  return groups;
}

double log_likelihood(const BktParams& p, std::span<const SequenceGroup> groups) {
  Counts scratch;
  double ll = 0.0;
  for (const auto& g : groups) ll += static_cast<double>(g.count) * accumulate(p, g.seq, 1.0, scratch);
  return ll;
}

EmTrace run_em(std::span<const SequenceGroup> groups, BktParams init, const BktConfig& cfg) {
  if (groups.empty()) throw std::invalid_argument("run_em: no sequences");
  EmTrace trace{clip(init), {}};
  trace.log_likelihood.push_back(log_likelihood(trace.params, groups));
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    Counts c;
    for (const auto& g : groups) accumulate(trace.params, g.seq, static_cast<double>(g.count), c);
    trace.params = maximize(c, trace.params);
    trace.log_likelihood.push_back(log_likelihood(trace.params, groups));
    const auto n = trace.log_likelihood.size();
    if (std::abs(trace.log_likelihood[n - 1] - trace.log_likelihood[n - 2]) < cfg.tolerance) break;
  }
  return trace;
}

BktFit fit_question(std::span<const ResponseSequence> sequences, const BktConfig& cfg) {
  cfg.validate();
  if (sequences.empty()) throw std::invalid_argument("fit_question: no sequences");
  const auto groups = group_sequences(sequences);
  Rng rng(derive_seed(cfg.seed, 1));
  std::optional<EmTrace> best;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    auto trace = run_em(groups, random_start(rng), cfg);
    if (!best || trace.log_likelihood.back() > best->log_likelihood.back()) best = std::move(trace);
  }

  BktFit fit;
  fit.params = best->params;
  fit.log_likelihood = best->log_likelihood.back();
  fit.sequences = sequences.size();
  double sse = 0.0;
  std::size_t steps = 0;
  for (const auto& g : groups) {
    const auto pred = predict_sequence(fit.params, g.seq);
    for (std::size_t t = 0; t < g.seq.size(); ++t) {
      const double e = pred.p_correct[t] - g.seq[t];
      sse += static_cast<double>(g.count) * e * e;
    }
    steps += g.count * g.seq.size();
  }
  fit.rmse = std::sqrt(sse / static_cast<double>(steps));
  return fit;
}

std::vector<ResponseSequence> question_sequences(const PerformanceTensor& t, std::size_t question) {
  const Dims& d = t.dims();
  if (question >= d.questions) throw std::out_of_range("question index out of range");
  std::vector<ResponseSequence> out;
  for (std::size_t u = 0; u < d.learners; ++u) {
    ResponseSequence s;
    for (std::size_t i = 0; i < d.attempts; ++i) {
      const Outcome o = t.at(u, question, i);
      if (is_observed(o)) s.push_back(o == Outcome::Correct ? 1 : 0);
    }
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::optional<BktFit>> fit_questions(const PerformanceTensor& t, const BktConfig& cfg) {
  std::vector<std::optional<BktFit>> fits(t.dims().questions);
  for (std::size_t j = 0; j < fits.size(); ++j) {
    const auto seqs = question_sequences(t, j);
    if (!seqs.empty()) fits[j] = fit_question(seqs, cfg);
  }
  return fits;
}

double bkt_rmse(std::span<const std::optional<BktFit>> fits, const PerformanceTensor& t) {
  if (fits.size() != t.dims().questions) throw std::invalid_argument("bkt_rmse: one fit slot per question required");
  double sse = 0.0;
  std::size_t steps = 0;
  for (std::size_t j = 0; j < fits.size(); ++j) {
    const auto seqs = question_sequences(t, j);
    if (seqs.empty()) continue;
    if (!fits[j]) throw std::invalid_argument("bkt_rmse: question " + std::to_string(j) + " has data but no fit");
    for (const auto& s : seqs) {
      const auto pred = predict_sequence(fits[j]->params, s);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double e = pred.p_correct[k] - s[k];
        sse += e * e;
      }
      steps += s.size();
    }
  }
  if (steps == 0) throw DataError("bkt_rmse: no observed steps");
  return std::sqrt(sse / static_cast<double>(steps));
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t_cdf: df must be > 0");
  if (std::isinf(t)) return t < 0 ? 0.0 : 1.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * boost::math::ibeta(df / 2.0, 0.5, x);
  return t < 0.0 ? tail : 1.0 - tail;
}

TTestResult paired_t_test_one_sided(std::span<const double> original, std::span<const double> imputed) {
  if (original.size() != imputed.size()) throw std::invalid_argument("paired t-test: length mismatch");
  const std::size_t n = original.size();
  if (n < 2) throw std::invalid_argument("paired t-test: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) mean += imputed[k] - original[k];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = imputed[k] - original[k] - mean;
    ss += e * e;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) throw std::invalid_argument("paired t-test: differences have zero variance");
  TTestResult r;
  r.df = n - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_cdf(r.t, static_cast<double>(r.df));
  return r;
}

void write_fit_report(std::ostream& out, std::span<const std::optional<BktFit>> fits,
                      std::span<const std::string> question_ids) {
  if (fits.size() != question_ids.size()) throw std::invalid_argument("fit report: one id per question required");
  out << "question_id,L0,T,G,S,loglik,rmse,n_sequences\n";
  const auto old_precision = out.precision(10);
  for (std::size_t j = 0; j < fits.size(); ++j) {
    if (!fits[j]) continue;
    const auto& f = *fits[j];
    out << question_ids[j] << ',' << f.params.L0 << ',' << f.params.T << ',' << f.params.G << ',' << f.params.S << ','
        << f.log_likelihood << ',' << f.rmse << ',' << f.sequences << '\n';
  }
  out.precision(old_precision);
}

}  // namespace sparsekt
