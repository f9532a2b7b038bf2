#include "sparsekt/gain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sparsekt/random.hpp"

namespace sparsekt {

using dg::Mode;
using dg::Shape;
using dg::ValueGrid;

namespace {

constexpr double kProbFloor = 1e-7;

enum SeedTag : std::uint64_t {
  kGenInit = 1,
  kDiscInit,
  kOrder,
  kNoise,
  kHint,
  kGenDropout,
  kDiscDropout,
};

// channel 0: observed values with noise in missing cells, 1: mask, 2: raw noise
ValueGrid generator_input(const LearnerSlice& slice, const MaskMatrix& mask, const CellMatrix& noise) {
  const std::size_t n = slice.size();
  ValueGrid x(Shape{3, slice.rows(), slice.cols()});
  for (std::size_t k = 0; k < n; ++k) {
    const bool obs = mask.observed(k);
    x[k] = obs ? *slice[k] : noise.values[k];
    x[n + k] = obs ? 1.0 : 0.0;
    x[2 * n + k] = noise.values[k];
  }
  return x;
}

ValueGrid discriminator_input(const ValueGrid& imputed, const CellMatrix& hint) {
  const std::size_t n = imputed.size();
  ValueGrid x(Shape{2, imputed.shape().rows, imputed.shape().cols});
  std::copy(imputed.values().begin(), imputed.values().end(), x.values().begin());
  std::copy(hint.values.begin(), hint.values.end(), x.values().begin() + static_cast<std::ptrdiff_t>(n));
  return x;
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace

void GainConfig::validate() const {
  if (!(hint_rate > 0.0 && hint_rate <= 1.0)) throw std::invalid_argument("hint_rate must be in (0, 1]");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise_scale must be >= 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  net.validate();
}

nlohmann::json to_json(const GainConfig& c) {
  nlohmann::ordered_json j;
  j["hint_rate"] = c.hint_rate;
  j["noise_scale"] = c.noise_scale;
  j["alpha"] = c.alpha;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["net"] = to_json(c.net);
  j["seed"] = c.seed;
  j["early_stop_tol"] = c.early_stop_tol;
  j["patience"] = c.patience;
  return j;
}

GainConfig gain_config_from_json(const nlohmann::json& j) {
  GainConfig c;
  c.hint_rate = j.value("hint_rate", c.hint_rate);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  c.alpha = j.value("alpha", c.alpha);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("net")) c.net = conv_stack_from_json(j.at("net"));
  if (j.contains("dropout_rate")) c.net.dropout_rate = j.at("dropout_rate").get<double>();
  c.seed = j.value("seed", c.seed);
  c.early_stop_tol = j.value("early_stop_tol", c.early_stop_tol);
  c.patience = j.value("patience", c.patience);
  c.validate();
  return c;
}

CellMatrix make_noise(std::size_t rows, std::size_t cols, double noise_scale, std::uint64_t seed) {
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("noise_scale must be >= 0");
  CellMatrix m{rows, cols, std::vector<double>(rows * cols, 0.0)};
  if (noise_scale == 0.0) return m;
  Rng rng(seed);
  for (auto& v : m.values) v = noise_scale * rng.uniform();
  return m;
}

CellMatrix make_hint(const MaskMatrix& mask, double hint_rate, std::uint64_t seed) {
  if (!(hint_rate > 0.0 && hint_rate <= 1.0)) throw std::invalid_argument("hint_rate must be in (0, 1]");
  Rng rng(seed);
  CellMatrix h{mask.rows(), mask.cols(), std::vector<double>(mask.size())};
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const bool revealed = hint_rate >= 1.0 || rng.bernoulli(hint_rate);
    h.values[k] = revealed ? mask.value(k) : 0.5;
  }
  return h;
}

ValueGrid merge(const LearnerSlice& slice, const MaskMatrix& mask, const ValueGrid& generated) {
  require_same_size(slice.size(), mask.size(), "merge");
  require_same_size(slice.size(), generated.size(), "merge");
  if (slice.rows() != mask.rows() || slice.cols() != mask.cols()) throw std::invalid_argument("merge: shape mismatch");
  ValueGrid out(Shape{1, slice.rows(), slice.cols()});
  for (std::size_t k = 0; k < slice.size(); ++k) {
    if (mask.observed(k)) {
      if (!slice[k]) throw std::invalid_argument("merge: mask marks a missing cell as observed");
      out[k] = *slice[k];
    } else {
      out[k] = generated[k];
    }
  }
  return out;
}

LossWithGrad discriminator_loss(std::span<const double> d_out, const MaskMatrix& mask) {
  require_same_size(d_out.size(), mask.size(), "discriminator_loss");
  const double n = static_cast<double>(d_out.size());
  LossWithGrad r;
  r.grad.resize(d_out.size());
  for (std::size_t k = 0; k < d_out.size(); ++k) {
    const double d = std::clamp(d_out[k], kProbFloor, 1.0 - kProbFloor);
    if (mask.observed(k)) {
      r.value -= std::log(d);
      r.grad[k] = -1.0 / (d * n);
    } else {
      r.value -= std::log(1.0 - d);
      r.grad[k] = 1.0 / ((1.0 - d) * n);
    }
  }
  r.value /= n;
  return r;
}

GeneratorLoss generator_loss(std::span<const double> d_out, const MaskMatrix& mask, std::span<const double> generated,
                             const LearnerSlice& slice, double alpha) {
  require_same_size(d_out.size(), mask.size(), "generator_loss");
  require_same_size(generated.size(), mask.size(), "generator_loss");
  require_same_size(slice.size(), mask.size(), "generator_loss");
  GeneratorLoss r;
  r.grad_d_out.assign(d_out.size(), 0.0);
  r.grad_generated.assign(generated.size(), 0.0);

  const std::size_t observed = mask.observed_count();
  const std::size_t missing = mask.size() - observed;
  if (missing > 0) {
    const double nm = static_cast<double>(missing);
    for (std::size_t k = 0; k < d_out.size(); ++k) {
      if (mask.observed(k)) continue;
      const double d = std::clamp(d_out[k], kProbFloor, 1.0 - kProbFloor);
      r.adversarial -= std::log(d) / nm;
      r.grad_d_out[k] = -1.0 / (d * nm);
    }
  }
  if (observed > 0) {
    const double no = static_cast<double>(observed);
    double sse = 0.0;
    for (std::size_t k = 0; k < generated.size(); ++k) {
      if (!mask.observed(k)) continue;
      const double e = generated[k] - *slice[k];
      sse += e * e;
    }
    r.reconstruction = std::sqrt(sse / no);
    if (r.reconstruction > 0.0) {
      for (std::size_t k = 0; k < generated.size(); ++k) {
        if (!mask.observed(k)) continue;
        r.grad_generated[k] = alpha * (generated[k] - *slice[k]) / (no * r.reconstruction);
      }
    }
  }
  r.value = r.adversarial + alpha * r.reconstruction;
  return r;
}

GainModel make_gain_model(std::size_t questions, std::size_t attempts, const GainConfig& cfg) {
  cfg.validate();
  return GainModel{
      dg::Network(Shape{3, questions, attempts}, image_to_image(3, questions, attempts, cfg.net),
                  derive_seed(cfg.seed, kGenInit)),
      dg::Network(Shape{2, questions, attempts}, image_to_image(2, questions, attempts, cfg.net),
                  derive_seed(cfg.seed, kDiscInit)),
      cfg};
}

namespace {

// Eval-mode generator with zero noise, scored on the observed cells.
double eval_observed_rmse(const dg::Network& gen, const std::vector<std::pair<LearnerSlice, MaskMatrix>>& images) {
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& [slice, mask] : images) {
    const auto zero = make_noise(slice.rows(), slice.cols(), 0.0, 0);
    const auto out = dg::forward(gen, generator_input(slice, mask, zero), Mode::Eval, 0).output;
    for (std::size_t k = 0; k < slice.size(); ++k) {
      if (!mask.observed(k)) continue;
      const double e = out[k] - *slice[k];
      sse += e * e;
      ++n;
    }
  }
  return std::sqrt(sse / static_cast<double>(n));
}

}  // namespace

GainTrainResult train_gain(const PerformanceTensor& t, const GainConfig& cfg) {
  cfg.validate();
  if (t.observed_count() == 0) throw DataError("cannot train GAIN on a tensor with no observed cells");
  const Dims& d = t.dims();
  GainTrainResult result{make_gain_model(d.questions, d.attempts, cfg), {}};
  auto& gen = result.model.generator;
  auto& disc = result.model.discriminator;
  dg::AdamState gen_opt(gen.param_count(), cfg.learning_rate);
  dg::AdamState disc_opt(disc.param_count(), cfg.learning_rate);

  std::vector<std::pair<LearnerSlice, MaskMatrix>> images;
  images.reserve(d.learners);
  for (std::size_t u = 0; u < d.learners; ++u) images.push_back(learner_slice(t, u));

  std::vector<std::size_t> order(d.learners);
  double best_rmse = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(cfg.seed, kOrder, epoch));
    order_rng.shuffle(order);

    GainEpoch stats;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const std::size_t u = order[step];
      const auto& [slice, mask] = images[u];
      const std::uint64_t cell_seed = derive_seed(epoch, u);
      const auto noise = make_noise(d.questions, d.attempts, cfg.noise_scale, derive_seed(cfg.seed, kNoise, cell_seed));
      const auto hint = make_hint(mask, cfg.hint_rate, derive_seed(cfg.seed, kHint, cell_seed));

      auto g_fwd = dg::forward(gen, generator_input(slice, mask, noise), Mode::Train,
                               derive_seed(cfg.seed, kGenDropout, cell_seed));
      const ValueGrid imputed = merge(slice, mask, g_fwd.output);
      const ValueGrid d_in = discriminator_input(imputed, hint);

      // Discriminator step.
      {
        auto d_fwd = dg::forward(disc, d_in, Mode::Train, derive_seed(cfg.seed, kDiscDropout, cell_seed));
        const auto loss = discriminator_loss(d_fwd.output.values(), mask);
        const auto grads = dg::backward(disc, d_fwd.tape, ValueGrid(disc.output_shape(), loss.grad));
        dg::commit_running_stats(disc, d_fwd.tape);
        dg::adam_step(disc.mutable_params(), grads.params, disc_opt);
        stats.discriminator_loss += loss.value;
      }

      // Generator step through the updated discriminator.
      {
        auto d_fwd = dg::forward(disc, d_in, Mode::Train, derive_seed(cfg.seed, kDiscDropout, cell_seed + 1));
        const auto loss = generator_loss(d_fwd.output.values(), mask, g_fwd.output.values(), slice, cfg.alpha);
        const auto d_grads = dg::backward(disc, d_fwd.tape, ValueGrid(disc.output_shape(), loss.grad_d_out));
        ValueGrid g_up(gen.output_shape(), loss.grad_generated);
        const std::size_t n = slice.size();
        for (std::size_t k = 0; k < n; ++k) {
          if (!mask.observed(k)) g_up[k] += d_grads.input[k];  // imputed channel, missing cells only
        }
        const auto g_grads = dg::backward(gen, g_fwd.tape, g_up);
        dg::commit_running_stats(gen, g_fwd.tape);
        dg::adam_step(gen.mutable_params(), g_grads.params, gen_opt);
        stats.generator_loss += loss.value;
      }
    }
    const double images_n = static_cast<double>(order.size());
    stats.discriminator_loss /= images_n;
    stats.generator_loss /= images_n;
    stats.observed_rmse = eval_observed_rmse(gen, images);
    result.history.push_back(stats);

    if (best_rmse - stats.observed_rmse < cfg.early_stop_tol) {
      if (++stale_epochs >= cfg.patience) break;
    } else {
      stale_epochs = 0;
    }
    best_rmse = std::min(best_rmse, stats.observed_rmse);
  }
  return result;
}

DenseTensor impute(const GainModel& model, const PerformanceTensor& t) {
  const Dims& d = t.dims();
  const Shape expected{3, d.questions, d.attempts};
  if (!(model.generator.input_shape() == expected)) {
    throw std::invalid_argument("GAIN model built for images " + dg::to_string(model.generator.input_shape()) +
                                ", tensor has " + dg::to_string(expected));
  }
  const CellMatrix zero_noise{d.questions, d.attempts, std::vector<double>(d.image_size(), 0.0)};
  std::vector<LearnerSlice> slices;
  slices.reserve(d.learners);
  for (std::size_t u = 0; u < d.learners; ++u) {
    const auto [slice, mask] = learner_slice(t, u);
    const auto out = dg::forward(model.generator, generator_input(slice, mask, zero_noise), Mode::Eval, 0).output;
    const ValueGrid merged = merge(slice, mask, out);
    slices.emplace_back(d.questions, d.attempts,
                        std::vector<std::optional<double>>(merged.values().begin(), merged.values().end()));
  }
  return assemble(slices);
}

void save_gain(const GainModel& model, const std::filesystem::path& dir) {
  const nlohmann::json extra{{"model", "gain"}, {"config", to_json(model.config)}};
  dg::save_checkpoint(model.generator, dir, "generator", extra);
  dg::save_checkpoint(model.discriminator, dir, "discriminator", extra);
}

GainModel load_gain(const std::filesystem::path& dir) {
  auto g = dg::load_checkpoint(dir / "generator.json");
  auto d = dg::load_checkpoint(dir / "discriminator.json");
  GainConfig cfg = gain_config_from_json(g.extra.at("config"));
  return GainModel{std::move(g.net), std::move(d.net), cfg};
}

}  // namespace sparsekt
