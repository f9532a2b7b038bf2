#include "sparsekt/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sparsekt/gain.hpp"
#include "sparsekt/random.hpp"

namespace sparsekt {

using dg::Mode;
using dg::Shape;
using dg::ValueGrid;

namespace {

enum SeedTag : std::uint64_t {
  kGenInit = 1,
  kDiscInit,
  kQInit,
  kOrder,
  kLatent,
  kGenDropout,
  kDiscRealDropout,
  kDiscFakeDropout,
  kDiscGenDropout,
  kQDropout,
  kInvert,
  kCodeSample,
};

std::size_t blur_radius(std::size_t n, double sigma) {
  if (sigma <= 0.0 || n < 2) return 0;
  return std::min(static_cast<std::size_t>(std::ceil(3.0 * sigma)), (n - 1) / 2);
}

// Applies the 1D kernel along rows (axis 0) or columns (axis 1) of every channel.
// `adjoint` scatters instead of gathers.
ValueGrid blur_axis(const ValueGrid& x, double sigma, int axis, bool adjoint) {
  const Shape& s = x.shape();
  const std::size_t len = axis == 0 ? s.rows : s.cols;
  const std::size_t radius = blur_radius(len, sigma);
  if (radius == 0) return x;
  const auto w = gaussian_kernel(sigma, radius);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  const auto last = static_cast<std::ptrdiff_t>(len) - 1;
  ValueGrid out(s);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t a = 0; a < s.rows; ++a)
      for (std::size_t b = 0; b < s.cols; ++b) {
        const auto pos = static_cast<std::ptrdiff_t>(axis == 0 ? a : b);
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const auto src = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(pos + k, 0, last));
          const std::size_t ra = axis == 0 ? src : a;
          const std::size_t cb = axis == 0 ? b : src;
          const double wk = w[static_cast<std::size_t>(k + r)];
          if (adjoint) {
            out.at(c, ra, cb) += wk * x.at(c, a, b);
          } else {
            out.at(c, a, b) += wk * x.at(c, ra, cb);
          }
        }
      }
  return out;
}

ValueGrid sample_latent(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  ValueGrid z(Shape{dim, 1, 1});
  for (std::size_t k = 0; k < dim; ++k) z[k] = rng.uniform(-1.0, 1.0);
  return z;
}

std::vector<double> add(std::vector<double> a, const std::vector<double>& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  return a;
}

double code_mse(const ValueGrid& q_out, const ValueGrid& z, std::size_t code_dims, std::vector<double>* grad) {
  const std::size_t offset = z.size() - code_dims;
  double mse = 0.0;
  if (grad) grad->assign(code_dims, 0.0);
  for (std::size_t k = 0; k < code_dims; ++k) {
    const double e = q_out[k] - z[offset + k];
    mse += e * e;
    if (grad) (*grad)[k] = 2.0 * e / static_cast<double>(code_dims);
  }
  return mse / static_cast<double>(code_dims);
}

void require_image_shape(const GanModel& m, const Dims& d) {
  const Shape expected{1, d.questions, d.attempts};
  if (!(m.generator.output_shape() == expected)) {
    throw std::invalid_argument("GAN model generates " + dg::to_string(m.generator.output_shape()) +
                                ", tensor images are " + dg::to_string(expected));
  }
}

}  // namespace

std::string to_string(GanKind k) {
  switch (k) {
    case GanKind::Gan: return "gan";
    case GanKind::InfoGan: return "infogan";
    case GanKind::AmbientGan: return "ambientgan";
  }
  return "gan";
}

GanKind gan_kind_from_string(const std::string& s) {
  if (s == "gan") return GanKind::Gan;
  if (s == "infogan") return GanKind::InfoGan;
  if (s == "ambientgan") return GanKind::AmbientGan;
  throw std::invalid_argument("unknown GAN variant '" + s + "'");
}

void GanConfig::validate() const {
  if (latent_dim == 0) throw std::invalid_argument("latent_dim must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (mi_weight < 0.0) throw std::invalid_argument("mi_weight must be >= 0");
  if (sigma_end < 0.0 || sigma_start < sigma_end) {
    throw std::invalid_argument("blur schedule needs sigma_start >= sigma_end >= 0");
  }
  if (!(inversion_lr > 0.0)) throw std::invalid_argument("inversion_lr must be > 0");
  if (inversion_restarts == 0) throw std::invalid_argument("inversion_restarts must be >= 1");
  net.validate();
}

nlohmann::json to_json(const GanConfig& c) {
  nlohmann::ordered_json j;
  j["latent_dim"] = c.latent_dim;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["net"] = to_json(c.net);
  j["code_dims"] = c.code_dims;
  j["mi_weight"] = c.mi_weight;
  j["sigma_start"] = c.sigma_start;
  j["sigma_end"] = c.sigma_end;
  j["sigma_epochs"] = c.sigma_epochs;
  j["inversion_steps"] = c.inversion_steps;
  j["inversion_lr"] = c.inversion_lr;
  j["inversion_restarts"] = c.inversion_restarts;
  return j;
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
  GanConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("net")) c.net = conv_stack_from_json(j.at("net"));
  c.code_dims = j.value("code_dims", c.code_dims);
  c.mi_weight = j.value("mi_weight", c.mi_weight);
  c.sigma_start = j.value("sigma_start", c.sigma_start);
  c.sigma_end = j.value("sigma_end", c.sigma_end);
  c.sigma_epochs = j.value("sigma_epochs", c.sigma_epochs);
  c.inversion_steps = j.value("inversion_steps", c.inversion_steps);
  c.inversion_lr = j.value("inversion_lr", c.inversion_lr);
  c.inversion_restarts = j.value("inversion_restarts", c.inversion_restarts);
  c.validate();
  return c;
}

double blur_sigma(const GanConfig& c, std::size_t epoch) {
  if (c.sigma_epochs <= 1) return epoch == 0 ? c.sigma_start : c.sigma_end;
  const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(c.sigma_epochs - 1));
  return c.sigma_start + (c.sigma_end - c.sigma_start) * t;
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  if (sigma == 0.0) radius = 0;
  std::vector<double> w(2 * radius + 1);
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double x = static_cast<double>(k) - static_cast<double>(radius);
    w[k] = radius == 0 ? 1.0 : std::exp(-x * x / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

ValueGrid gaussian_blur(const ValueGrid& x, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  return blur_axis(blur_axis(x, sigma, 1, false), sigma, 0, false);
}

ValueGrid gaussian_blur_backward(const ValueGrid& grad, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
  return blur_axis(blur_axis(grad, sigma, 0, true), sigma, 1, true);
}

std::size_t GanModel::input_dim() const {
  return config.latent_dim + (kind == GanKind::InfoGan ? config.code_dims : 0);
}

GanModel make_gan_model(GanKind kind, std::size_t questions, std::size_t attempts, const GanConfig& cfg) {
  cfg.validate();
  if (kind == GanKind::InfoGan && cfg.code_dims == 0) throw std::invalid_argument("InfoGAN needs code_dims >= 1");
  const std::size_t in_dim = cfg.latent_dim + (kind == GanKind::InfoGan ? cfg.code_dims : 0);
  GanModel m{kind,
             dg::Network(Shape{in_dim, 1, 1}, latent_to_image(in_dim, questions, attempts, cfg.net),
                         derive_seed(cfg.seed, kGenInit)),
             dg::Network(Shape{1, questions, attempts}, image_to_scores(1, questions, attempts, 1, cfg.net),
                         derive_seed(cfg.seed, kDiscInit)),
             std::nullopt,
             cfg};
  if (kind == GanKind::InfoGan) {
    m.q.emplace(Shape{1, questions, attempts}, image_to_scores(1, questions, attempts, cfg.code_dims, cfg.net),
                derive_seed(cfg.seed, kQInit));
  }
  return m;
}

ValueGrid filled_image(const LearnerSlice& slice) {
  ValueGrid x(Shape{1, slice.rows(), slice.cols()});
  for (std::size_t k = 0; k < slice.size(); ++k) x[k] = slice[k].value_or(0.5);
  return x;
}

GanLosses gan_losses(const GanModel& m, const ValueGrid& real, std::span<const double> latent, double sigma) {
  if (latent.size() != m.input_dim()) throw std::invalid_argument("gan_losses: latent size mismatch");
  const ValueGrid z(Shape{latent.size(), 1, 1}, std::vector<double>(latent.begin(), latent.end()));
  const ValueGrid fake = dg::forward(m.generator, z, Mode::Eval, 0).output;
  const double dr = dg::forward(m.discriminator, gaussian_blur(real, sigma), Mode::Eval, 0).output[0];
  const double df = dg::forward(m.discriminator, gaussian_blur(fake, sigma), Mode::Eval, 0).output[0];
  GanLosses l;
  l.discriminator = ((dr - 1.0) * (dr - 1.0) + df * df) / 2.0;
  l.generator = (df - 1.0) * (df - 1.0) / 2.0;
  if (m.kind == GanKind::InfoGan) {
    const ValueGrid q = dg::forward(*m.q, fake, Mode::Eval, 0).output;
    l.mutual_info = code_mse(q, z, m.config.code_dims, nullptr);
    l.generator += m.config.mi_weight * l.mutual_info;
  }
  return l;
}

GanTrainResult train_gan_variant(GanKind kind, const PerformanceTensor& t, const GanConfig& cfg) {
  cfg.validate();
  if (t.observed_count() == 0) throw DataError("cannot train a GAN on a tensor with no observed cells");
  const Dims& d = t.dims();
  GanTrainResult result{make_gan_model(kind, d.questions, d.attempts, cfg), {}};
  GanModel& m = result.model;
  dg::AdamState gen_opt(m.generator.param_count(), cfg.learning_rate);
  dg::AdamState disc_opt(m.discriminator.param_count(), cfg.learning_rate);
  dg::AdamState q_opt(m.q ? m.q->param_count() : 0, cfg.learning_rate);

  std::vector<ValueGrid> reals;
  reals.reserve(d.learners);
  for (std::size_t u = 0; u < d.learners; ++u) reals.push_back(filled_image(learner_slice(t, u).first));

  std::vector<std::size_t> order(d.learners);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(cfg.seed, kOrder, epoch));
    order_rng.shuffle(order);
    const double sigma = kind == GanKind::AmbientGan ? blur_sigma(cfg, epoch) : 0.0;

    GanLosses mean;
    for (const std::size_t u : order) {
      const std::uint64_t step = derive_seed(epoch, u);
      const ValueGrid z = sample_latent(m.input_dim(), derive_seed(cfg.seed, kLatent, step));
      auto g_fwd = dg::forward(m.generator, z, Mode::Train, derive_seed(cfg.seed, kGenDropout, step));
      const ValueGrid real_m = gaussian_blur(reals[u], sigma);
      const ValueGrid fake_m = gaussian_blur(g_fwd.output, sigma);

      // Discriminator: least squares toward 1 on real, 0 on fake.
      {
        auto r = dg::forward(m.discriminator, real_m, Mode::Train, derive_seed(cfg.seed, kDiscRealDropout, step));
        auto f = dg::forward(m.discriminator, fake_m, Mode::Train, derive_seed(cfg.seed, kDiscFakeDropout, step));
        const double dr = r.output[0];
        const double df = f.output[0];
        mean.discriminator += ((dr - 1.0) * (dr - 1.0) + df * df) / 2.0;
        const auto gr = dg::backward(m.discriminator, r.tape, ValueGrid(Shape{1, 1, 1}, {dr - 1.0}));
        const auto gf = dg::backward(m.discriminator, f.tape, ValueGrid(Shape{1, 1, 1}, {df}));
        dg::commit_running_stats(m.discriminator, r.tape);
        dg::adam_step(m.discriminator.mutable_params(), add(gr.params, gf.params), disc_opt);
      }

      // Generator through the updated discriminator and the measurement blur.
      ValueGrid g_up(g_fwd.output.shape());
      {
        auto f = dg::forward(m.discriminator, fake_m, Mode::Train, derive_seed(cfg.seed, kDiscGenDropout, step));
        const double df = f.output[0];
        mean.generator += (df - 1.0) * (df - 1.0) / 2.0;
        const auto gd = dg::backward(m.discriminator, f.tape, ValueGrid(Shape{1, 1, 1}, {df - 1.0}));
        g_up = gaussian_blur_backward(gd.input, sigma);
      }

      if (m.q) {
        auto q = dg::forward(*m.q, g_fwd.output, Mode::Train, derive_seed(cfg.seed, kQDropout, step));
        std::vector<double> dq;
        const double mi = code_mse(q.output, z, cfg.code_dims, &dq);
        mean.mutual_info += mi;
        mean.generator += cfg.mi_weight * mi;
        const auto gq = dg::backward(*m.q, q.tape, ValueGrid(q.output.shape(), dq));
        for (std::size_t k = 0; k < g_up.size(); ++k) g_up[k] += cfg.mi_weight * gq.input[k];
        dg::commit_running_stats(*m.q, q.tape);
        dg::adam_step(m.q->mutable_params(), gq.params, q_opt);
      }

      const auto gg = dg::backward(m.generator, g_fwd.tape, g_up);
      dg::commit_running_stats(m.generator, g_fwd.tape);
      dg::adam_step(m.generator.mutable_params(), gg.params, gen_opt);
    }
    const double n = static_cast<double>(order.size());
    mean.discriminator /= n;
    mean.generator /= n;
    mean.mutual_info /= n;
    result.history.push_back(mean);
  }
  return result;
}

GanTrainResult gan_train(const PerformanceTensor& t, const GanConfig& cfg) {
  return train_gan_variant(GanKind::Gan, t, cfg);
}
GanTrainResult infogan_train(const PerformanceTensor& t, const GanConfig& cfg) {
  return train_gan_variant(GanKind::InfoGan, t, cfg);
}
GanTrainResult ambientgan_train(const PerformanceTensor& t, const GanConfig& cfg) {
  return train_gan_variant(GanKind::AmbientGan, t, cfg);
}

double code_reconstruction_error(const GanModel& m, std::size_t samples, std::uint64_t seed) {
  if (!m.q) throw std::logic_error("code_reconstruction_error needs an InfoGAN model");
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const ValueGrid z = sample_latent(m.input_dim(), derive_seed(seed, kCodeSample, s));
    const ValueGrid fake = dg::forward(m.generator, z, Mode::Eval, 0).output;
    total += code_mse(dg::forward(*m.q, fake, Mode::Eval, 0).output, z, m.config.code_dims, nullptr);
  }
  return total / static_cast<double>(samples);
}

namespace {

// Adam on the latent vector against observed-cell RMSE, projected onto [-1, 1].
ValueGrid fit_latent(const GanModel& m, const LearnerSlice& slice, const MaskMatrix& mask, std::uint64_t seed) {
  ValueGrid z = sample_latent(m.input_dim(), seed);
  dg::AdamState opt(z.size(), m.config.inversion_lr);
  const double n_obs = static_cast<double>(mask.observed_count());
  for (std::size_t step = 0; n_obs > 0 && step < m.config.inversion_steps; ++step) {
    auto fwd = dg::forward(m.generator, z, Mode::Eval, 0);
    ValueGrid g(fwd.output.shape());
    double sse = 0.0;
    for (std::size_t k = 0; k < slice.size(); ++k) {
      if (!mask.observed(k)) continue;
      g[k] = fwd.output[k] - *slice[k];
      sse += g[k] * g[k];
    }
    const double rmse = std::sqrt(sse / n_obs);
    if (rmse == 0.0) break;
    for (double& v : g.values()) v /= n_obs * rmse;
    const auto grads = dg::backward(m.generator, fwd.tape, g);
    dg::adam_step(z.values(), grads.input.values(), opt);
    for (double& v : z.values()) v = std::clamp(v, -1.0, 1.0);
  }
  return dg::forward(m.generator, z, Mode::Eval, 0).output;
}

}  // namespace

DenseTensor gan_impute(const GanModel& m, const PerformanceTensor& t) {
  const Dims& d = t.dims();
  require_image_shape(m, d);
  const std::size_t restarts = m.config.inversion_restarts;
  std::vector<LearnerSlice> slices;
  slices.reserve(d.learners);
  for (std::size_t u = 0; u < d.learners; ++u) {
    const auto [slice, mask] = learner_slice(t, u);
    ValueGrid mean(Shape{1, d.questions, d.attempts});
    for (std::size_t r = 0; r < restarts; ++r) {
      const ValueGrid out = fit_latent(m, slice, mask, derive_seed(derive_seed(m.config.seed, kInvert, u), r));
      for (std::size_t k = 0; k < out.size(); ++k) mean[k] += out[k] / static_cast<double>(restarts);
    }
    const ValueGrid merged = merge(slice, mask, mean);
    slices.emplace_back(d.questions, d.attempts,
                        std::vector<std::optional<double>>(merged.values().begin(), merged.values().end()));
  }
  return assemble(slices);
}

DenseTensor infogan_impute(const GanModel& m, const PerformanceTensor& t) { return gan_impute(m, t); }
DenseTensor ambientgan_impute(const GanModel& m, const PerformanceTensor& t) { return gan_impute(m, t); }

void save_gan(const GanModel& m, const std::filesystem::path& dir) {
  const nlohmann::json extra{{"model", to_string(m.kind)}, {"config", to_json(m.config)}};
  dg::save_checkpoint(m.generator, dir, "generator", extra);
  dg::save_checkpoint(m.discriminator, dir, "discriminator", extra);
  if (m.q) dg::save_checkpoint(*m.q, dir, "q", extra);
}

GanModel load_gan(const std::filesystem::path& dir) {
  auto g = dg::load_checkpoint(dir / "generator.json");
  auto d = dg::load_checkpoint(dir / "discriminator.json");
  const GanKind kind = gan_kind_from_string(g.extra.at("model").get<std::string>());
  GanModel m{kind, std::move(g.net), std::move(d.net), std::nullopt, gan_config_from_json(g.extra.at("config"))};
  if (kind == GanKind::InfoGan) m.q.emplace(dg::load_checkpoint(dir / "q.json").net);
  return m;
}

}  // namespace sparsekt
