#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "sparsekt/gan.hpp"
#include "sparsekt/random.hpp"
#include "test_util.hpp"

using namespace sparsekt;
using dg::Shape;
using dg::ValueGrid;

namespace {

GanConfig tiny(std::size_t epochs) {
  GanConfig c;
  c.latent_dim = 4;
  c.epochs = epochs;
  c.net.hidden_channels = 4;
  c.net.hidden_layers = 1;
  c.inversion_steps = 20;
  c.learning_rate = 1e-3;
  c.seed = 5;
  return c;
}

// Rank-1 Bernoulli tensor with a hidden set of observed cells.
struct Split {
  PerformanceTensor train;
  std::vector<std::pair<CellCoord, double>> hidden;
};

Split rank1_split(Dims d, double hide, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> a(d.learners), b(d.questions);
  for (auto& v : a) v = rng.uniform(0.3, 1.0);
  for (auto& v : b) v = rng.uniform(0.4, 1.0);
  Split s{PerformanceTensor(d), {}};
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < d.attempts; ++i) {
        const double p = a[u] * b[j] * (0.7 + 0.3 * static_cast<double>(i) / static_cast<double>(d.attempts));
        const Outcome o = rng.bernoulli(p) ? Outcome::Correct : Outcome::Incorrect;
        if (rng.bernoulli(hide)) {
          s.hidden.push_back({CellCoord{u, j, i}, outcome_value(o)});
        } else {
          s.train.set(u, j, i, o);
        }
      }
  return s;
}

double hidden_rmse(const DenseTensor& imputed, const Split& s) {
  double sse = 0.0;
  for (const auto& [c, v] : s.hidden) sse += (imputed.at(c) - v) * (imputed.at(c) - v);
  return std::sqrt(sse / static_cast<double>(s.hidden.size()));
}

}  // namespace

TEST_CASE("gaussian_blur spot values") {
  const ValueGrid row(Shape{1, 1, 3}, {0, 1, 0});
  const auto b = gaussian_blur(row, 1.0);
  CHECK(b[0] == doctest::Approx(0.2741).epsilon(1e-3));
  CHECK(b[1] == doctest::Approx(0.4519).epsilon(1e-3));
  CHECK(b[2] == doctest::Approx(0.2741).epsilon(1e-3));
  const double w0 = 1.0 / (1.0 + 2.0 * std::exp(-0.5));
  CHECK(b[1] == doctest::Approx(w0).epsilon(1e-14));

  CHECK(gaussian_blur(row, 0.0) == row);

  // 3x3 impulse: separable, so the centre keeps w0^2 and corners get w1^2.
  ValueGrid impulse(Shape{1, 3, 3});
  impulse.at(0, 1, 1) = 1.0;
  const auto bi = gaussian_blur(impulse, 1.0);
  const double w1 = std::exp(-0.5) * w0;
  CHECK(bi.at(0, 1, 1) == doctest::Approx(w0 * w0).epsilon(1e-14));
  CHECK(bi.at(0, 0, 0) == doctest::Approx(w1 * w1).epsilon(1e-14));
  CHECK(bi.at(0, 0, 1) == doctest::Approx(w0 * w1).epsilon(1e-14));

  const ValueGrid flat(Shape{2, 4, 6}, 0.37);
  const auto bf = gaussian_blur(flat, 1.3);
  for (double v : bf.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_blur(row, -1.0), std::invalid_argument);
}

TEST_CASE("gaussian_kernel") {
  const auto w = gaussian_kernel(1.0, 3);
  CHECK(w.size() == 7);
  double total = 0.0;
  for (double v : w) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[3] > w[2]);
  CHECK(gaussian_kernel(0.0, 3) == std::vector<double>{1.0});
}

TEST_CASE("property: blur is linear and its backward is the adjoint") {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const Shape s{1 + rng.below(2), 1 + rng.below(8), 1 + rng.below(8)};
    ValueGrid x(s), y(s);
    for (auto& v : x.values()) v = rng.uniform(-1, 1);
    for (auto& v : y.values()) v = rng.uniform(-1, 1);
    const double sigma = rng.uniform(0.0, 2.5);
    const double a = rng.uniform(-3, 3);
    ValueGrid ax = x;
    for (auto& v : ax.values()) v *= a;
    const auto bx = gaussian_blur(x, sigma);
    const auto bax = gaussian_blur(ax, sigma);
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(bax[k] == doctest::Approx(a * bx[k]).epsilon(1e-12));
    // <blur(x), y> == <x, blur^T(y)>
    const auto bty = gaussian_blur_backward(y, sigma);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      lhs += bx[k] * y[k];
      rhs += x[k] * bty[k];
    }
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("blur schedule") {
  GanConfig c;
  c.sigma_start = 2.0;
  c.sigma_end = 0.0;
  c.sigma_epochs = 5;
  CHECK(blur_sigma(c, 0) == 2.0);
  CHECK(blur_sigma(c, 2) == doctest::Approx(1.0));
  CHECK(blur_sigma(c, 4) == 0.0);
  CHECK(blur_sigma(c, 9) == 0.0);
  double prev = 3.0;
  for (std::size_t e = 0; e < 10; ++e) {
    CHECK(blur_sigma(c, e) <= prev);
    prev = blur_sigma(c, e);
  }
  c.sigma_end = 3.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("filled_image uses 0.5 for missing cells") {
  const LearnerSlice s(1, 3, {1.0, std::nullopt, 0.0});
  CHECK(filled_image(s) == ValueGrid(Shape{1, 1, 3}, {1.0, 0.5, 0.0}));
}

TEST_CASE("degenerate settings reduce to the plain GAN objective") {
  const ValueGrid real(Shape{1, 3, 4}, {1, 0, 1, 1, 0.5, 0, 1, 1, 0, 1, 0.5, 1});
  auto cfg = tiny(0);
  // InfoGAN with zero MI weight vs a GAN whose latent includes the code slots.
  cfg.mi_weight = 0.0;
  const auto info = make_gan_model(GanKind::InfoGan, 3, 4, cfg);
  auto plain_cfg = cfg;
  plain_cfg.latent_dim = cfg.latent_dim + cfg.code_dims;
  const auto plain = make_gan_model(GanKind::Gan, 3, 4, plain_cfg);
  const std::vector<double> z{0.1, -0.4, 0.7, 0.2, -0.9, 0.3};
  const auto li = gan_losses(info, real, z, 0.0);
  const auto lp = gan_losses(plain, real, z, 0.0);
  CHECK(li.generator == lp.generator);
  CHECK(li.discriminator == lp.discriminator);
  CHECK(li.mutual_info > 0.0);

  // AmbientGAN at sigma 0 is the plain GAN.
  const auto amb = make_gan_model(GanKind::AmbientGan, 3, 4, plain_cfg);
  const auto la = gan_losses(amb, real, z, 0.0);
  CHECK(la.generator == lp.generator);
  CHECK(la.discriminator == lp.discriminator);
}

TEST_CASE("training trajectories match under degenerate settings") {
  const auto t = sparsekt::testing::random_tensor(Dims{6, 3, 4}, 0.3, 2);
  auto cfg = tiny(3);
  cfg.mi_weight = 0.0;
  const auto info = infogan_train(t, cfg);
  auto plain_cfg = cfg;
  plain_cfg.latent_dim = cfg.latent_dim + cfg.code_dims;
  const auto plain = gan_train(t, plain_cfg);
  REQUIRE(info.history.size() == plain.history.size());
  for (std::size_t e = 0; e < info.history.size(); ++e) {
    CHECK(info.history[e].generator == plain.history[e].generator);
    CHECK(info.history[e].discriminator == plain.history[e].discriminator);
  }

  plain_cfg.sigma_start = 0.0;
  plain_cfg.sigma_end = 0.0;
  const auto amb = ambientgan_train(t, plain_cfg);
  for (std::size_t e = 0; e < amb.history.size(); ++e) CHECK(amb.history[e].generator == plain.history[e].generator);
}

TEST_CASE("all variants: passthrough, bounds, determinism, errors") {
  const auto t = sparsekt::testing::random_tensor(Dims{5, 3, 4}, 0.4, 8);
  const auto full = sparsekt::testing::random_tensor(Dims{5, 3, 4}, 0.0, 9);
  for (GanKind kind : {GanKind::Gan, GanKind::InfoGan, GanKind::AmbientGan}) {
    CAPTURE(to_string(kind));
    const auto a = train_gan_variant(kind, t, tiny(2));
    const auto b = train_gan_variant(kind, t, tiny(2));
    const auto ia = gan_impute(a.model, t);
    CHECK(ia == gan_impute(b.model, t));
    for (std::size_t k = 0; k < t.cells().size(); ++k) {
      CHECK(ia.values()[k] >= 0.0);
      CHECK(ia.values()[k] <= 1.0);
      if (is_observed(t.cells()[k])) CHECK(ia.values()[k] == outcome_value(t.cells()[k]));
    }
    const auto same = gan_impute(a.model, full);
    for (std::size_t k = 0; k < full.cells().size(); ++k) CHECK(same.values()[k] == outcome_value(full.cells()[k]));
    CHECK_THROWS_AS(train_gan_variant(kind, PerformanceTensor(Dims{2, 3, 4}), tiny(1)), DataError);
    CHECK_THROWS_AS(gan_impute(a.model, PerformanceTensor(Dims{2, 4, 4})), std::invalid_argument);
  }
}

TEST_CASE("infogan: Q reconstructs codes better after training") {
  const auto t = sparsekt::testing::random_tensor(Dims{20, 4, 4}, 0.3, 1);
  auto cfg = tiny(15);
  const auto before = make_gan_model(GanKind::InfoGan, 4, 4, cfg);
  const auto after = infogan_train(t, cfg).model;
  const double e0 = code_reconstruction_error(before, 200, 77);
  const double e1 = code_reconstruction_error(after, 200, 77);
  MESSAGE("code reconstruction mse before=" << e0 << " after=" << e1);
  CHECK(e1 < e0);
}

TEST_CASE("gan: rank-1 hidden cells beat the constant 0.5 imputation") {
  const auto s = rank1_split(Dims{40, 6, 4}, 0.3, 12);
  GanConfig cfg;
  cfg.latent_dim = 8;
  cfg.epochs = 100;
  cfg.net.hidden_channels = 8;
  cfg.net.hidden_layers = 2;
  cfg.seed = 2;
  const auto m = gan_train(s.train, cfg).model;
  const double rmse = hidden_rmse(gan_impute(m, s.train), s);
  MESSAGE("gan hidden RMSE " << rmse);
  CHECK(rmse < 0.5);
}

TEST_CASE("checkpoint round trip") {
  const auto t = sparsekt::testing::random_tensor(Dims{4, 3, 3}, 0.3, 4);
  const auto dir = std::filesystem::temp_directory_path() / "sparsekt_gan_ckpt";
  for (GanKind kind : {GanKind::Gan, GanKind::InfoGan}) {
    std::filesystem::remove_all(dir);
    const auto m = train_gan_variant(kind, t, tiny(1)).model;
    save_gan(m, dir);
    const auto loaded = load_gan(dir);
    CHECK(loaded.kind == kind);
    CHECK(loaded.q.has_value() == (kind == GanKind::InfoGan));
    CHECK(gan_impute(loaded, t) == gan_impute(m, t));
  }
  std::filesystem::remove_all(dir);
}
