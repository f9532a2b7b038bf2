#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sparsekt/diffgraph.hpp"
#include "sparsekt/nets.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

enum class GanKind { Gan, InfoGan, AmbientGan };

std::string to_string(GanKind k);
GanKind gan_kind_from_string(const std::string& s);

struct GanConfig {
  std::size_t latent_dim = 16;
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  ConvStackConfig net;

  // InfoGAN: structured codes appended to the latent vector, both uniform [-1, 1].
  std::size_t code_dims = 2;
  double mi_weight = 1.0;

  // AmbientGAN: blur sigma falls linearly from sigma_start to sigma_end over sigma_epochs.
  double sigma_start = 1.0;
  double sigma_end = 0.0;
  std::size_t sigma_epochs = 100;

  // Per-learner latent fit used at imputation time; the imputed image averages the
  // generator output over `inversion_restarts` independent fits.
  std::size_t inversion_steps = 200;
  double inversion_lr = 0.002;
  std::size_t inversion_restarts = 10;

  void validate() const;
};

nlohmann::json to_json(const GanConfig& c);
GanConfig gan_config_from_json(const nlohmann::json& j);

/// Blur sigma for `epoch` under the linear schedule.
double blur_sigma(const GanConfig& c, std::size_t epoch);

/// Normalized Gaussian taps for offsets -radius..radius.
std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

/// Separable Gaussian blur of every channel, edge-replicated borders. The kernel is cut at
/// ceil(3 sigma) and at the image half-width, whichever is smaller. sigma = 0 is the identity.
dg::ValueGrid gaussian_blur(const dg::ValueGrid& x, double sigma);

/// Adjoint of gaussian_blur: maps an output gradient to the input gradient.
dg::ValueGrid gaussian_blur_backward(const dg::ValueGrid& grad, double sigma);

struct GanModel {
  GanKind kind = GanKind::Gan;
  dg::Network generator;
  dg::Network discriminator;
  std::optional<dg::Network> q;  // InfoGAN code predictor
  GanConfig config;

  std::size_t input_dim() const;  // latent_dim, plus code_dims for InfoGAN
};

GanModel make_gan_model(GanKind kind, std::size_t questions, std::size_t attempts, const GanConfig& cfg);

struct GanLosses {
  double discriminator = 0.0;  // least squares: ((D(real) - 1)^2 + D(fake)^2) / 2
  double generator = 0.0;      // adversarial (D(fake) - 1)^2 / 2 plus mi_weight * mutual_info
  double mutual_info = 0.0;    // mean squared code reconstruction error, InfoGAN only
};

/// Eval-mode objective values for one real image and one latent draw, with the
/// measurement blur at `sigma`.
GanLosses gan_losses(const GanModel& m, const dg::ValueGrid& real, std::span<const double> latent, double sigma);

/// Observed cells keep their value, missing cells are 0.5.
dg::ValueGrid filled_image(const LearnerSlice& slice);

struct GanTrainResult {
  GanModel model;
  std::vector<GanLosses> history;  // per-epoch means over learner images
};

GanTrainResult gan_train(const PerformanceTensor& t, const GanConfig& cfg);
GanTrainResult infogan_train(const PerformanceTensor& t, const GanConfig& cfg);
GanTrainResult ambientgan_train(const PerformanceTensor& t, const GanConfig& cfg);
GanTrainResult train_gan_variant(GanKind kind, const PerformanceTensor& t, const GanConfig& cfg);

/// Mean squared error between sampled codes and Q's prediction on the generator's eval-mode output.
double code_reconstruction_error(const GanModel& m, std::size_t samples, std::uint64_t seed);

/// Fits a latent vector per learner to its observed cells, generates, and merges.
DenseTensor gan_impute(const GanModel& m, const PerformanceTensor& t);
DenseTensor infogan_impute(const GanModel& m, const PerformanceTensor& t);
DenseTensor ambientgan_impute(const GanModel& m, const PerformanceTensor& t);

void save_gan(const GanModel& m, const std::filesystem::path& dir);
GanModel load_gan(const std::filesystem::path& dir);

}  // namespace sparsekt
