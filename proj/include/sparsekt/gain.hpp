#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "sparsekt/diffgraph.hpp"
#include "sparsekt/nets.hpp"
#include "sparsekt/tensor.hpp"

namespace sparsekt {

struct GainConfig {
  double hint_rate = 0.9;
  double noise_scale = 0.01;
  double alpha = 10.0;  // weight of the observed-cell RMSE term in the generator loss
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  ConvStackConfig net;
  std::uint64_t seed = 0;
  // Early stop once observed RMSE fails to improve by early_stop_tol for `patience` epochs.
  double early_stop_tol = 1e-5;
  std::size_t patience = 10;

  void validate() const;
};

nlohmann::json to_json(const GainConfig& c);
GainConfig gain_config_from_json(const nlohmann::json& j);

/// Per-cell matrix over a learner image, row-major questions x attempts.
struct CellMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

/// i.i.d. uniform [0, noise_scale].
CellMatrix make_noise(std::size_t rows, std::size_t cols, double noise_scale, std::uint64_t seed);

/// hint = B * mask + 0.5 * (1 - B), B ~ Bernoulli(hint_rate) per cell.
CellMatrix make_hint(const MaskMatrix& mask, double hint_rate, std::uint64_t seed);

/// Observed cells keep the slice value, missing cells take the generated value.
dg::ValueGrid merge(const LearnerSlice& slice, const MaskMatrix& mask, const dg::ValueGrid& generated);

struct LossWithGrad {
  double value = 0.0;
  std::vector<double> grad;  // d loss / d (discriminator output)
};

/// Mean cross-entropy of the discriminator predicting the mask; the negated value
/// function V(D, G).
LossWithGrad discriminator_loss(std::span<const double> d_out, const MaskMatrix& mask);

struct GeneratorLoss {
  double value = 0.0;
  double adversarial = 0.0;
  double reconstruction = 0.0;  // RMSE over observed cells, before alpha
  std::vector<double> grad_d_out;
  std::vector<double> grad_generated;
};

GeneratorLoss generator_loss(std::span<const double> d_out, const MaskMatrix& mask, std::span<const double> generated,
                             const LearnerSlice& slice, double alpha);

struct GainModel {
  dg::Network generator;
  dg::Network discriminator;
  GainConfig config;
};

struct GainEpoch {
  double discriminator_loss = 0.0;
  double generator_loss = 0.0;
  double observed_rmse = 0.0;
};

struct GainTrainResult {
  GainModel model;
  std::vector<GainEpoch> history;
};

GainModel make_gain_model(std::size_t questions, std::size_t attempts, const GainConfig& cfg);

GainTrainResult train_gain(const PerformanceTensor& t, const GainConfig& cfg);

/// Generator in eval mode with zero noise, merged with the observed cells.
DenseTensor impute(const GainModel& model, const PerformanceTensor& t);

void save_gain(const GainModel& model, const std::filesystem::path& dir);
GainModel load_gain(const std::filesystem::path& dir);

}  // namespace sparsekt
