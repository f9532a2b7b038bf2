#pragma once

#include <vector>

#include "json.hpp"
#include "sparsekt/diffgraph.hpp"

namespace sparsekt {

/// Hidden block shared by all adversarial models: five 3x3 "same" conv layers of 16
/// channels, each conv -> batchnorm -> relu -> dropout.
struct ConvStackConfig {
  std::size_t hidden_channels = 16;
  std::size_t hidden_layers = 5;
  std::size_t kernel = 3;
  double dropout_rate = 0.2;

  void validate() const;
};

nlohmann::json to_json(const ConvStackConfig& c);
ConvStackConfig conv_stack_from_json(const nlohmann::json& j, ConvStackConfig defaults = {});

/// Appends the hidden conv block to `layers`.
void append_hidden_block(std::vector<dg::LayerSpec>& layers, const ConvStackConfig& c);

/// in_channels x rows x cols -> 1 x rows x cols, sigmoid head. Used by the GAIN
/// generator and discriminator.
std::vector<dg::LayerSpec> image_to_image(std::size_t in_channels, std::size_t rows, std::size_t cols,
                                          const ConvStackConfig& c);

/// latent vector -> 1 x rows x cols probabilities (dense, reshape, conv block, sigmoid).
std::vector<dg::LayerSpec> latent_to_image(std::size_t latent_dim, std::size_t rows, std::size_t cols,
                                           const ConvStackConfig& c);

/// in_channels x rows x cols -> `outputs` unbounded scores (conv block, reshape, dense).
std::vector<dg::LayerSpec> image_to_scores(std::size_t in_channels, std::size_t rows, std::size_t cols,
                                           std::size_t outputs, const ConvStackConfig& c);

}  // namespace sparsekt
