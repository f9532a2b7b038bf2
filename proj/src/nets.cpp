#include "sparsekt/nets.hpp"

#include <stdexcept>

namespace sparsekt {

using dg::LayerSpec;
using dg::Shape;

void ConvStackConfig::validate() const {
  if (hidden_channels == 0) throw std::invalid_argument("hidden_channels must be >= 1");
  if (kernel % 2 == 0) throw std::invalid_argument("kernel size must be odd for same padding");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must be in [0, 1)");
}

nlohmann::json to_json(const ConvStackConfig& c) {
  nlohmann::ordered_json j;
  j["hidden_channels"] = c.hidden_channels;
  j["hidden_layers"] = c.hidden_layers;
  j["kernel"] = c.kernel;
  j["dropout_rate"] = c.dropout_rate;
  return j;
}

ConvStackConfig conv_stack_from_json(const nlohmann::json& j, ConvStackConfig d) {
  d.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  d.hidden_layers = j.value("hidden_layers", d.hidden_layers);
  d.kernel = j.value("kernel", d.kernel);
  d.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  return d;
}

void append_hidden_block(std::vector<LayerSpec>& layers, const ConvStackConfig& c) {
  const std::size_t h = c.hidden_channels;
  for (std::size_t k = 0; k < c.hidden_layers; ++k) {
    layers.push_back(LayerSpec::conv2d(h, h, c.kernel, /*bias=*/false));
    layers.push_back(LayerSpec::batchnorm(h));
    layers.push_back(LayerSpec::relu());
    if (c.dropout_rate > 0.0) layers.push_back(LayerSpec::dropout(c.dropout_rate));
  }
}

std::vector<LayerSpec> image_to_image(std::size_t in_channels, std::size_t rows, std::size_t cols,
                                      const ConvStackConfig& c) {
  c.validate();
  std::vector<LayerSpec> layers;
  layers.push_back(LayerSpec::conv2d(in_channels, c.hidden_channels, c.kernel));
  layers.push_back(LayerSpec::relu());
  append_hidden_block(layers, c);
  layers.push_back(LayerSpec::conv2d(c.hidden_channels, 1, c.kernel));
  layers.push_back(LayerSpec::reshape(Shape{1, rows, cols}));
  layers.push_back(LayerSpec::sigmoid());
  return layers;
}

std::vector<LayerSpec> latent_to_image(std::size_t latent_dim, std::size_t rows, std::size_t cols,
                                       const ConvStackConfig& c) {
  c.validate();
  std::vector<LayerSpec> layers;
  const std::size_t h = c.hidden_channels;
  layers.push_back(LayerSpec::dense(latent_dim, h * rows * cols));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::reshape(Shape{h, rows, cols}));
  append_hidden_block(layers, c);
  layers.push_back(LayerSpec::conv2d(h, 1, c.kernel));
  layers.push_back(LayerSpec::reshape(Shape{1, rows, cols}));
  layers.push_back(LayerSpec::sigmoid());
  return layers;
}

std::vector<LayerSpec> image_to_scores(std::size_t in_channels, std::size_t rows, std::size_t cols,
                                       std::size_t outputs, const ConvStackConfig& c) {
  c.validate();
  std::vector<LayerSpec> layers;
  const std::size_t h = c.hidden_channels;
  layers.push_back(LayerSpec::conv2d(in_channels, h, c.kernel));
  layers.push_back(LayerSpec::relu());
  append_hidden_block(layers, c);
  layers.push_back(LayerSpec::reshape(Shape{h * rows * cols, 1, 1}));
  layers.push_back(LayerSpec::dense(h * rows * cols, outputs));
  return layers;
}

}  // namespace sparsekt
