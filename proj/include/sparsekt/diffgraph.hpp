#pragma once

// Small reverse-mode substrate for the adversarial imputers: single-sample
// convolution/dense stacks over (channels, rows, cols) grids.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sparsekt::dg {

struct Shape {
  std::size_t channels = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return channels * rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

class ValueGrid {
 public:
  ValueGrid() = default;
  explicit ValueGrid(Shape shape, double fill = 0.0) : shape_(shape), values_(shape.size(), fill) {}
  ValueGrid(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }
  double& at(std::size_t c, std::size_t r, std::size_t w) { return values_[(c * shape_.rows + r) * shape_.cols + w]; }
  double at(std::size_t c, std::size_t r, std::size_t w) const {
    return values_[(c * shape_.rows + r) * shape_.cols + w];
  }

  double* ptr(std::size_t c, std::size_t r = 0, std::size_t w = 0) {
    return values_.data() + (c * shape_.rows + r) * shape_.cols + w;
  }
  const double* ptr(std::size_t c, std::size_t r = 0, std::size_t w = 0) const {
    return values_.data() + (c * shape_.rows + r) * shape_.cols + w;
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  /// Same values under a new shape of equal size.
  ValueGrid reshaped(Shape s) const;

  bool operator==(const ValueGrid&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

enum class LayerKind { Conv2d, Dense, Relu, Sigmoid, Dropout, BatchNorm, Reshape };
enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

std::string to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  bool bias = true;
  // dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  // dropout
  double rate = 0.0;
  // batchnorm (channel count in in_channels)
  double momentum = 0.1;
  double eps = 1e-5;
  // reshape
  Shape target;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, bool bias = true,
                          Padding padding = Padding::Same, std::size_t stride = 1);
  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec dropout(double rate);
  static LayerSpec batchnorm(std::size_t channels);
  static LayerSpec reshape(Shape target);

  bool operator==(const LayerSpec&) const = default;
};

nlohmann::json to_json(const LayerSpec& spec);
LayerSpec layer_from_json(const nlohmann::json& j);

/// Ordered layer stack with a flat parameter vector (weights, biases, batchnorm
/// scale/shift in declaration order) and a flat buffer of batchnorm running statistics.
class Network {
 public:
  Network(Shape input, std::vector<LayerSpec> layers, std::uint64_t init_seed);

  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  /// shapes()[k] is the input shape of layer k; shapes().back() the output.
  std::span<const Shape> shapes() const { return shapes_; }
  std::span<const LayerSpec> layers() const { return layers_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::span<const double> params() const { return params_; }
  /// Mutable access invalidates tapes recorded before the call.
  std::span<double> mutable_params() {
    ++version_;
    return params_;
  }
  std::span<const double> buffers() const { return buffers_; }
  std::span<double> mutable_buffers() {
    ++version_;
    return buffers_;
  }
  std::size_t param_count() const { return params_.size(); }

  std::size_t param_offset(std::size_t layer) const { return param_offsets_[layer]; }
  std::size_t buffer_offset(std::size_t layer) const { return buffer_offsets_[layer]; }
  std::uint64_t version() const { return version_; }
  bool has_stochastic_layers() const;

 private:
  std::vector<Shape> shapes_;
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> param_offsets_;
  std::vector<std::size_t> buffer_offsets_;
  std::vector<double> params_;
  std::vector<double> buffers_;
  std::uint64_t init_seed_;
  std::uint64_t version_ = 0;
};

/// Intermediates recorded by forward for a matching backward call.
struct Tape {
  const Network* net = nullptr;
  std::uint64_t version = 0;
  Mode mode = Mode::Eval;
  std::vector<ValueGrid> inputs;             // input of each layer
  std::vector<std::vector<double>> aux;      // dropout masks, batchnorm normalized values
  std::vector<std::vector<double>> channel;  // batchnorm per-channel inverse std (and batch stats)
};

struct ForwardResult {
  ValueGrid output;
  Tape tape;
};

ForwardResult forward(const Network& net, const ValueGrid& input, Mode mode, std::uint64_t rng_seed);

struct Gradients {
  std::vector<double> params;
  ValueGrid input;
};

Gradients backward(const Network& net, const Tape& tape, const ValueGrid& output_gradient);

/// Folds the batch statistics seen by a training-mode forward into the running statistics.
void commit_running_stats(Network& net, const Tape& tape);

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n = 0, double lr = 1e-4) : learning_rate(lr), m(n, 0.0), v(n, 0.0) {}
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +/- eps probes flipped a ReLU input sign; the numeric
  /// derivative is undefined there so they are excluded.
  std::size_t skipped_kinks = 0;
};

/// Compares backward against central differences of a fixed random projection of the
/// output, over every parameter and input coordinate.
GradCheckResult grad_check(const Network& net, const ValueGrid& input, double eps, Mode mode = Mode::Eval,
                           std::uint64_t seed = 0);

/// Writes <dir>/<name>.json (manifest) and <dir>/<name>.bin (parameters, then running
/// statistics, little-endian float64).
void save_checkpoint(const Network& net, const std::filesystem::path& dir, const std::string& name,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  Network net;
  nlohmann::json extra;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest_path);

void write_f64_le(std::ostream& out, std::span<const double> values);
std::vector<double> read_f64_le(std::istream& in, std::size_t count);

}  // namespace sparsekt::dg
