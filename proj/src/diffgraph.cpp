#include "sparsekt/diffgraph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "sparsekt/random.hpp"

namespace sparsekt::dg {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.rows) + "," + std::to_string(s.cols) + ")";
}

ValueGrid::ValueGrid(Shape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) throw std::invalid_argument("grid value count does not match shape");
}

ValueGrid ValueGrid::reshaped(Shape s) const {
  if (s.size() != shape_.size()) throw std::invalid_argument("reshape to " + to_string(s) + " changes size");
  return ValueGrid(s, values_);
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel, bool bias, Padding padding,
                            std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.bias = bias;
  s.padding = padding;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in_features = in;
  s.out_features = out;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::Sigmoid;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  s.in_channels = channels;
  return s;
}

LayerSpec LayerSpec::reshape(Shape target) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.target = target;
  return s;
}

namespace {

LayerKind kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::Conv2d, LayerKind::Dense, LayerKind::Relu, LayerKind::Sigmoid, LayerKind::Dropout,
                 LayerKind::BatchNorm, LayerKind::Reshape}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

std::size_t conv_pad(const LayerSpec& s) { return s.padding == Padding::Same ? s.kernel / 2 : 0; }

std::size_t conv_out(std::size_t n, const LayerSpec& s) {
  const std::size_t pad = conv_pad(s);
  if (n + 2 * pad < s.kernel) throw std::invalid_argument("conv kernel larger than padded input");
  return (n + 2 * pad - s.kernel) / s.stride + 1;
}

std::size_t param_count_of(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::Conv2d: return s.out_channels * s.in_channels * s.kernel * s.kernel + (s.bias ? s.out_channels : 0);
    case LayerKind::Dense: return s.out_features * s.in_features + s.out_features;
    case LayerKind::BatchNorm: return 2 * s.in_channels;
    default: return 0;
  }
}

std::size_t buffer_count_of(const LayerSpec& s) { return s.kind == LayerKind::BatchNorm ? 2 * s.in_channels : 0; }

Shape output_shape_of(const LayerSpec& s, const Shape& in, std::size_t index) {
  const std::string where = "layer " + std::to_string(index) + " (" + to_string(s.kind) + "): ";
  switch (s.kind) {
    case LayerKind::Conv2d:
      if (s.kernel == 0 || s.stride == 0 || s.in_channels == 0 || s.out_channels == 0) {
        throw std::invalid_argument(where + "kernel, stride and channel counts must be positive");
      }
      if (s.padding == Padding::Same && s.kernel % 2 == 0) {
        throw std::invalid_argument(where + "'same' padding needs an odd kernel");
      }
      if (in.channels != s.in_channels) {
        throw std::invalid_argument(where + "expects " + std::to_string(s.in_channels) + " channels, got " +
                                    to_string(in));
      }
      return Shape{s.out_channels, conv_out(in.rows, s), conv_out(in.cols, s)};
    case LayerKind::Dense:
      if (in.size() != s.in_features) {
        throw std::invalid_argument(where + "expects " + std::to_string(s.in_features) + " features, got " +
                                    to_string(in));
      }
      if (s.out_features == 0) throw std::invalid_argument(where + "no output features");
      return Shape{s.out_features, 1, 1};
    case LayerKind::BatchNorm:
      if (in.channels != s.in_channels) throw std::invalid_argument(where + "channel count mismatch");
      return in;
    case LayerKind::Dropout:
      if (!(s.rate >= 0.0 && s.rate < 1.0)) throw std::invalid_argument(where + "rate must be in [0, 1)");
      return in;
    case LayerKind::Reshape:
      if (s.target.size() != in.size()) {
        throw std::invalid_argument(where + "cannot reshape " + to_string(in) + " to " + to_string(s.target));
      }
      return s.target;
    default:
      return in;
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void conv_forward(const LayerSpec& s, const double* w, const double* b, const ValueGrid& x, ValueGrid& y) {
  const Shape& is = x.shape();
  const Shape& os = y.shape();
  const std::size_t k = s.kernel, pad = conv_pad(s), st = s.stride;
  for (std::size_t oc = 0; oc < os.channels; ++oc) {
    double* yo = y.ptr(oc, 0, 0);
    std::fill(yo, yo + os.rows * os.cols, b ? b[oc] : 0.0);
    for (std::size_t ic = 0; ic < is.channels; ++ic) {
      const double* wk = w + (oc * is.channels + ic) * k * k;
      for (std::size_t kr = 0; kr < k; ++kr) {
        for (std::size_t kc = 0; kc < k; ++kc) {
          const double wv = wk[kr * k + kc];
          for (std::size_t r = 0; r < os.rows; ++r) {
            const auto ir = static_cast<std::ptrdiff_t>(r * st + kr) - static_cast<std::ptrdiff_t>(pad);
            if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(is.rows)) continue;
            const double* xrow = x.ptr(ic, static_cast<std::size_t>(ir), 0);
            double* yrow = yo + r * os.cols;
            for (std::size_t c = 0; c < os.cols; ++c) {
              const auto icol = static_cast<std::ptrdiff_t>(c * st + kc) - static_cast<std::ptrdiff_t>(pad);
              if (icol < 0 || icol >= static_cast<std::ptrdiff_t>(is.cols)) continue;
              yrow[c] += wv * xrow[icol];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const LayerSpec& s, const double* w, const ValueGrid& x, const ValueGrid& dy, double* dw,
                   double* db, ValueGrid& dx) {
  const Shape& is = x.shape();
  const Shape& os = dy.shape();
  const std::size_t k = s.kernel, pad = conv_pad(s), st = s.stride;
  for (std::size_t oc = 0; oc < os.channels; ++oc) {
    const double* go = dy.ptr(oc, 0, 0);
    if (db) {
      double acc = 0.0;
      for (std::size_t q = 0; q < os.rows * os.cols; ++q) acc += go[q];
      db[oc] += acc;
    }
    for (std::size_t ic = 0; ic < is.channels; ++ic) {
      const double* wk = w + (oc * is.channels + ic) * k * k;
      double* dwk = dw + (oc * is.channels + ic) * k * k;
      for (std::size_t kr = 0; kr < k; ++kr) {
        for (std::size_t kc = 0; kc < k; ++kc) {
          const double wv = wk[kr * k + kc];
          double acc = 0.0;
          for (std::size_t r = 0; r < os.rows; ++r) {
            const auto ir = static_cast<std::ptrdiff_t>(r * st + kr) - static_cast<std::ptrdiff_t>(pad);
            if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(is.rows)) continue;
            const double* xrow = x.ptr(ic, static_cast<std::size_t>(ir), 0);
            double* dxrow = dx.ptr(ic, static_cast<std::size_t>(ir), 0);
            const double* grow = go + r * os.cols;
            for (std::size_t c = 0; c < os.cols; ++c) {
              const auto icol = static_cast<std::ptrdiff_t>(c * st + kc) - static_cast<std::ptrdiff_t>(pad);
              if (icol < 0 || icol >= static_cast<std::ptrdiff_t>(is.cols)) continue;
              acc += grow[c] * xrow[icol];
              dxrow[icol] += grow[c] * wv;
            }
          }
          dwk[kr * k + kc] += acc;
        }
      }
    }
  }
}

}  // namespace

nlohmann::json to_json(const LayerSpec& s) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(s.kind);
  switch (s.kind) {
    case LayerKind::Conv2d:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding == Padding::Same ? "same" : "valid";
      j["bias"] = s.bias;
      break;
    case LayerKind::Dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::Dropout:
      j["rate"] = s.rate;
      break;
    case LayerKind::BatchNorm:
      j["channels"] = s.in_channels;
      j["momentum"] = s.momentum;
      j["eps"] = s.eps;
      break;
    case LayerKind::Reshape:
      j["target"] = {s.target.channels, s.target.rows, s.target.cols};
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::Conv2d:
      s.in_channels = j.at("in_channels").get<std::size_t>();
      s.out_channels = j.at("out_channels").get<std::size_t>();
      s.kernel = j.at("kernel").get<std::size_t>();
      s.stride = j.value("stride", std::size_t{1});
      s.padding = j.value("padding", std::string("same")) == "valid" ? Padding::Valid : Padding::Same;
      s.bias = j.value("bias", true);
      break;
    case LayerKind::Dense:
      s.in_features = j.at("in_features").get<std::size_t>();
      s.out_features = j.at("out_features").get<std::size_t>();
      break;
    case LayerKind::Dropout:
      s.rate = j.at("rate").get<double>();
      break;
    case LayerKind::BatchNorm:
      s.in_channels = j.at("channels").get<std::size_t>();
      s.momentum = j.value("momentum", 0.1);
      s.eps = j.value("eps", 1e-5);
      break;
    case LayerKind::Reshape: {
      const auto& t = j.at("target");
      s.target = Shape{t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(), t.at(2).get<std::size_t>()};
      break;
    }
    default:
      break;
  }
  return s;
}

Network::Network(Shape input, std::vector<LayerSpec> layers, std::uint64_t init_seed)
    : layers_(std::move(layers)), init_seed_(init_seed) {
  if (input.size() == 0) throw std::invalid_argument("empty network input shape");
  shapes_.push_back(input);
  std::size_t np = 0, nb = 0;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    shapes_.push_back(output_shape_of(layers_[k], shapes_.back(), k));
    param_offsets_.push_back(np);
    buffer_offsets_.push_back(nb);
    np += param_count_of(layers_[k]);
    nb += buffer_count_of(layers_[k]);
  }
  params_.assign(np, 0.0);
  buffers_.assign(nb, 0.0);

  Rng rng(init_seed);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const LayerSpec& s = layers_[k];
    double* p = params_.data() + param_offsets_[k];
    if (s.kind == LayerKind::Conv2d || s.kind == LayerKind::Dense) {
      const std::size_t fan_in =
          s.kind == LayerKind::Conv2d ? s.in_channels * s.kernel * s.kernel : s.in_features;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t q = 0; q < param_count_of(s); ++q) p[q] = rng.uniform(-bound, bound);
    } else if (s.kind == LayerKind::BatchNorm) {
      std::fill(p, p + s.in_channels, 1.0);
      double* b = buffers_.data() + buffer_offsets_[k];
      std::fill(b + s.in_channels, b + 2 * s.in_channels, 1.0);  // running variance
    }
  }
}

bool Network::has_stochastic_layers() const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const LayerSpec& s) { return s.kind == LayerKind::Dropout && s.rate > 0.0; });
}

ForwardResult forward(const Network& net, const ValueGrid& input, Mode mode, std::uint64_t rng_seed) {
  if (!(input.shape() == net.input_shape())) {
    throw std::invalid_argument("input shape " + to_string(input.shape()) + " does not match network input " +
                                to_string(net.input_shape()));
  }
  const auto layers = net.layers();
  Tape tape;
  tape.net = &net;
  tape.version = net.version();
  tape.mode = mode;
  tape.inputs.reserve(layers.size());
  tape.aux.resize(layers.size());
  tape.channel.resize(layers.size());

  ValueGrid x = input;
  const double* params = net.params().data();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const LayerSpec& s = layers[k];
    const Shape out_shape = net.shapes()[k + 1];
    ValueGrid y(out_shape);
    const double* p = params + net.param_offset(k);
    switch (s.kind) {
      case LayerKind::Conv2d: {
        const double* b = s.bias ? p + s.out_channels * s.in_channels * s.kernel * s.kernel : nullptr;
        conv_forward(s, p, b, x, y);
        break;
      }
      case LayerKind::Dense: {
        const double* b = p + s.out_features * s.in_features;
        for (std::size_t o = 0; o < s.out_features; ++o) {
          double acc = b[o];
          const double* wr = p + o * s.in_features;
          for (std::size_t q = 0; q < s.in_features; ++q) acc += wr[q] * x[q];
          y[o] = acc;
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t q = 0; q < x.size(); ++q) y[q] = x[q] > 0.0 ? x[q] : 0.0;
        break;
      case LayerKind::Sigmoid:
        for (std::size_t q = 0; q < x.size(); ++q) y[q] = sigmoid(x[q]);
        break;
      case LayerKind::Dropout:
        if (mode == Mode::Train && s.rate > 0.0) {
          Rng rng(derive_seed(rng_seed, k));
          auto& mask = tape.aux[k];
          mask.resize(x.size());
          const double keep = 1.0 - s.rate;
          for (std::size_t q = 0; q < x.size(); ++q) {
            mask[q] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
            y[q] = x[q] * mask[q];
          }
        } else {
          y = x;
        }
        break;
      case LayerKind::BatchNorm: {
        const std::size_t channels = s.in_channels;
        const std::size_t n = x.shape().rows * x.shape().cols;
        const double* gamma = p;
        const double* beta = p + channels;
        const double* running = net.buffers().data() + net.buffer_offset(k);
        auto& xhat = tape.aux[k];
        auto& stats = tape.channel[k];  // [inv_std | batch mean | batch var]
        xhat.resize(x.size());
        stats.assign(3 * channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
          const double* xc = x.ptr(c, 0, 0);
          double mean, var;
          if (mode == Mode::Train) {
            mean = 0.0;
            for (std::size_t q = 0; q < n; ++q) mean += xc[q];
            mean /= static_cast<double>(n);
            var = 0.0;
            for (std::size_t q = 0; q < n; ++q) var += (xc[q] - mean) * (xc[q] - mean);
            var /= static_cast<double>(n);
          } else {
            mean = running[c];
            var = running[channels + c];
          }
          const double inv_std = 1.0 / std::sqrt(var + s.eps);
          stats[c] = inv_std;
          stats[channels + c] = mean;
          stats[2 * channels + c] = var;
          for (std::size_t q = 0; q < n; ++q) {
            const double h = (xc[q] - mean) * inv_std;
            xhat[c * n + q] = h;
            y[c * n + q] = gamma[c] * h + beta[c];
          }
        }
        break;
      }
      case LayerKind::Reshape:
        y = x.reshaped(out_shape);
        break;
    }
    tape.inputs.push_back(std::move(x));
    x = std::move(y);
  }
  return ForwardResult{std::move(x), std::move(tape)};
}

Gradients backward(const Network& net, const Tape& tape, const ValueGrid& output_gradient) {
  if (tape.net != &net || tape.version != net.version() || tape.inputs.size() != net.layers().size()) {
    throw std::logic_error("stale tape: network changed since forward");
  }
  if (!(output_gradient.shape() == net.output_shape())) {
    throw std::invalid_argument("output gradient shape does not match network output");
  }
  const auto layers = net.layers();
  const double* params = net.params().data();
  Gradients g;
  g.params.assign(net.param_count(), 0.0);
  ValueGrid dy = output_gradient;
  for (std::size_t kk = layers.size(); kk-- > 0;) {
    const LayerSpec& s = layers[kk];
    const ValueGrid& x = tape.inputs[kk];
    ValueGrid dx(x.shape());
    const double* p = params + net.param_offset(kk);
    double* dp = g.params.data() + net.param_offset(kk);
    switch (s.kind) {
      case LayerKind::Conv2d: {
        double* db = s.bias ? dp + s.out_channels * s.in_channels * s.kernel * s.kernel : nullptr;
        conv_backward(s, p, x, dy, dp, db, dx);
        break;
      }
      case LayerKind::Dense: {
        double* db = dp + s.out_features * s.in_features;
        for (std::size_t o = 0; o < s.out_features; ++o) {
          const double go = dy[o];
          db[o] += go;
          const double* wr = p + o * s.in_features;
          double* dwr = dp + o * s.in_features;
          for (std::size_t q = 0; q < s.in_features; ++q) {
            dwr[q] += go * x[q];
            dx[q] += go * wr[q];
          }
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t q = 0; q < x.size(); ++q) dx[q] = x[q] > 0.0 ? dy[q] : 0.0;
        break;
      case LayerKind::Sigmoid:
        for (std::size_t q = 0; q < x.size(); ++q) {
          const double sv = sigmoid(x[q]);
          dx[q] = dy[q] * sv * (1.0 - sv);
        }
        break;
      case LayerKind::Dropout:
        if (!tape.aux[kk].empty()) {
          for (std::size_t q = 0; q < x.size(); ++q) dx[q] = dy[q] * tape.aux[kk][q];
        } else {
          dx = dy;
        }
        break;
      case LayerKind::BatchNorm: {
        const std::size_t channels = s.in_channels;
        const std::size_t n = x.shape().rows * x.shape().cols;
        const auto& xhat = tape.aux[kk];
        const auto& stats = tape.channel[kk];
        for (std::size_t c = 0; c < channels; ++c) {
          const double inv_std = stats[c];
          const double gamma = p[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t q = 0; q < n; ++q) {
            sum_dy += dy[c * n + q];
            sum_dy_xhat += dy[c * n + q] * xhat[c * n + q];
          }
          dp[c] += sum_dy_xhat;
          dp[channels + c] += sum_dy;
          if (tape.mode == Mode::Train) {
            const double nn = static_cast<double>(n);
            for (std::size_t q = 0; q < n; ++q) {
              dx[c * n + q] =
                  gamma * inv_std / nn * (nn * dy[c * n + q] - sum_dy - xhat[c * n + q] * sum_dy_xhat);
            }
          } else {
            for (std::size_t q = 0; q < n; ++q) dx[c * n + q] = dy[c * n + q] * gamma * inv_std;
          }
        }
        break;
      }
      case LayerKind::Reshape:
        dx = dy.reshaped(x.shape());
        break;
    }
    dy = std::move(dx);
  }
  g.input = std::move(dy);
  return g;
}

void commit_running_stats(Network& net, const Tape& tape) {
  if (tape.net != &net || tape.version != net.version()) throw std::logic_error("stale tape: network changed since forward");
  if (tape.mode != Mode::Train) return;
  const auto layers = net.layers();
  auto buffers = net.mutable_buffers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const LayerSpec& s = layers[k];
    if (s.kind != LayerKind::BatchNorm) continue;
    const std::size_t channels = s.in_channels;
    const std::size_t n = tape.inputs[k].shape().rows * tape.inputs[k].shape().cols;
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    double* running = buffers.data() + net.buffer_offset(k);
    const auto& stats = tape.channel[k];
    for (std::size_t c = 0; c < channels; ++c) {
      running[c] = (1.0 - s.momentum) * running[c] + s.momentum * stats[channels + c];
      running[channels + c] =
          (1.0 - s.momentum) * running[channels + c] + s.momentum * stats[2 * channels + c] * unbias;
    }
  }
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment sizes differ");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t q = 0; q < params.size(); ++q) {
    st.m[q] = st.beta1 * st.m[q] + (1.0 - st.beta1) * grads[q];
    st.v[q] = st.beta2 * st.v[q] + (1.0 - st.beta2) * grads[q] * grads[q];
    const double mhat = st.m[q] / c1;
    const double vhat = st.v[q] / c2;
    params[q] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.eps);
  }
}

namespace {

double projected_loss(const ValueGrid& out, const std::vector<double>& w) {
  double acc = 0.0;
  for (std::size_t q = 0; q < out.size(); ++q) acc += w[q] * out[q];
  return acc;
}

std::vector<std::uint8_t> relu_signs(const Network& net, const Tape& tape) {
  std::vector<std::uint8_t> signs;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    if (net.layers()[k].kind != LayerKind::Relu) continue;
    for (double v : tape.inputs[k].values()) signs.push_back(v > 0.0);
  }
  return signs;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

GradCheckResult grad_check(const Network& net, const ValueGrid& input, double eps, Mode mode, std::uint64_t seed) {
  if (mode == Mode::Train && net.has_stochastic_layers()) {
    throw std::invalid_argument("non-deterministic layer in grad_check");
  }
  Rng rng(seed);
  std::vector<double> w(net.output_shape().size());
  for (auto& v : w) v = rng.normal();

  auto base = forward(net, input, mode, seed);
  const ValueGrid upstream(net.output_shape(), w);
  const Gradients analytic = backward(net, base.tape, upstream);
  const auto base_signs = relu_signs(net, base.tape);

  GradCheckResult result;
  // Loss at a perturbed point, and whether any ReLU input changed sign.
  auto probe = [&](const Network& probe_net, const ValueGrid& probe_input) {
    auto r = forward(probe_net, probe_input, mode, seed);
    return std::pair{projected_loss(r.output, w), relu_signs(probe_net, r.tape) != base_signs};
  };

  Network work = net;
  for (std::size_t q = 0; q < net.param_count(); ++q) {
    const double orig = work.params()[q];
    work.mutable_params()[q] = orig + eps;
    const auto [lp, kp] = probe(work, input);
    work.mutable_params()[q] = orig - eps;
    const auto [lm, km] = probe(work, input);
    work.mutable_params()[q] = orig;
    if (kp || km) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * eps);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic.params[q], numeric));
    ++result.checked;
  }

  ValueGrid x = input;
  for (std::size_t q = 0; q < x.size(); ++q) {
    const double orig = x[q];
    x[q] = orig + eps;
    const auto [lp, kp] = probe(net, x);
    x[q] = orig - eps;
    const auto [lm, km] = probe(net, x);
    x[q] = orig;
    if (kp || km) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * eps);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic.input[q], numeric));
    ++result.checked;
  }
  return result;
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    out.write(bytes, 8);
  }
}

std::vector<double> read_f64_le(std::istream& in, std::size_t count) {
  std::vector<double> values(count);
  for (auto& v : values) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("truncated binary array");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
  return values;
}

void save_checkpoint(const Network& net, const std::filesystem::path& dir, const std::string& name,
                     const nlohmann::json& extra) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "sparsekt-checkpoint-v1";
  const Shape& in = net.input_shape();
  manifest["input_shape"] = {in.channels, in.rows, in.cols};
  manifest["init_seed"] = net.init_seed();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& s : net.layers()) layers.push_back(to_json(s));
  manifest["layers"] = layers;
  manifest["param_count"] = net.param_count();
  manifest["buffer_count"] = net.buffers().size();
  manifest["binary"] = name + ".bin";
  manifest["extra"] = extra;

  std::filesystem::create_directories(dir);
  const auto json_path = dir / (name + ".json");
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot write " + json_path.string());
  js << manifest.dump(2) << "\n";
  const auto bin_path = dir / (name + ".bin");
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  write_f64_le(bin, net.params());
  write_f64_le(bin, net.buffers());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  std::ifstream js(manifest_path);
  if (!js) throw std::runtime_error("cannot read " + manifest_path.string());
  const auto manifest = nlohmann::json::parse(js);
  const auto& is = manifest.at("input_shape");
  const Shape input{is.at(0).get<std::size_t>(), is.at(1).get<std::size_t>(), is.at(2).get<std::size_t>()};
  std::vector<LayerSpec> layers;
  for (const auto& l : manifest.at("layers")) layers.push_back(layer_from_json(l));
  Network net(input, std::move(layers), manifest.at("init_seed").get<std::uint64_t>());
  if (manifest.at("param_count").get<std::size_t>() != net.param_count() ||
      manifest.at("buffer_count").get<std::size_t>() != net.buffers().size()) {
    throw std::runtime_error("checkpoint parameter counts do not match its layer specs");
  }
  const auto bin_path = manifest_path.parent_path() / manifest.at("binary").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
  const auto params = read_f64_le(bin, net.param_count());
  const auto buffers = read_f64_le(bin, net.buffers().size());
  std::copy(params.begin(), params.end(), net.mutable_params().begin());
  std::copy(buffers.begin(), buffers.end(), net.mutable_buffers().begin());
  return LoadedCheckpoint{std::move(net), manifest.value("extra", nlohmann::json::object())};
}

}  // namespace sparsekt::dg
