#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sparsekt/diffgraph.hpp"
#include "sparsekt/random.hpp"

using namespace sparsekt;
using namespace sparsekt::dg;

namespace {

ValueGrid random_grid(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  ValueGrid g(s);
  for (auto& v : g.values()) v = rng.uniform(-1.0, 1.0);
  return g;
}

// Central finite differences of sum(out * w), written independently of grad_check.
std::vector<double> fd_param_gradient(const Network& net, const ValueGrid& x, const std::vector<double>& w,
                                      double eps) {
  Network work = net;
  std::vector<double> g(net.param_count());
  auto loss = [&]() {
    const auto out = forward(work, x, Mode::Eval, 0).output;
    double acc = 0.0;
    for (std::size_t q = 0; q < out.size(); ++q) acc += out[q] * w[q];
    return acc;
  };
  for (std::size_t q = 0; q < g.size(); ++q) {
    const double orig = work.params()[q];
    work.mutable_params()[q] = orig + eps;
    const double lp = loss();
    work.mutable_params()[q] = orig - eps;
    const double lm = loss();
    work.mutable_params()[q] = orig;
    g[q] = (lp - lm) / (2 * eps);
  }
  return g;
}

}  // namespace

TEST_CASE("forward: elementwise layers and identity conv") {
  Network relu(Shape{1, 1, 2}, {LayerSpec::relu()}, 0);
  const auto r = forward(relu, ValueGrid(Shape{1, 1, 2}, {-1.0, 2.0}), Mode::Eval, 0).output;
  CHECK(r == ValueGrid(Shape{1, 1, 2}, {0.0, 2.0}));

  Network sig(Shape{1, 1, 1}, {LayerSpec::sigmoid()}, 0);
  CHECK(forward(sig, ValueGrid(Shape{1, 1, 1}, {0.0}), Mode::Eval, 0).output[0] == 0.5);

  Network conv(Shape{1, 4, 3}, {LayerSpec::conv2d(1, 1, 1)}, 0);
  auto p = conv.mutable_params();
  p[0] = 1.0;
  p[1] = 0.0;
  const auto x = random_grid(Shape{1, 4, 3}, 1);
  CHECK(forward(conv, x, Mode::Eval, 0).output == x);
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Network(Shape{2, 3, 3}, {LayerSpec::conv2d(1, 4, 3)}, 0), std::invalid_argument);
  CHECK_THROWS_AS(Network(Shape{1, 3, 3}, {LayerSpec::conv2d(1, 4, 2)}, 0), std::invalid_argument);
  CHECK_THROWS_AS(Network(Shape{1, 3, 3}, {LayerSpec::dense(8, 2)}, 0), std::invalid_argument);
  CHECK_THROWS_AS(Network(Shape{1, 3, 3}, {LayerSpec::reshape(Shape{1, 2, 4})}, 0), std::invalid_argument);
  CHECK_THROWS_AS(Network(Shape{1, 3, 3}, {LayerSpec::dropout(1.0)}, 0), std::invalid_argument);

  Network net(Shape{1, 3, 3}, {LayerSpec::conv2d(1, 2, 3)}, 0);
  CHECK_THROWS_AS(forward(net, ValueGrid(Shape{1, 3, 2}), Mode::Eval, 0), std::invalid_argument);
}

TEST_CASE("property: same padding preserves rows x cols") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t rows = 1 + rng.below(9), cols = 1 + rng.below(9);
    const std::size_t kernel = 1 + 2 * rng.below(3);
    Network net(Shape{2, rows, cols},
                {LayerSpec::conv2d(2, 3, kernel), LayerSpec::conv2d(3, 1, kernel, false)}, trial);
    CHECK(net.output_shape() == Shape{1, rows, cols});
  }
}

TEST_CASE("backward: hand cases") {
  Network dense(Shape{1, 1, 1}, {LayerSpec::dense(1, 1)}, 0);
  auto p = dense.mutable_params();
  p[0] = 3.0;
  p[1] = 0.0;
  auto fr = forward(dense, ValueGrid(Shape{1, 1, 1}, {2.0}), Mode::Eval, 0);
  auto g = backward(dense, fr.tape, ValueGrid(Shape{1, 1, 1}, {1.0}));
  CHECK(g.params[0] == 2.0);
  CHECK(g.input[0] == 3.0);

  Network net(Shape{2, 3, 3}, {LayerSpec::conv2d(2, 4, 3), LayerSpec::relu(), LayerSpec::conv2d(4, 1, 3)}, 4);
  fr = forward(net, random_grid(Shape{2, 3, 3}, 9), Mode::Eval, 0);
  g = backward(net, fr.tape, ValueGrid(net.output_shape(), 0.0));
  for (double v : g.params) CHECK(v == 0.0);

  SUBCASE("stale tape") {
    net.mutable_params()[0] += 0.1;
    CHECK_THROWS_AS(backward(net, fr.tape, ValueGrid(net.output_shape(), 1.0)), std::logic_error);
  }
}

TEST_CASE("backward matches finite differences on a random 2-layer net") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Network net(Shape{2, 4, 3},
                {LayerSpec::conv2d(2, 3, 3), LayerSpec::sigmoid(), LayerSpec::reshape(Shape{36, 1, 1}),
                 LayerSpec::dense(36, 5), LayerSpec::sigmoid()},
                seed);
    const auto x = random_grid(net.input_shape(), 100 + seed);
    Rng rng(seed);
    std::vector<double> w(5);
    for (auto& v : w) v = rng.normal();
    const auto fr = forward(net, x, Mode::Eval, 0);
    const auto g = backward(net, fr.tape, ValueGrid(net.output_shape(), w));
    const auto fd = fd_param_gradient(net, x, w, 1e-4);
    double worst = 0.0;
    for (std::size_t q = 0; q < fd.size(); ++q) {
      worst = std::max(worst, std::abs(g.params[q] - fd[q]) / std::max({std::abs(g.params[q]), std::abs(fd[q]), 1e-8}));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("adam_step") {
  std::vector<double> params{1.0, -2.0};
  AdamState st(2, 0.01);
  adam_step(params, std::vector<double>{0.0, 0.0}, st);
  CHECK(params == std::vector<double>{1.0, -2.0});
  CHECK(st.step == 1);

  // Step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  std::vector<double> q{1.0, -2.0};
  AdamState s1(2, 0.01);
  adam_step(q, std::vector<double>{0.5, -4.0}, s1);
  CHECK(q[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));

  AdamState snapshot = s1;
  auto a = q, b = q;
  AdamState sa = snapshot, sb = snapshot;
  adam_step(a, std::vector<double>{0.3, 0.1}, sa);
  adam_step(b, std::vector<double>{0.3, 0.1}, sb);
  CHECK(a == b);
  CHECK(sa.m == sb.m);

  CHECK_THROWS_AS(adam_step(a, std::vector<double>{1.0}, sa), std::invalid_argument);
}

TEST_CASE("grad_check") {
  Network linear(Shape{1, 3, 2}, {LayerSpec::reshape(Shape{6, 1, 1}), LayerSpec::dense(6, 4), LayerSpec::dense(4, 2)}, 1);
  CHECK(grad_check(linear, random_grid(linear.input_shape(), 2), 1e-4).max_relative_error < 1e-8);

  Network conv(Shape{3, 5, 4}, {LayerSpec::conv2d(3, 4, 3), LayerSpec::sigmoid(), LayerSpec::conv2d(4, 1, 3),
                                LayerSpec::sigmoid()},
               3);
  const auto r = grad_check(conv, random_grid(conv.input_shape(), 4), 1e-4);
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.checked == conv.param_count() + conv.input_shape().size());

  Network bn(Shape{2, 4, 3}, {LayerSpec::conv2d(2, 3, 3, false), LayerSpec::batchnorm(3), LayerSpec::sigmoid()}, 5);
  CHECK(grad_check(bn, random_grid(bn.input_shape(), 6), 1e-4, Mode::Train).max_relative_error < 1e-4);
  CHECK(grad_check(bn, random_grid(bn.input_shape(), 6), 1e-4, Mode::Eval).max_relative_error < 1e-4);

  Network drop(Shape{1, 2, 2}, {LayerSpec::dropout(0.2), LayerSpec::sigmoid()}, 0);
  CHECK_THROWS_WITH(grad_check(drop, random_grid(drop.input_shape(), 1), 1e-4, Mode::Train),
                    "non-deterministic layer in grad_check");
  CHECK_NOTHROW(grad_check(drop, random_grid(drop.input_shape(), 1), 1e-4, Mode::Eval));
}

TEST_CASE("dropout and batchnorm modes") {
  Network net(Shape{2, 3, 3}, {LayerSpec::conv2d(2, 4, 3, false), LayerSpec::batchnorm(4), LayerSpec::relu(),
                               LayerSpec::dropout(0.5)},
              8);
  const auto x = random_grid(net.input_shape(), 1);
  const auto e1 = forward(net, x, Mode::Eval, 1).output;
  const auto e2 = forward(net, x, Mode::Eval, 2).output;
  CHECK(e1 == e2);

  const auto t1 = forward(net, x, Mode::Train, 1).output;
  CHECK(t1 == forward(net, x, Mode::Train, 1).output);
  CHECK_FALSE(t1 == forward(net, x, Mode::Train, 2).output);

  // Training forwards alone do not touch the running statistics.
  CHECK(forward(net, x, Mode::Eval, 0).output == e1);

  auto fr = forward(net, x, Mode::Train, 3);
  commit_running_stats(net, fr.tape);
  const auto buffers = net.buffers();
  CHECK(buffers[0] != 0.0);  // running mean moved
  const auto e3 = forward(net, x, Mode::Eval, 0).output;
  CHECK_FALSE(e3 == e1);

  // Eval output of one sample is unaffected by other samples once stats are frozen.
  const auto other = random_grid(net.input_shape(), 77);
  forward(net, other, Mode::Eval, 0);
  CHECK(forward(net, x, Mode::Eval, 0).output == e3);
}

TEST_CASE("batchnorm eval uses running statistics") {
  Network net(Shape{1, 1, 2}, {LayerSpec::batchnorm(1)}, 0);
  auto b = net.mutable_buffers();
  b[0] = 1.0;  // mean
  b[1] = 4.0;  // variance
  auto p = net.mutable_params();
  p[0] = 2.0;  // gamma
  p[1] = 0.5;  // beta
  const auto y = forward(net, ValueGrid(Shape{1, 1, 2}, {3.0, 1.0}), Mode::Eval, 0).output;
  CHECK(y[0] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
  CHECK(y[1] == doctest::Approx(0.5));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "sparsekt_ckpt_test";
  std::filesystem::remove_all(dir);
  Network net(Shape{3, 4, 3}, {LayerSpec::conv2d(3, 4, 3, false), LayerSpec::batchnorm(4), LayerSpec::relu(),
                               LayerSpec::dropout(0.2), LayerSpec::conv2d(4, 1, 3), LayerSpec::reshape(Shape{1, 4, 3}),
                               LayerSpec::sigmoid()},
              21);
  auto fr = forward(net, random_grid(net.input_shape(), 1), Mode::Train, 5);
  commit_running_stats(net, fr.tape);
  save_checkpoint(net, dir, "gen", nlohmann::json{{"note", "x"}});
  const auto loaded = load_checkpoint(dir / "gen.json");
  CHECK(std::equal(loaded.net.params().begin(), loaded.net.params().end(), net.params().begin()));
  CHECK(std::equal(loaded.net.buffers().begin(), loaded.net.buffers().end(), net.buffers().begin()));
  CHECK(std::vector<LayerSpec>(loaded.net.layers().begin(), loaded.net.layers().end()) ==
        std::vector<LayerSpec>(net.layers().begin(), net.layers().end()));
  CHECK(loaded.extra["note"] == "x");
  CHECK(std::filesystem::file_size(dir / "gen.bin") == 8 * (net.param_count() + net.buffers().size()));

  std::ifstream bin(dir / "gen.bin", std::ios::binary);
  unsigned char first[8];
  bin.read(reinterpret_cast<char*>(first), 8);
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= std::uint64_t{first[k]} << (8 * k);
  CHECK(std::bit_cast<double>(bits) == net.params()[0]);
  std::filesystem::remove_all(dir);
}
