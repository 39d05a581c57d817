#include <gtest/gtest.h>

#include <cmath>

#include "marlsim/errors.hpp"
#include "marlsim/net.hpp"
#include "marlsim/rng.hpp"
#include "support/oracles.hpp"

using namespace marlsim;

namespace {

MlpParams scalar_net(double w, double b, Activation out) {
  MlpParams p = init_params({1, 1}, out, 0);
  p.weights[0].data = {w};
  p.biases[0] = {b};
  return p;
}

}  // namespace

TEST(Net, InitDeterministic) {
  EXPECT_EQ(init_params({23, 128, 128, 2}, Activation::kTanh, 1), init_params({23, 128, 128, 2}, Activation::kTanh, 1));
  EXPECT_NE(init_params({23, 8, 2}, Activation::kTanh, 1), init_params({23, 8, 2}, Activation::kTanh, 2));
}

TEST(Net, InitShapes) {
  MlpParams p = init_params({4, 1}, Activation::kLinear, 5);
  ASSERT_EQ(p.num_layers(), 1u);
  EXPECT_EQ(p.weights[0].rows, 1u);
  EXPECT_EQ(p.weights[0].cols, 4u);
  EXPECT_EQ(p.biases[0].size(), 1u);
  EXPECT_EQ(p.biases[0][0], 0.0);
  const double limit = std::sqrt(6.0 / 5.0);
  for (double w : p.weights[0].data) EXPECT_LE(std::abs(w), limit);
}

TEST(Net, InitRejectsBadSizes) {
  EXPECT_THROW(init_params({3}, Activation::kLinear, 0), std::invalid_argument);
  EXPECT_THROW(init_params({3, 0, 1}, Activation::kLinear, 0), std::invalid_argument);
}

TEST(Net, ZeroNetOutputsZero) {
  MlpParams p = init_params({3, 5, 2}, Activation::kTanh, 0);
  for (auto& w : p.weights) std::fill(w.data.begin(), w.data.end(), 0.0);
  Tensor2 x(2, 3, {1, 2, 3, -1, -2, -3});
  for (double y : forward(p, x).data) EXPECT_EQ(y, 0.0);
}

TEST(Net, DiagonalLinearLayer) {
  MlpParams p = init_params({2, 2}, Activation::kLinear, 0);
  p.weights[0].data = {2, 0, 0, 3};
  Tensor2 y = forward(p, Tensor2(1, 2, {1, 1}));
  EXPECT_EQ(y.data, (std::vector<double>{2, 3}));
}

TEST(Net, ShapeMismatchThrows) {
  MlpParams p = init_params({3, 2}, Activation::kLinear, 0);
  EXPECT_THROW(forward(p, Tensor2(1, 4)), ShapeError);
  ForwardCache cache;
  forward(p, Tensor2(2, 3), &cache);
  EXPECT_THROW(backward(p, cache, Tensor2(2, 3)), ShapeError);
  EXPECT_THROW(Tensor2(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Net, ForwardMatchesNaiveMatmul) {
  Rng rng(3);
  MlpParams p = init_params({23, 128, 128, 2}, Activation::kTanh, 11);
  for (auto& b : p.biases) {
    for (double& v : b) v = rng.uniform(-0.3, 0.3);
  }
  Tensor2 x(32, 23);
  for (double& v : x.data) v = rng.uniform(-1, 1);
  const Tensor2 fast = forward(p, x);
  const Tensor2 slow = oracle::naive_forward(p, x);
  ASSERT_EQ(fast.rows, 32u);
  ASSERT_EQ(fast.cols, 2u);
  for (std::size_t k = 0; k < fast.data.size(); ++k) EXPECT_NEAR(fast.data[k], slow.data[k], 1e-12);
}

TEST(Net, LinearScalarGradients) {
  MlpParams p = scalar_net(0.7, 0.0, Activation::kLinear);
  ForwardCache cache;
  forward(p, Tensor2(1, 1, {3.0}), &cache);
  MlpGrads g = backward(p, cache, Tensor2(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(g.weights[0].data[0], 3.0);
  EXPECT_DOUBLE_EQ(g.input.data[0], 0.7);
  EXPECT_DOUBLE_EQ(g.biases[0][0], 1.0);
}

TEST(Net, TanhAtZero) {
  MlpParams p = scalar_net(1.0, 0.0, Activation::kTanh);
  ForwardCache cache;
  forward(p, Tensor2(1, 1, {0.0}), &cache);
  MlpGrads g = backward(p, cache, Tensor2(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(g.weights[0].data[0], 0.0);
  EXPECT_DOUBLE_EQ(g.biases[0][0], 1.0);
}

TEST(Net, GradientsMatchFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = oracle::random_net_case(rng);
    ForwardCache cache;
    forward(c.params, c.input, &cache);
    MlpGrads g = backward(c.params, cache, c.output_grad);
    EXPECT_LT(oracle::max_gradient_error(c.params, c.input, c.output_grad, g), 1e-4) << "trial " << trial;
  }
}

TEST(Net, LinearNetIsLinear) {
  Rng rng(8);
  MlpParams p = init_params({6, 4}, Activation::kLinear, 9);
  Tensor2 a(3, 6), b(3, 6), sum(3, 6), scaled(3, 6);
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    a.data[k] = rng.uniform(-1, 1);
    b.data[k] = rng.uniform(-1, 1);
    sum.data[k] = a.data[k] + b.data[k];
    scaled.data[k] = 2.5 * a.data[k];
  }
  const Tensor2 fa = forward(p, a), fb = forward(p, b), fs = forward(p, sum), fk = forward(p, scaled);
  for (std::size_t k = 0; k < fa.data.size(); ++k) {
    EXPECT_NEAR(fs.data[k], fa.data[k] + fb.data[k], 1e-12);
    EXPECT_NEAR(fk.data[k], 2.5 * fa.data[k], 1e-12);
  }
}

TEST(Net, AdamZeroGradKeepsParams) {
  MlpParams p = init_params({3, 4, 2}, Activation::kTanh, 1);
  const MlpParams before = p;
  AdamState s = AdamState::zeros_like(p);
  MlpGrads g;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].size(), 0.0);
  }
  adam_step(p, g, s, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Net, AdamFirstStep) {
  MlpParams p = scalar_net(0.0, 0.0, Activation::kLinear);
  AdamState s = AdamState::zeros_like(p);
  MlpGrads g;
  g.weights.push_back(Tensor2(1, 1, {1.0}));
  g.biases.push_back({0.0});
  adam_step(p, g, s, 0.01);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
  EXPECT_NEAR(p.weights[0].data[0], -0.01 / (1.0 + 1e-8), 1e-15);
}

TEST(Net, AdamFreshStepDependsOnSignOnly) {
  for (double grad : {1e-3, 0.5, 40.0}) {
    for (double sign : {1.0, -1.0}) {
      MlpParams p = scalar_net(0.0, 0.0, Activation::kLinear);
      AdamState s = AdamState::zeros_like(p);
      MlpGrads g;
      g.weights.push_back(Tensor2(1, 1, {sign * grad}));
      g.biases.push_back({0.0});
      adam_step(p, g, s, 0.01);
      EXPECT_NEAR(p.weights[0].data[0], -sign * 0.01, 1e-6);
    }
  }
}

TEST(Net, AdamNanNamesLayer) {
  MlpParams p = init_params({2, 3, 1}, Activation::kLinear, 1);
  AdamState s = AdamState::zeros_like(p);
  MlpGrads g;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].size(), 0.0);
  }
  g.weights[1].data[0] = std::nan("");
  try {
    adam_step(p, g, s, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
  EXPECT_EQ(s.step_count, 0);
}

TEST(Net, PolyakCases) {
  MlpParams target = init_params({3, 4, 2}, Activation::kTanh, 1);
  const MlpParams online = init_params({3, 4, 2}, Activation::kTanh, 2);
  const MlpParams original = target;

  MlpParams t0 = target;
  polyak_update(t0, online, 0.0);
  EXPECT_EQ(t0, original);

  MlpParams t1 = target;
  polyak_update(t1, online, 1.0);
  EXPECT_EQ(t1, online);

  MlpParams same = online;
  polyak_update(same, online, 0.37);
  EXPECT_EQ(same, online);

  MlpParams a = scalar_net(0.0, 0.0, Activation::kLinear);
  const MlpParams b = scalar_net(1.0, 0.0, Activation::kLinear);
  polyak_update(a, b, 0.01);
  EXPECT_DOUBLE_EQ(a.weights[0].data[0], 0.01);

  EXPECT_THROW(polyak_update(a, online, 0.5), ShapeError);
  EXPECT_THROW(polyak_update(t0, online, 1.5), std::invalid_argument);
}

TEST(Net, ForwardDeterministic) {
  MlpParams p = init_params({5, 7, 3}, Activation::kTanh, 4);
  Tensor2 x(4, 5, 0.3);
  EXPECT_EQ(forward(p, x), forward(p, x));
}
