#include <cmath>

#include <gtest/gtest.h>

#include "gen3d/nn.hpp"
#include "gen3d/rng.hpp"

using namespace gen3d;

TEST(Scalars, SigmoidAndLog1pexpAreStable) {
  EXPECT_DOUBLE_EQ(nn::sigmoid(0.0), 0.5);
  EXPECT_EQ(nn::sigmoid(-800.0), 0.0);
  EXPECT_EQ(nn::sigmoid(800.0), 1.0);
  EXPECT_DOUBLE_EQ(nn::log1pexp(0.0), std::log(2.0));
  EXPECT_DOUBLE_EQ(nn::log1pexp(800.0), 800.0);
  EXPECT_GT(nn::log1pexp(-800.0), -1.0);
  for (double z : {-30.0, -2.5, -1e-3, 0.7, 4.0, 25.0})
    EXPECT_NEAR(nn::log1pexp(z), std::log1p(std::exp(z)), 1e-14 * std::max(1.0, std::abs(z)));
}

TEST(Activations, MatrixFormsMatchScalarForms) {
  Rng rng(1);
  nn::Matrix<double> z(7, 33);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform(-0.2, 0.2);
  z(0) = 0.0;
  z(1) = 50.0;
  z(2) = -50.0;
  const nn::Softplus sp{100.0};
  const nn::SmoothLeakyRelu lr{0.2, 10.0};
  const auto a = nn::activate(sp, z), a1 = nn::activate_d1(sp, z), a2 = nn::activate_d2(sp, z);
  const auto b = nn::activate(lr, z), b1 = nn::activate_d1(lr, z), b2 = nn::activate_d2(lr, z);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(a(i), sp.value(z(i)), 1e-14);
    EXPECT_NEAR(a1(i), sp.d1(z(i)), 1e-14);
    EXPECT_NEAR(a2(i), sp.d2(z(i)), 1e-11);
    EXPECT_NEAR(b(i), lr.value(z(i)), 1e-14);
    EXPECT_NEAR(b1(i), lr.d1(z(i)), 1e-14);
    EXPECT_NEAR(b2(i), lr.d2(z(i)), 1e-12);
  }
}

TEST(Activations, DerivativesMatchCentralDifferences) {
  const nn::Softplus sp{100.0};
  const nn::SmoothLeakyRelu lr{0.2, 10.0};
  const double h = 1e-6;
  for (double z : {-0.05, -0.003, 0.0, 0.01, 0.2}) {
    EXPECT_NEAR(sp.d1(z), (sp.value(z + h) - sp.value(z - h)) / (2 * h), 1e-6);
    EXPECT_NEAR(sp.d2(z), (sp.d1(z + h) - sp.d1(z - h)) / (2 * h), 1e-4);
    EXPECT_NEAR(lr.d1(z), (lr.value(z + h) - lr.value(z - h)) / (2 * h), 1e-6);
    EXPECT_NEAR(lr.d2(z), (lr.d1(z + h) - lr.d1(z - h)) / (2 * h), 1e-5);
  }
}

TEST(Activations, LimitsMatchTheirKinkedCounterparts) {
  const nn::Softplus sp{100.0};
  EXPECT_NEAR(sp.value(1.0), 1.0, 1e-12);
  EXPECT_NEAR(sp.value(-1.0), 0.0, 1e-12);
  const nn::SmoothLeakyRelu lr{0.2, 10.0};
  EXPECT_NEAR(lr.value(5.0), 5.0, 1e-6);
  EXPECT_NEAR(lr.value(-5.0), -1.0, 1e-6);
}

class DenseLayer : public ::testing::Test {
 protected:
  void SetUp() override {
    layer = nn::Dense<double>("fc", 3, 2);
    layer.declare(store);
    auto w = layer.weight(store);
    w << 1, 2, 3, -1, 0.5, 0;
    layer.bias(store) << 0.1, -0.2;
  }
  nn::Dense<double> layer;
  ParameterStore<double> store;
};

TEST_F(DenseLayer, ForwardIsAffineMap) {
  nn::Matrix<double> h(3, 2);
  h << 1, 0, 2, 1, -1, 3;
  const auto z = layer.forward(store, h);
  EXPECT_DOUBLE_EQ(z(0, 0), 1 + 4 - 3 + 0.1);
  EXPECT_DOUBLE_EQ(z(1, 0), -1 + 1 - 0.2);
  EXPECT_DOUBLE_EQ(z(0, 1), 0 + 2 + 9 + 0.1);
  EXPECT_DOUBLE_EQ(z(1, 1), 0.5 - 0.2);
  EXPECT_EQ(store.segment("fc.weight")[1], 2.0);  // row-major
}

TEST_F(DenseLayer, ReverseModeMatchesDifferences) {
  Rng rng(2);
  nn::Matrix<double> h(3, 4), dz(2, 4);
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = rng.normal();
  for (Eigen::Index i = 0; i < dz.size(); ++i) dz(i) = rng.normal();
  auto grad = store.zeros_like();
  layer.accumulate(grad, dz, h);
  const auto dh = layer.backprop(store, dz);
  auto loss = [&](const ParameterStore<double>& s, const nn::Matrix<double>& x) {
    return (layer.forward(s, x).array() * dz.array()).sum();
  };
  const double eps = 1e-6;
  for (std::size_t i = 0; i < store.total_len(); ++i) {
    auto up = store, dn = store;
    up.values()[i] += eps;
    dn.values()[i] -= eps;
    EXPECT_NEAR(grad.values()[i], (loss(up, h) - loss(dn, h)) / (2 * eps), 1e-8);
  }
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    auto up = h, dn = h;
    up(i) += eps;
    dn(i) -= eps;
    EXPECT_NEAR(dh(i), (loss(store, up) - loss(store, dn)) / (2 * eps), 1e-8);
  }
}

TEST_F(DenseLayer, TangentOfParameterGradient) {
  // d/ds of dW(h + s h_dot, dz + s dz_dot) at s = 0.
  Rng rng(3);
  nn::Matrix<double> h(3, 2), h_dot(3, 2), dz(2, 2), dz_dot(2, 2);
  for (auto* m : {&h, &h_dot, &dz, &dz_dot})
    for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = rng.normal();
  auto tangent = store.zeros_like();
  layer.accumulate_tangent(tangent, dz, dz_dot, h, h_dot);
  const double eps = 1e-6;
  auto at = [&](double s) {
    auto g = store.zeros_like();
    layer.accumulate(g, dz + s * dz_dot, h + s * h_dot);
    return g;
  };
  const auto up = at(eps), dn = at(-eps);
  for (std::size_t i = 0; i < store.total_len(); ++i)
    EXPECT_NEAR(tangent.values()[i], (up.values()[i] - dn.values()[i]) / (2 * eps), 1e-7);
  EXPECT_TRUE(layer.forward_tangent(store, h_dot).isApprox(layer.weight(store) * h_dot));
}
