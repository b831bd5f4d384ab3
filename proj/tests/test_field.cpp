#include <cmath>

#include <gtest/gtest.h>

#include "gen3d/field.hpp"
#include "gen3d/surface.hpp"

using namespace gen3d;

namespace {

FieldConfig small_config() {
  FieldConfig c;
  c.d_s = 8;
  c.d_a = 6;
  c.width = 32;
  c.depth = 3;
  c.color_width = 16;
  c.freq_x = 4;
  c.freq_d = 2;
  return c;
}

Eigen::Matrix3Xd random_points(Rng& rng, int n, double r) {
  Eigen::Matrix3Xd xs(3, n);
  for (int i = 0; i < n; ++i) xs.col(i) = r * rng.uniform() * rng.unit_vector();
  return xs;
}

}  // namespace

TEST(SigmaToAlpha, ClosedFormValues) {
  EXPECT_EQ(sigma_to_alpha(0.0, 0.3), 0.0);
  EXPECT_EQ(sigma_to_alpha(1e300, 0.3), 1.0);
  EXPECT_NEAR(sigma_to_alpha(1.0, std::log(2.0)), 0.5, 1e-15);
  EXPECT_THROW(sigma_to_alpha(-1.0, 0.1), ContractError);
  EXPECT_THROW(sigma_to_alpha(1.0, 0.0), ContractError);
}

TEST(Latents, DeterministicAndStandardNormal) {
  Rng a(5), b(5);
  const auto ca = sample_latents(a, 4, 3), cb = sample_latents(b, 4, 3);
  EXPECT_EQ(ca.z_s, cb.z_s);
  EXPECT_EQ(ca.z_a, cb.z_a);
  Rng rng(6);
  const int n = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(5), sq = Eigen::VectorXd::Zero(5);
  for (int i = 0; i < n; ++i) {
    const auto c = sample_latents(rng, 5, 1);
    sum += c.z_s;
    sq += c.z_s.cwiseAbs2();
  }
  for (int k = 0; k < 5; ++k) {
    const double mean = sum[k] / n;
    EXPECT_LT(std::abs(mean), 0.05);
    EXPECT_LT(std::abs(sq[k] / n - mean * mean - 1.0), 0.1);
  }
  EXPECT_THROW(sample_latents(rng, 0, 3), ContractError);
}

TEST(FieldConfig, RejectsDegenerateSizes) {
  auto c = small_config();
  c.d_s = 0;
  EXPECT_THROW(ConditionalField<float>{c}, ContractError);
  c = small_config();
  c.width = 0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(ConditionalField, OccupancyIgnoresAppearanceCodeAndDirection) {
  const ConditionalField<double> net(small_config());
  const auto theta = net.geometric_sphere_init(3);
  Rng rng(4);
  const auto xs = random_points(rng, 50, 1.0);
  Eigen::Matrix3Xd d1(3, 50), d2(3, 50);
  for (int i = 0; i < 50; ++i) {
    d1.col(i) = rng.unit_vector();
    d2.col(i) = rng.unit_vector();
  }
  auto codes = sample_latents(rng, 8, 6);
  auto other = codes;
  other.z_a = sample_latents(rng, 8, 6).z_a;
  ConditionalField<double>::Cache a, b, c;
  net.forward(theta, xs, d1, codes, a);
  net.forward(theta, xs, d1, other, b);
  net.forward(theta, xs, d2, codes, c);
  EXPECT_EQ(a.occupancy, b.occupancy);
  EXPECT_EQ(a.occupancy, c.occupancy);
  EXPECT_FALSE(a.rgb.isApprox(b.rgb));
  EXPECT_FALSE(a.rgb.isApprox(c.rgb));
  for (Eigen::Index i = 0; i < a.rgb.size(); ++i) EXPECT_TRUE(a.rgb(i) > 0.0 && a.rgb(i) < 1.0);
}

TEST(ConditionalField, SphereInitPlacesLevelSetNearRadius) {
  const ConditionalField<float> net(small_config());
  const auto theta = net.geometric_sphere_init(11);
  Rng rng(12);
  const SurfaceSearch search;
  for (int z = 0; z < 10; ++z) {
    const NeuralField<float> field(net, theta, sample_latents(rng, 8, 6));
    Eigen::Matrix3Xd probes(3, 2);
    probes.col(0).setZero();
    probes.col(1) = 1.5 * rng.unit_vector();
    const auto occ = field.occupancy(probes);
    EXPECT_GT(occ[0], 0.5);
    EXPECT_LT(occ[1], 0.5);
    // Rays leaving the origin cross the level set from above, so search inward.
    std::vector<Ray> rays;
    for (int r = 0; r < 10; ++r) {
      const Eigen::Vector3d u = rng.unit_vector();
      rays.push_back({u, -u, 0.0, 1.0});
    }
    const auto hits = find_surface_intersections(field, rays, search);
    for (std::size_t r = 0; r < rays.size(); ++r) {
      ASSERT_TRUE(hits[r].has_value());
      const double radius = 1.0 - *hits[r];
      EXPECT_GE(radius, 0.45);
      EXPECT_LE(radius, 0.55);
    }
  }
}

TEST(ConditionalField, DistinctSeedsGiveDistinctStores) {
  const ConditionalField<float> net(small_config());
  EXPECT_NE(net.geometric_sphere_init(1), net.geometric_sphere_init(2));
  EXPECT_EQ(net.geometric_sphere_init(1), net.geometric_sphere_init(1));
}

TEST(ConditionalField, LogitGradientMatchesDifferences) {
  const ConditionalField<double> net(small_config());
  auto theta = net.geometric_sphere_init(21);
  Rng rng(22);
  for (auto& v : theta.values()) v += 0.02 * rng.normal();
  const auto z_s = sample_latents(rng, 8, 6).z_s;
  const nn::Matrix<double> xs = random_points(rng, 20, 0.9);
  const auto g = net.logit_gradient(theta, xs, z_s);
  const double h = 1e-6;
  for (int a = 0; a < 3; ++a) {
    nn::Matrix<double> up = xs, dn = xs;
    up.row(a).array() += h;
    dn.row(a).array() -= h;
    const nn::Matrix<double> fd = (net.logits(theta, up, z_s) - net.logits(theta, dn, z_s)) / (2 * h);
    for (Eigen::Index i = 0; i < xs.cols(); ++i)
      EXPECT_NEAR(g(a, i), fd(0, i), 1e-5 * std::max(1.0, std::abs(fd(0, i))));
  }
}

TEST(ConditionalField, InputGradientsMatchDifferences) {
  const ConditionalField<double> net(small_config());
  auto theta = net.geometric_sphere_init(31);
  Rng rng(32);
  for (auto& v : theta.values()) v += 0.02 * rng.normal();
  auto codes = sample_latents(rng, 8, 6);
  const nn::Matrix<double> xs = random_points(rng, 6, 0.9);
  nn::Matrix<double> ds(3, 6);
  for (int i = 0; i < 6; ++i) ds.col(i) = rng.unit_vector();
  nn::Matrix<double> wl(1, 6), wc(3, 6);
  for (Eigen::Index i = 0; i < wl.size(); ++i) wl(i) = rng.normal();
  for (Eigen::Index i = 0; i < wc.size(); ++i) wc(i) = rng.normal();
  auto loss = [&](const LatentCodes& c) {
    ConditionalField<double>::Cache cache;
    net.forward(theta, xs, ds, c, cache);
    return (cache.logit.array() * wl.array()).sum() + (cache.rgb.array() * wc.array()).sum();
  };
  ConditionalField<double>::Cache cache;
  net.forward(theta, xs, ds, codes, cache);
  auto grad = theta.zeros_like();
  FieldInputGrads in;
  net.backward(theta, cache, wl, &wc, grad, &in);
  const double h = 1e-6;
  for (int k = 0; k < 8; ++k) {
    auto up = codes, dn = codes;
    up.z_s[k] += h;
    dn.z_s[k] -= h;
    EXPECT_NEAR(in.dz_s[k], (loss(up) - loss(dn)) / (2 * h), 1e-5);
  }
  for (int k = 0; k < 6; ++k) {
    auto up = codes, dn = codes;
    up.z_a[k] += h;
    dn.z_a[k] -= h;
    EXPECT_NEAR(in.dz_a[k], (loss(up) - loss(dn)) / (2 * h), 1e-5);
  }
}

TEST(NeuralField, DensityIsSoftplusOfLogitAndGradientIsChainRule) {
  const ConditionalField<double> net(small_config());
  const auto theta = net.geometric_sphere_init(41);
  Rng rng(42);
  const auto codes = sample_latents(rng, 8, 6);
  const NeuralField<double> occ(net, theta, codes);
  const NeuralField<double> den(net, theta, codes, FieldOutput::density);
  const Eigen::Matrix3Xd xs = random_points(rng, 30, 1.2);
  const auto logit = net.logits(theta, xs, codes.z_s);
  const auto o = occ.occupancy(xs), s = occ.density(xs);
  const auto e = den.evaluate(xs, Eigen::Matrix3Xd::Zero(3, 30).colwise() + Eigen::Vector3d::UnitX());
  const auto lg = net.logit_gradient(theta, xs, codes.z_s);
  const auto og = occ.occupancy_gradient(xs);
  for (int i = 0; i < 30; ++i) {
    EXPECT_NEAR(o[i], nn::sigmoid(logit(0, i)), 1e-15);
    EXPECT_NEAR(s[i], nn::log1pexp(logit(0, i)), 1e-15);
    EXPECT_NEAR(e.value[i], s[i], 1e-15);
    EXPECT_TRUE(og.col(i).isApprox(o[i] * (1 - o[i]) * lg.col(i), 1e-12));
  }
  auto bad = codes;
  bad.z_s.resize(3);
  EXPECT_THROW((NeuralField<double>(net, theta, bad)), ContractError);
}
