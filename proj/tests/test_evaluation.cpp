#include <cmath>

#include <gtest/gtest.h>

#include "gen3d/evaluation.hpp"

using namespace gen3d;

namespace {

FeatureStats stats_of(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  FeatureStats s;
  s.mean = std::move(mean);
  s.covariance = std::move(cov);
  s.count = 100;
  return s;
}

}  // namespace

TEST(Embedder, ConstantPatchGivesConstantVector) {
  Patch p(8, 0.3);
  const auto e = downsample_embedder(4)(p);
  ASSERT_EQ(e.size(), 16);
  for (Eigen::Index i = 0; i < e.size(); ++i) EXPECT_NEAR(e[i], 0.3, 1e-15);
}

TEST(Embedder, IdenticalPatchesGiveIdenticalEmbeddings) {
  Rng rng(1);
  Patch p(6);
  for (auto& v : p.pixels) v = rng.uniform();
  const auto embed = downsample_embedder(4);
  EXPECT_EQ(embed(p), embed(Patch(p)));
}

TEST(Embedder, CheckerboardPoolsToHalf) {
  Patch p(2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) p.at(x, y, c) = (x + y) % 2;
  EXPECT_DOUBLE_EQ(downsample_embedder(1)(p)[0], 0.5);
}

TEST(Embedder, NonDividingGridIsAreaWeighted) {
  // 3 pixels onto 2 cells: cell 0 covers pixel 0 and half of pixel 1.
  Patch p(3, 0.0);
  for (int y = 0; y < 3; ++y)
    for (int c = 0; c < 3; ++c) p.at(1, y, c) = 1.0;
  const auto e = downsample_embedder(2)(p);
  EXPECT_NEAR(e[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(e[1], 1.0 / 3.0, 1e-15);
  EXPECT_THROW(downsample_embedder(0), ContractError);
}

TEST(Frechet, IdenticalStatsGiveZero) {
  Rng rng(2);
  Eigen::MatrixXd a(4, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.normal();
  const auto s = stats_of(Eigen::VectorXd::Ones(4), a * a.transpose());
  EXPECT_NEAR(frechet_distance(s, s), 0.0, 1e-9);
}

TEST(Frechet, IdentityCovariancesLeaveMeanTerm) {
  Eigen::VectorXd m(3);
  m << 1.0, -2.0, 0.5;
  const auto a = stats_of(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  const auto b = stats_of(m, Eigen::MatrixXd::Identity(3, 3));
  EXPECT_NEAR(frechet_distance(a, b), m.squaredNorm(), 1e-9);
}

TEST(Frechet, ScalarClosedForm) {
  const auto a = stats_of(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0));
  const auto b = stats_of(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Constant(1, 1, 4.0));
  EXPECT_NEAR(frechet_distance(a, b), 2.0, 1e-9);
  EXPECT_NEAR(frechet_distance(b, a), 2.0, 1e-9);
}

TEST(Frechet, DiagonalCovariancesMatchPerAxisSum) {
  Eigen::VectorXd da(3), db(3);
  da << 1.0, 0.25, 9.0;
  db << 4.0, 1.0, 1.0;
  const auto a = stats_of(Eigen::VectorXd::Zero(3), da.asDiagonal().toDenseMatrix());
  const auto b = stats_of(Eigen::VectorXd::Zero(3), db.asDiagonal().toDenseMatrix());
  double want = 0.0;
  for (int i = 0; i < 3; ++i) want += std::pow(std::sqrt(da[i]) - std::sqrt(db[i]), 2);
  EXPECT_NEAR(frechet_distance(a, b), want, 1e-9);
}

TEST(Frechet, EmpiricalGaussianConverges) {
  Rng rng(3);
  Eigen::Matrix2d la, lb;
  la << 1.0, 0.0, 0.6, 0.8;
  lb << 1.5, 0.0, -0.3, 0.5;
  const Eigen::Vector2d ma(0.0, 0.0), mb(1.0, -0.5);
  std::vector<Eigen::VectorXd> xa, xb;
  for (int i = 0; i < 10000; ++i) {
    xa.push_back(ma + la * Eigen::Vector2d(rng.normal(), rng.normal()));
    xb.push_back(mb + lb * Eigen::Vector2d(rng.normal(), rng.normal()));
  }
  const auto exact = frechet_distance(stats_of(ma, la * la.transpose()), stats_of(mb, lb * lb.transpose()));
  const auto empirical = frechet_distance(feature_stats(xa), feature_stats(xb));
  EXPECT_NEAR(empirical, exact, 0.05 * exact);
}

TEST(Frechet, RejectsBadInputs) {
  const auto a = stats_of(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto b = stats_of(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  EXPECT_THROW(frechet_distance(a, b), ContractError);
  const auto neg = stats_of(Eigen::VectorXd::Zero(2), -Eigen::MatrixXd::Identity(2, 2));
  EXPECT_THROW(frechet_distance(a, neg), EvaluationError);
  EXPECT_THROW(feature_stats({Eigen::VectorXd::Zero(2)}), ContractError);
}

TEST(FeatureStats, UnbiasedCovariance) {
  const std::vector<Eigen::VectorXd> xs{Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 0), Eigen::Vector2d(1, 3)};
  const auto s = feature_stats(xs);
  EXPECT_TRUE(s.mean.isApprox(Eigen::Vector2d(1, 1)));
  EXPECT_NEAR(s.covariance(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s.covariance(1, 1), 3.0, 1e-15);
  EXPECT_NEAR(s.covariance(0, 1), 0.0, 1e-15);
}

TEST(Interpolation, EndpointsMidpointAndDegenerate) {
  Rng rng(4);
  const auto a = sample_latents(rng, 3, 2), b = sample_latents(rng, 3, 2);
  const auto two = interpolate_codes(a, b, 2);
  EXPECT_EQ(two[0].z_s, a.z_s);
  EXPECT_EQ(two[1].z_a, b.z_a);
  const auto three = interpolate_codes(a, b, 3);
  EXPECT_TRUE(three[1].z_s.isApprox(0.5 * (a.z_s + b.z_s), 1e-15));
  for (const auto& c : interpolate_codes(a, a, 5)) {
    EXPECT_EQ(c.z_s, a.z_s);
    EXPECT_EQ(c.z_a, a.z_a);
  }
  EXPECT_THROW(interpolate_codes(a, b, 1), ContractError);
}

TEST(Interpolation, FrozenCodeStaysAtStart) {
  Rng rng(5);
  const auto a = sample_latents(rng, 3, 2), b = sample_latents(rng, 3, 2);
  for (const auto& c : interpolate_codes(a, b, 4, Freeze::shape)) EXPECT_EQ(c.z_s, a.z_s);
  const auto app = interpolate_codes(a, b, 4, Freeze::appearance);
  for (const auto& c : app) EXPECT_EQ(c.z_a, a.z_a);
  EXPECT_EQ(app.back().z_s, b.z_s);
  EXPECT_EQ(parse_freeze("shape"), Freeze::shape);
  EXPECT_THROW(parse_freeze("both"), ContractError);
}
