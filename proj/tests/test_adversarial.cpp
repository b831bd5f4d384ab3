#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "gen3d/adversarial.hpp"
#include "test_util.hpp"

using namespace gen3d;

namespace {

std::vector<Patch> random_patches(Rng& rng, int n, int k) {
  std::vector<Patch> out;
  for (int b = 0; b < n; ++b) {
    Patch p(k);
    for (auto& v : p.pixels) v = rng.uniform();
    out.push_back(std::move(p));
  }
  return out;
}

DiscriminatorConfig tiny_disc() {
  DiscriminatorConfig c;
  c.patch_size = 8;
  c.channels = {6, 8, 8};
  return c;
}

template <class Real>
void jitter(ParameterStore<Real>& s, Rng& rng, double scale) {
  for (auto& v : s.values()) v += static_cast<Real>(scale * rng.normal());
}

FieldConfig tiny_field() {
  FieldConfig c;
  c.d_s = 4;
  c.d_a = 3;
  c.width = 16;
  c.depth = 2;
  c.color_width = 8;
  c.freq_x = 3;
  c.freq_d = 2;
  return c;
}

SamplerConfig tiny_sampler(int k) {
  SamplerConfig s;
  s.camera.width = s.camera.height = 16;
  s.patch = {k, 0.5, 1.0};
  s.samples_per_ray = 6;
  s.schedule = {2.0, 0.1, 1e-2, 0};
  s.search.coarse_n = 16;
  s.smooth_max_points = 16;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss function

TEST(NonSaturating, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(f_nonsat(0.0), -std::log(2.0));
  EXPECT_NEAR(f_nonsat(1.0), -0.313262, 1e-6);
  EXPECT_NEAR(f_nonsat(2.0), -0.126928, 1e-6);
  EXPECT_LT(f_nonsat(40.0), 0.0);
  EXPECT_GT(f_nonsat(40.0), -1e-17);
  EXPECT_NEAR(f_nonsat(-800.0), -800.0, 1e-9);
  EXPECT_NEAR(f_nonsat_d1(0.0), 0.5, 1e-15);
}

TEST(AdversarialLosses, ZeroLogitsAndHandPickedBatch) {
  EXPECT_NEAR(adversarial_losses({0, 0}, {0, 0, 0}).l_adv, -2.0 * std::log(2.0), 1e-15);
  const auto l = adversarial_losses({-1.0}, {2.0});
  EXPECT_NEAR(l.l_adv, -0.313262 - 0.126928, 1e-6);
  EXPECT_NEAR(l.g_loss, f_nonsat(2.0), 1e-15);
  EXPECT_NEAR(adversarial_losses({-1.0}, {2.0}, true).g_loss, -f_nonsat(-2.0), 1e-15);
  EXPECT_THROW(adversarial_losses({}, {1.0}), ContractError);
}

TEST(AdversarialLosses, SupremumApproachedWhenDiscriminatorIsPerfect) {
  const auto l = adversarial_losses({-60.0, -80.0}, {70.0});
  EXPECT_LT(l.l_adv, 0.0);
  EXPECT_GT(l.l_adv, -1e-20);
}

TEST(AdversarialLosses, GeneratorLogitGradientMatchesDifferences) {
  const double h = 1e-6;
  for (bool flip : {false, true})
    for (double x : {-3.0, -0.2, 0.0, 1.5}) {
      const double fd =
          (adversarial_losses({0.0}, {x + h}, flip).g_loss - adversarial_losses({0.0}, {x - h}, flip).g_loss) / (2 * h);
      EXPECT_NEAR(generator_logit_gradient(x, 1, flip), fd, 1e-8);
    }
}

// ---------------------------------------------------------------------------
// Discriminator

TEST(Discriminator, DefaultStagesReduceToOnePixel) {
  EXPECT_EQ(default_channels(32), (std::vector<int>{64, 128, 256, 512, 512}));
  EXPECT_EQ(default_channels(4, 16), (std::vector<int>{16, 32}));
  DiscriminatorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.channels.pop_back();
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_THROW(default_channels(24), ContractError);
}

TEST(Discriminator, ZeroOutputLayerGivesZeroLogits) {
  const ConvDiscriminator<float> disc(tiny_disc());
  const auto phi = disc.init(1);
  Rng rng(2);
  for (double v : disc.logits(phi, random_patches(rng, 5, 8))) EXPECT_EQ(v, 0.0);
  EXPECT_NE(disc.init(1), disc.init(2));
}

TEST(Discriminator, RejectsMismatchedPatches) {
  const ConvDiscriminator<float> disc(tiny_disc());
  const auto phi = disc.init(1);
  Rng rng(3);
  EXPECT_THROW(disc.logits(phi, random_patches(rng, 1, 4)), ContractError);
  EXPECT_THROW(disc.logits(phi, {}), ContractError);
}

TEST(Discriminator, TinyInputChangeGivesTinyLogitChange) {
  const ConvDiscriminator<double> disc(tiny_disc());
  auto phi = disc.init(4);
  Rng rng(5);
  jitter(phi, rng, 0.1);
  auto a = random_patches(rng, 1, 8);
  auto b = a;
  for (auto& v : b[0].pixels) v += 1e-12;
  EXPECT_NEAR(disc.logits(phi, a)[0], disc.logits(phi, b)[0], 1e-6);
}

TEST(Discriminator, InputGradientMatchesDifferences) {
  const ConvDiscriminator<double> disc(tiny_disc());
  auto phi = disc.init(6);
  Rng rng(7);
  jitter(phi, rng, 0.1);
  auto patches = random_patches(rng, 2, 8);
  std::vector<std::vector<double>> dx;
  disc.backward(phi, patches, {1.0, -0.5}, nullptr, &dx);
  const double h = 1e-6;
  for (int b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < patches[0].pixels.size(); i += 7) {
      auto up = patches, dn = patches;
      up[b].pixels[i] += h;
      dn[b].pixels[i] -= h;
      const double w = b == 0 ? 1.0 : -0.5;
      const double fd = w * (disc.logits(phi, up)[b] - disc.logits(phi, dn)[b]) / (2 * h);
      EXPECT_NEAR(dx[b][i], fd, 1e-7);
    }
}

TEST(R1, MatchesSquaredInputGradient) {
  const ConvDiscriminator<double> disc(tiny_disc());
  auto phi = disc.init(8);
  Rng rng(9);
  jitter(phi, rng, 0.1);
  const auto patches = random_patches(rng, 3, 8);
  std::vector<std::vector<double>> dx;
  disc.backward(phi, patches, {1.0, 1.0, 1.0}, nullptr, &dx);
  double want = 0.0;
  for (const auto& g : dx)
    for (double v : g) want += v * v;
  EXPECT_NEAR(r1_penalty(disc, phi, patches).loss_value, want / 3.0, 1e-10);
}

TEST(R1, LinearDiscriminatorGivesWeightNormSquared) {
  const LinearDiscriminator<double> disc(4);
  auto phi = disc.init(10);
  Rng rng(11);
  double w2 = 0.0;
  for (Eigen::Index i = 0; i < disc.weight(phi).size(); ++i) w2 += disc.weight(phi)(i) * disc.weight(phi)(i);
  for (int n : {1, 5}) EXPECT_NEAR(r1_penalty(disc, phi, random_patches(rng, n, 4)).loss_value, w2, 1e-12);
  auto zero = phi.zeros_like();
  EXPECT_EQ(r1_penalty(disc, zero, random_patches(rng, 2, 4)).loss_value, 0.0);
}

TEST(R1, ConstantDiscriminatorGivesZero) {
  const ConvDiscriminator<double> disc(tiny_disc());
  auto phi = disc.init(12);
  // Only the output bias is nonzero: D is constant in its input.
  for (auto& v : phi.values()) v = 0.0;
  phi.segment("disc.out.bias")[0] = 0.7;
  Rng rng(13);
  const auto patches = random_patches(rng, 2, 8);
  EXPECT_EQ(r1_penalty(disc, phi, patches).loss_value, 0.0);
  EXPECT_NEAR(disc.logits(phi, patches)[1], 0.7, 1e-15);
}

// ---------------------------------------------------------------------------
// Steps

TEST(DiscriminatorStep, SmallAscentStepDoesNotDecreaseLoss) {
  const ConvDiscriminator<double> disc(tiny_disc());
  auto phi = disc.init(14);
  Rng rng(15);
  jitter(phi, rng, 0.1);
  const auto real = random_patches(rng, 4, 8), fake = random_patches(rng, 4, 8);
  DiscriminatorStats before, after;
  const auto next = discriminator_step(disc, phi, real, fake, 0.0, 1e-3, &before);
  discriminator_objective(disc, next, real, fake, 0.0, &after);
  EXPECT_GE(after.l_adv, before.l_adv);
  EXPECT_EQ(discriminator_step(disc, phi, real, fake, 10.0, 0.0), phi);
}

TEST(DiscriminatorStep, LargePenaltyShrinksLinearWeights) {
  const LinearDiscriminator<double> disc(4);
  const auto phi = disc.init(16);
  Rng rng(17);
  const auto real = random_patches(rng, 4, 4), fake = random_patches(rng, 4, 4);
  const auto next = discriminator_step(disc, phi, real, fake, 1e4, 1e-6);
  EXPECT_LT(disc.weight(next).norm(), disc.weight(phi).norm());
  EXPECT_THROW(discriminator_step(disc, phi, real, {}, 1.0, 1e-3), ContractError);
}

class GeneratorStep : public ::testing::Test {
 protected:
  GeneratorStep() : net(tiny_field()), disc(tiny_disc()) {
    Rng rng(18);
    theta = net.geometric_sphere_init(rng.next_u64());
    phi = disc.init(rng.next_u64());
    jitter(phi, rng, 0.1);
    for (int b = 0; b < 2; ++b) samples.push_back(draw_generator_sample(net, theta, tiny_sampler(8), 0, rng));
  }
  ConditionalField<double> net;
  ConvDiscriminator<double> disc;
  ParameterStore<double> theta, phi;
  std::vector<GeneratorSample> samples;
};

TEST_F(GeneratorStep, ZeroRateLeavesThetaUnchanged) {
  EXPECT_EQ(generator_step(net, theta, disc, phi, samples, 0.01, 0.0, RenderOptions{}), theta);
}

TEST_F(GeneratorStep, SmallDescentStepDoesNotIncreaseLoss) {
  GeneratorStats before, after;
  const auto next = generator_step(net, theta, disc, phi, samples, 0.0, 1e-4, RenderOptions{}, false, &before);
  generator_objective(net, next, disc, phi, samples, 0.0, RenderOptions{}, false, nullptr, &after);
  EXPECT_LE(after.adv, before.adv);
  EXPECT_LT(after.adv, before.adv);
}

TEST_F(GeneratorStep, SamplesHitTheInitialSphere) {
  for (const auto& s : samples) {
    EXPECT_GT(s.hits, 0u);
    EXPECT_EQ(s.eps.size(), s.surface.size());
    for (const auto& x : s.surface) EXPECT_NEAR(x.norm(), 0.5, 0.05);
  }
}

// ---------------------------------------------------------------------------
// Training loop

class Training : public testutil::TempDirTest {
 protected:
  static TrainConfig config(long iterations) {
    TrainConfig c;
    c.field = tiny_field();
    c.disc.patch_size = 4;
    c.disc.channels = {4, 6};
    c.sampler = tiny_sampler(4);
    c.batch = 2;
    c.iterations = iterations;
    c.checkpoint_every = 2;
    c.lr_g = c.lr_d = 1e-3;
    c.seed = 3;
    return c;
  }

  static RealPatchSource source() {
    return {10, [](Rng& rng) {
              Patch p(4, 1.0);
              const double shade = rng.uniform();
              for (int y = 1; y < 3; ++y)
                for (int x = 1; x < 3; ++x)
                  for (int c = 0; c < 3; ++c) p.at(x, y, c) = shade;
              return p;
            }};
  }
};

TEST_F(Training, ZeroIterationsWritesSphereInitCheckpoint) {
  train(config(0), source(), dir());
  const auto theta = read_checkpoint(dir() / "checkpoints" / "generator_000000.ckpt");
  EXPECT_EQ(slurp(dir() / "metrics.csv"), std::string(kMetricsHeader) + "\n");
  const ConditionalField<float> net(tiny_field());
  ASSERT_TRUE(theta.same_layout(net.make_store()));
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const NeuralField<float> field(net, theta, sample_latents(rng, 4, 3));
    Eigen::Matrix3Xd p(3, 2);
    p.col(0).setZero();
    p.col(1) = 1.5 * rng.unit_vector();
    const auto o = field.occupancy(p);
    EXPECT_GT(o[0], 0.5);
    EXPECT_LT(o[1], 0.5);
  }
}

TEST_F(Training, SameSeedGivesIdenticalMetricsLog) {
  const auto a = train(config(4), source(), dir() / "a");
  train(config(4), source(), dir() / "b");
  const auto log_a = slurp(dir() / "a" / "metrics.csv");
  EXPECT_EQ(log_a, slurp(dir() / "b" / "metrics.csv"));
  EXPECT_EQ(std::count(log_a.begin(), log_a.end(), '\n'), 5);
  EXPECT_EQ(a.theta, read_checkpoint(dir() / "b" / "generator.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir() / "a" / "checkpoints" / "discriminator_000004.ckpt"));
  for (const auto& m : a.metrics) {
    EXPECT_TRUE(std::isfinite(m.loss_d) && std::isfinite(m.loss_g) && std::isfinite(m.r1) && std::isfinite(m.smooth));
  }
  auto other = config(4);
  other.seed = 4;
  train(other, source(), dir() / "c");
  EXPECT_NE(log_a, slurp(dir() / "c" / "metrics.csv"));
}

TEST_F(Training, EmptyDatasetIsRejected) {
  EXPECT_THROW(train(config(1), RealPatchSource{}, dir()), ContractError);
  auto bad = config(1);
  bad.disc.patch_size = 8;
  bad.disc.channels = {4, 4, 4};
  EXPECT_THROW(train(bad, source(), dir()), ContractError);
}

TEST_F(Training, NonFiniteLossAbortsWithDiagnostics) {
  auto c = config(3);
  RealPatchSource poisoned{1, [](Rng&) { return Patch(4, std::numeric_limits<double>::quiet_NaN()); }};
  EXPECT_THROW(train(c, poisoned, dir()), EvaluationError);
  EXPECT_NE(slurp(dir() / "diagnostics.txt").find("iteration 0"), std::string::npos);
}
