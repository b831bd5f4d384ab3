#include <cmath>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "gen3d/data.hpp"
#include "test_util.hpp"

using namespace gen3d;

namespace {

bool is_background(const Image& img, int x, int y) {
  return img.at(x, y, 0) == 1.0f && img.at(x, y, 1) == 1.0f && img.at(x, y, 2) == 1.0f;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(ToyRender, SphereOnEquatorIsCenteredDiscOfProjectedRadius) {
  ToyObject sphere;
  sphere.shape = ToyShape::sphere;
  sphere.half_axes.setConstant(0.5);
  sphere.color.setZero();
  // Flat black on white: each pixel value is one minus its coverage.
  ToyShading flat;
  flat.ambient = 1.0;
  flat.diffuse = 0.0;
  flat.supersample = 8;
  const CameraConfig cfg;  // 64 x 64, radius 3
  for (double az : {0.0, 1.3, 4.0}) {
    const auto img = render_toy_image(sphere, camera_at(az, 0.0, cfg), flat);
    double area = 0.0, cx = 0.0, cy = 0.0;
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double cover = 1.0 - img.at(x, y, 0);
        area += cover;
        cx += cover * (x + 0.5);
        cy += cover * (y + 0.5);
      }
    EXPECT_NEAR(std::sqrt(area / std::numbers::pi), cfg.focal() * 0.5 / cfg.radius, 1.0);
    EXPECT_NEAR(cx / area, 0.5 * cfg.width, 0.1);
    EXPECT_NEAR(cy / area, 0.5 * cfg.height, 0.1);
    for (auto [x, y] : {std::pair{0, 0}, {63, 0}, {0, 63}, {63, 63}}) EXPECT_TRUE(is_background(img, x, y));
  }
}

TEST(ToyRender, IntersectionsMatchClosedForms) {
  ToyObject box;
  box.shape = ToyShape::box;
  box.half_axes = {0.2, 0.3, 0.4};
  const auto hb = intersect(box, {-2, 0, 0}, Eigen::Vector3d::UnitX());
  ASSERT_TRUE(hb.has_value());
  EXPECT_NEAR(hb->t, 1.8, 1e-12);
  EXPECT_TRUE(hb->normal.isApprox(-Eigen::Vector3d::UnitX()));
  EXPECT_FALSE(intersect(box, {-2, 0.35, 0}, Eigen::Vector3d::UnitX()));
  ToyObject ell;
  ell.shape = ToyShape::ellipsoid;
  ell.half_axes = {0.5, 0.25, 0.3};
  const auto he = intersect(ell, {0, 2, 0}, -Eigen::Vector3d::UnitY());
  ASSERT_TRUE(he.has_value());
  EXPECT_NEAR(he->t, 1.75, 1e-12);
}

TEST(ToyFamilies, ParseAndReject) {
  EXPECT_EQ(parse_families("sphere, box"), (std::vector<ToyShape>{ToyShape::sphere, ToyShape::box}));
  EXPECT_THROW(parse_families("sphere,cone"), ContractError);
  EXPECT_THROW(parse_families(""), ContractError);
}

class ToyDataset : public testutil::TempDirTest {
 protected:
  ToyDatasetConfig small(int count) const {
    ToyDatasetConfig c;
    c.count = count;
    c.camera.width = c.camera.height = 16;
    c.seed = 5;
    return c;
  }
};

TEST_F(ToyDataset, RegenerationIsBitIdentical) {
  generate_toy_dataset(small(1), dir() / "a");
  generate_toy_dataset(small(1), dir() / "b");
  EXPECT_EQ(slurp(dir() / "a" / "00000.png"), slurp(dir() / "b" / "00000.png"));
  EXPECT_EQ(slurp(dir() / "a" / kManifestName), slurp(dir() / "b" / kManifestName));
}

TEST_F(ToyDataset, ManifestRoundTrip) {
  const auto written = generate_toy_dataset(small(6), dir());
  const auto data = load_dataset(dir());
  EXPECT_EQ(data.size(), 6u);
  EXPECT_EQ(data.width(), 16);
  EXPECT_NEAR(data.manifest().intrinsics.focal, small(6).camera.focal(), 1e-12);
  for (std::size_t i = 0; i < 6; ++i) {
    ASSERT_TRUE(data.manifest().entries[i].pose.has_value());
    EXPECT_TRUE(data.manifest().entries[i].pose->isApprox(*written.entries[i].pose, 1e-15));
    EXPECT_NEAR(data.manifest().entries[i].pose->col(3).norm(), 3.0, 1e-9);
  }
}

TEST_F(ToyDataset, DeletedImageIsNamedInError) {
  generate_toy_dataset(small(3), dir());
  std::filesystem::remove(dir() / "00001.png");
  try {
    load_dataset(dir());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("00001.png"), std::string::npos);
  }
}

TEST_F(ToyDataset, EmptyOrMalformedManifestsAreRejected) {
  EXPECT_THROW(load_dataset(dir() / "nothing"), LoadError);
  {
    std::ofstream(dir() / kManifestName)
        << R"({"name":"x","intrinsics":{"focal":1,"principal":[8,8],"width":16,"height":16},"entries":[]})";
  }
  EXPECT_THROW(load_dataset(dir()), LoadError);
  { std::ofstream(dir() / kManifestName) << "{ not json"; }
  EXPECT_THROW(load_dataset(dir()), LoadError);
}

TEST_F(ToyDataset, SizeMismatchIsNamedInError) {
  generate_toy_dataset(small(2), dir());
  write_png(dir() / "00000.png", Image(8, 16));
  try {
    load_dataset(dir());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("00000.png"), std::string::npos);
  }
}

class RealPatches : public testutil::TempDirTest {
 protected:
  /// n constant images; image i has gray level 20 i / 255.
  Dataset constant_dataset(int n) {
    DatasetManifest m;
    m.root = dir();
    m.intrinsics = {10.0, {8, 8}, 16, 16};
    for (int i = 0; i < n; ++i) {
      const std::string name = "img" + std::to_string(i) + ".png";
      write_png(dir() / name, Image(16, 16, static_cast<float>(20 * i) / 255.0f));
      m.entries.push_back({name, std::nullopt});
    }
    write_manifest(m);
    return load_dataset(dir());
  }
};

TEST_F(RealPatches, ConstantImageGivesConstantPatch) {
  const auto data = constant_dataset(1);
  Rng rng(1);
  const auto p = sample_real_patch(data, rng, PatchConfig{8, 0.5, 1.0});
  for (double v : p.pixels) EXPECT_EQ(v, 0.0);
}

TEST_F(RealPatches, FixedSeedReplays) {
  generate_toy_dataset(ToyDatasetConfig{.count = 4, .camera = {3.0, 0.0, 0.5, 0.5, 32, 32}}, dir() / "toy");
  const auto data = load_dataset(dir() / "toy");
  Rng a(2), b(2);
  for (int i = 0; i < 10; ++i)
    EXPECT_EQ(sample_real_patch(data, a, PatchConfig{8, 0.25, 1.0}), sample_real_patch(data, b, PatchConfig{8, 0.25, 1.0}));
}

TEST_F(RealPatches, ImagesAreChosenUniformly) {
  const auto data = constant_dataset(10);
  Rng rng(3);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = sample_real_patch(data, rng, PatchConfig{4, 0.25, 1.0});
    const int which = static_cast<int>(std::lround(p.pixels[0] * 255.0 / 20.0));
    ASSERT_TRUE(which >= 0 && which < 10);
    ++counts[static_cast<std::size_t>(which)];
  }
  for (int c : counts) EXPECT_NEAR(c, 100, 40);
}
