#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gen3d/cli.hpp"
#include "test_util.hpp"

using namespace gen3d;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "3dgen");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

ParseError parse_error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no ParseError for:\n" << text;
  return ParseError("", 0, "");
}

}  // namespace

TEST(Config, EmptyTextGivesValidDefaults) {
  const auto cfg = parse_config_text("# nothing\n\n   \n");
  EXPECT_EQ(cfg, RunConfig{});
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.patch().scale_min, 0.5);
  EXPECT_EQ(cfg.discriminator().channels, (std::vector<int>{64, 128, 256, 512, 512}));
}

TEST(Config, ValuesAndCommentsAreParsed) {
  const auto cfg = parse_config_text(
      "seed = 7  # trailing comment\n"
      "train.nonsat_flip = true\n"
      "render.background = 0, 0.5, 1\n"
      "disc.channels = 4, 8\n"
      "train.lr_g = 5e-4\n");
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_TRUE(cfg.nonsat_flip);
  EXPECT_EQ(cfg.background, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(cfg.disc_channels, (std::vector<int>{4, 8}));
  EXPECT_EQ(cfg.lr_g, 5e-4);
}

TEST(Config, MisspelledKeyNamesKeyAndLine) {
  const auto e = parse_error_of("seed = 1\n\ntrain.lamda = 3\n");
  EXPECT_EQ(e.key(), "train.lamda");
  EXPECT_EQ(e.line(), 3);
  EXPECT_NE(std::string(e.what()).find("train.lamda"), std::string::npos);
}

TEST(Config, DuplicatesAndBadValuesAreRejected) {
  const auto dup = parse_error_of("seed = 1\nseed = 2\n");
  EXPECT_EQ(dup.key(), "seed");
  EXPECT_EQ(dup.line(), 2);
  EXPECT_EQ(parse_error_of("train.batch = 2.5\n").key(), "train.batch");
  EXPECT_EQ(parse_error_of("train.lr_g = nan\n").key(), "train.lr_g");
  EXPECT_EQ(parse_error_of("render.background = 1, 1\n").key(), "render.background");
  EXPECT_EQ(parse_error_of("train.nonsat_flip = maybe\n").key(), "train.nonsat_flip");
  EXPECT_EQ(parse_error_of("seed = -1\n").key(), "seed");
  EXPECT_EQ(parse_error_of("just words\n").line(), 1);
}

TEST(Config, ValidateRejectsInconsistentSettings) {
  EXPECT_THROW(parse_config_text("patch.size = 128\n").validate(), ContractError);
  EXPECT_THROW(parse_config_text("render.mode = volume\n").validate(), ContractError);
  EXPECT_THROW(parse_config_text("camera.radius = 0.5\n").validate(), ContractError);
  EXPECT_THROW(parse_config_text("train.optimizer = rmsprop\n").validate(), ContractError);
}

TEST(Config, EchoRoundTrips) {
  auto cfg = parse_config_text("seed = 3\ntrain.lr_d = 0.000123456789\ndisc.channels = 3, 5\nfield.init_radius = 0.3\n");
  EXPECT_EQ(parse_config_text(echo_config(cfg)), cfg);
  EXPECT_EQ(parse_config_text(echo_config(RunConfig{})), RunConfig{});
  const auto echoed = echo_config(cfg);
  for (const auto& k : config_key_names()) EXPECT_NE(echoed.find("\n" + k + " = "), std::string::npos) << k;
}

TEST(Config, ScheduleDefaultsFollowSceneAndIterations) {
  const auto s = parse_config_text("scene.radius = 1.5\ntrain.iterations = 1000\n").schedule();
  EXPECT_DOUBLE_EQ(s.delta_max, 3.0);
  EXPECT_DOUBLE_EQ(s.delta_min, 0.15);
  EXPECT_NEAR(interval_width(s, 800), s.delta_min, 1e-9);
  EXPECT_GT(interval_width(s, 799), s.delta_min);
}

TEST(Dispatch, UsageAndExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  const auto help = run({"-h"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("grad-check"), std::string::npos);
  const auto unknown = run({"frobnicate"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("frobnicate"), std::string::npos);
  EXPECT_EQ(run({"train", "--bogus"}).code, 2);
  EXPECT_EQ(run({"extract-mesh", "--help"}).code, 0);
}

TEST(Dispatch, RuntimeErrorsExitOne) {
  const auto missing = run({"train", "--config", "/nonexistent/x.cfg"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  EXPECT_EQ(run({"train", "--out", "/nonexistent/out", "--iters", "-3"}).code, 1);
}

class CliPipeline : public testutil::TempDirTest {};

TEST_F(CliPipeline, TinyRunProducesEveryArtifact) {
  const auto cfg = dir() / "tiny.cfg";
  std::ofstream(cfg) << "seed = 4\n"
                        "data.dir = "
                     << (dir() / "data").string()
                     << "\n"
                        "output.dir = "
                     << (dir() / "run").string()
                     << "\n"
                        "data.count = 4\n"
                        "camera.width = 16\ncamera.height = 16\npatch.size = 8\n"
                        "field.d_s = 2\nfield.d_a = 2\nfield.width = 8\nfield.depth = 2\nfield.color_width = 8\n"
                        "field.freq_x = 2\nfield.freq_d = 1\n"
                        "render.samples = 4\nsurface.coarse_n = 8\nsurface.max_points = 8\n"
                        "disc.channels = 4, 6, 8\n"
                        "train.batch = 2\ntrain.iterations = 2\ntrain.checkpoint_every = 1\n"
                        "mesh.resolution = 12\neval.n_samples = 4\neval.embed_grid = 2\n";
  const std::string c = cfg.string();
  const auto gen = run({"gen-data", "--config", c, "--out", (dir() / "data").string()});
  ASSERT_EQ(gen.code, 0) << gen.err;
  EXPECT_TRUE(std::filesystem::exists(dir() / "data" / kManifestName));

  const auto tr = run({"train", "--config", c});
  ASSERT_EQ(tr.code, 0) << tr.err;
  for (const char* f : {"generator.ckpt", "metrics.csv", "config.txt"})
    EXPECT_TRUE(std::filesystem::exists(dir() / "run" / f)) << f;
  EXPECT_EQ(parse_config(dir() / "run" / "config.txt"), parse_config(cfg));

  const auto em = run({"extract-mesh", "--config", c, "--count", "2", "--format", "ply"});
  ASSERT_EQ(em.code, 0) << em.err;
  EXPECT_TRUE(std::filesystem::exists(dir() / "run" / "mesh_01.ply"));
  EXPECT_TRUE(std::filesystem::exists(dir() / "run" / "meshes.csv"));

  const auto ip = run({"interpolate", "--config", c, "--steps", "2", "--freeze", "appearance"});
  ASSERT_EQ(ip.code, 0) << ip.err;
  EXPECT_TRUE(std::filesystem::exists(dir() / "run" / "interp_01.png"));
  EXPECT_TRUE(std::filesystem::exists(dir() / "run" / "interp_01.obj"));

  const auto tt = run({"render-turntable", "--config", c, "--views", "2"});
  ASSERT_EQ(tt.code, 0) << tt.err;
  const auto view = read_png(dir() / "run" / "turntable_01.png");
  EXPECT_EQ(view.width, 16);

  const auto fd = run({"eval-fd", "--config", c});
  ASSERT_EQ(fd.code, 0) << fd.err;
  EXPECT_NE(fd.out.find("FD (proxy features)"), std::string::npos);

  EXPECT_EQ(run({"extract-mesh", "--config", c, "--field", "sdf"}).code, 1);
  EXPECT_EQ(run({"extract-mesh", "--config", c, "--checkpoint", (dir() / "none.ckpt").string()}).code, 1);
}
