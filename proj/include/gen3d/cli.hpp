#pragma once

// The `3dgen` command line: config loading and subcommand dispatch.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gen3d/adversarial.hpp"
#include "gen3d/config.hpp"
#include "gen3d/data.hpp"
#include "gen3d/diffcore.hpp"
#include "gen3d/evaluation.hpp"
#include "gen3d/field.hpp"
#include "gen3d/gradcheck.hpp"
#include "gen3d/image.hpp"
#include "gen3d/meshing.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/surface.hpp"

namespace gen3d {

inline constexpr const char* kUsage =
    "usage: 3dgen <subcommand> [--config FILE] [--seed N] [--out DIR] [options]\n"
    "\n"
    "subcommands:\n"
    "  gen-data          render the toy dataset into --out\n"
    "  train             adversarial training (--iters N)\n"
    "  render-turntable  orbit one latent draw (--checkpoint --views M)\n"
    "  interpolate       latent sweep renders and meshes (--checkpoint --steps --freeze)\n"
    "  extract-mesh      marching cubes on latent draws (--checkpoint --resolution --level --count)\n"
    "  eval-fd           Frechet distance on proxy features (--checkpoint --n-samples)\n"
    "  grad-check        finite-difference checks of every loss term\n"
    "\n"
    "run '3dgen <subcommand> --help' for the options of one subcommand\n";

// ---------------------------------------------------------------------------
// Generation helpers shared by the subcommands

/// Surface-guided render of a full camera image, sampling like the final
/// training iterations.
template <class Real>
Image render_view(const ConditionalField<Real>& net, const ParameterStore<Real>& theta, const LatentCodes& codes,
                  const CameraPose& pose, const RunConfig& cfg, Rng& rng) {
  const auto tc = cfg.train();
  std::vector<Eigen::Vector2d> pixels;
  pixels.reserve(static_cast<std::size_t>(pose.width) * pose.height);
  for (int y = 0; y < pose.height; ++y)
    for (int x = 0; x < pose.width; ++x) pixels.emplace_back(x + 0.5, y + 0.5);
  const auto rays = generate_rays(pose, pixels, tc.sampler.scene);
  const NeuralField<Real> field(net, theta, codes,
                                tc.render.mode == AlphaMode::density ? FieldOutput::density : FieldOutput::occupancy);
  const NeuralField<Real> occupancy(net, theta, codes);
  const auto hits = find_surface_intersections(occupancy, rays, tc.sampler.search);
  const double delta = interval_width(tc.sampler.schedule, tc.iterations);
  std::vector<std::vector<double>> ts;
  ts.reserve(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r)
    ts.push_back(place_samples(rays[r], hits[r], delta, tc.sampler.samples_per_ray, &rng));
  const auto renders = render_rays(field, rays, ts, tc.render);
  Image img(pose.width, pose.height);
  for (std::size_t r = 0; r < renders.size(); ++r)
    for (int c = 0; c < 3; ++c) img.data[r * 3 + c] = static_cast<float>(renders[r].color[c]);
  return img;
}

enum class LevelField { occupancy, density };

/// Marching cubes on the occupancy (or softplus density) of one latent draw
/// over the scene cube.
template <class Real>
TriangleMesh extract_field_mesh(const ConditionalField<Real>& net, const ParameterStore<Real>& theta,
                                const LatentCodes& codes, int resolution, double level, LevelField which,
                                double scene_radius) {
  const NeuralField<Real> field(net, theta, codes,
                                which == LevelField::density ? FieldOutput::density : FieldOutput::occupancy);
  const auto bounds = cube_bounds(scene_radius);
  const std::array<int, 3> res{resolution, resolution, resolution};
  const ScalarGrid grid = which == LevelField::density
                              ? sample_grid([&](const Eigen::Matrix3Xd& xs) { return field.density(xs); }, res, bounds)
                              : sample_occupancy_grid(field, res, bounds);
  return marching_cubes(grid, level);
}

namespace detail {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config, "run config file (key = value)");
  sub->add_option("--seed", a.seed, "random seed; overrides the config");
  sub->add_option("--out", a.out, "output directory; overrides the config");
}

inline RunConfig load_config(const CommonArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : parse_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.out_dir = a.out;
  cfg.validate();
  return cfg;
}

inline std::filesystem::path prepare_out(const RunConfig& cfg) {
  const std::filesystem::path out = cfg.out_dir;
  std::filesystem::create_directories(out);
  std::ofstream echo(out / "config.txt");
  if (!echo) throw IoError("cannot write " + (out / "config.txt").string());
  echo << echo_config(cfg);
  return out;
}

inline std::filesystem::path default_checkpoint(const RunConfig& cfg, const std::string& given) {
  return given.empty() ? std::filesystem::path(cfg.out_dir) / "generator.ckpt" : std::filesystem::path(given);
}

/// Loads generator weights and checks them against the configured network.
inline ParameterStore<float> load_generator(const ConditionalField<float>& net, const std::filesystem::path& path) {
  auto theta = read_checkpoint(path);
  if (!theta.same_layout(net.make_store()))
    throw LoadError("checkpoint " + path.string() + " does not match the configured field architecture");
  return theta;
}

inline std::string indexed(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02d%s", stem, i, ext);
  return buf;
}

inline void write_bbox(std::ostream& os, const Eigen::AlignedBox3d& b) {
  os << std::setprecision(9);
  for (int i = 0; i < 3; ++i) os << ',' << b.min()[i];
  for (int i = 0; i < 3; ++i) os << ',' << b.max()[i];
}

// ---------------------------------------------------------------------------
// Subcommands

inline int run_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto dir = prepare_out(cfg);
  const auto m = generate_toy_dataset(cfg.toy(), dir);
  out << "wrote " << m.count() << " images to " << dir.string() << '\n';
  return 0;
}

inline int run_train(RunConfig cfg, std::optional<long> iters, std::ostream& out) {
  if (iters) {
    cfg.iterations = *iters;
    cfg.validate();
  }
  const Dataset data = load_dataset(cfg.data_dir);
  if (data.width() != cfg.image_width || data.height() != cfg.image_height)
    throw LoadError("dataset images are " + std::to_string(data.width()) + "x" + std::to_string(data.height()) +
                    " but camera.width/height are " + std::to_string(cfg.image_width) + "x" +
                    std::to_string(cfg.image_height));
  const auto dir = prepare_out(cfg);
  const PatchConfig pc = cfg.patch();
  RealPatchSource src{data.size(), [&data, pc](Rng& rng) { return sample_real_patch(data, rng, pc); }};
  const auto res = train(cfg.train(), src, dir, &out);
  out << "trained " << res.metrics.size() << " iterations; checkpoints in " << dir.string() << '\n';
  return 0;
}

inline int run_turntable(const RunConfig& cfg, const std::string& ckpt, int views, std::ostream& out) {
  require(views >= 1, "--views must be >= 1");
  const ConditionalField<float> net(cfg.field);
  const auto theta = load_generator(net, default_checkpoint(cfg, ckpt));
  const auto dir = prepare_out(cfg);
  Rng rng(cfg.seed);
  const auto codes = sample_latents(rng, cfg.field.d_s, cfg.field.d_a);
  const auto cam = cfg.camera();
  const double elevation = 0.5 * (cam.elevation_min + cam.elevation_max);
  for (int v = 0; v < views; ++v) {
    const double azimuth = 2.0 * std::numbers::pi * v / views;
    write_png(dir / indexed("turntable", v, ".png"), render_view(net, theta, codes, camera_at(azimuth, elevation, cam), cfg, rng));
  }
  out << "wrote " << views << " views to " << dir.string() << '\n';
  return 0;
}

inline int run_interpolate(const RunConfig& cfg, const std::string& ckpt, int steps, const std::string& freeze_name,
                           bool meshes, std::ostream& out) {
  const Freeze freeze = parse_freeze(freeze_name);
  const ConditionalField<float> net(cfg.field);
  const auto theta = load_generator(net, default_checkpoint(cfg, ckpt));
  const auto dir = prepare_out(cfg);
  Rng rng(cfg.seed);
  const auto a = sample_latents(rng, cfg.field.d_s, cfg.field.d_a);
  const auto b = sample_latents(rng, cfg.field.d_s, cfg.field.d_a);
  const auto codes = interpolate_codes(a, b, steps, freeze);
  const auto cam = cfg.camera();
  const auto pose = camera_at(0.25 * std::numbers::pi, 0.5 * (cam.elevation_min + cam.elevation_max), cam);

  std::ofstream table(dir / "interpolate.csv");
  table << "step,t,watertight,triangles,min_x,min_y,min_z,max_x,max_y,max_z\n";
  for (int i = 0; i < steps; ++i) {
    Rng view_rng(cfg.seed + 1);  // identical sample jitter at every step
    write_png(dir / indexed("interp", i, ".png"), render_view(net, theta, codes[static_cast<std::size_t>(i)], pose, cfg, view_rng));
    if (!meshes) continue;
    const auto mesh = extract_field_mesh(net, theta, codes[static_cast<std::size_t>(i)], cfg.mesh_resolution,
                                         cfg.mesh_level, LevelField::occupancy, cfg.scene_radius);
    export_mesh(mesh, dir / indexed("interp", i, ".obj"));
    const auto rep = mesh_diagnostics(mesh);
    table << i << ',' << static_cast<double>(i) / (steps - 1) << ',' << (rep.watertight ? 1 : 0) << ',' << rep.triangles;
    write_bbox(table, rep.bbox);
    table << '\n';
  }
  out << "wrote " << steps << " interpolation steps to " << dir.string() << '\n';
  return 0;
}

inline int run_extract_mesh(const RunConfig& cfg, const std::string& ckpt, std::optional<int> resolution,
                            std::optional<double> level, const std::string& field_name, int count,
                            const std::string& format, std::ostream& out) {
  require(field_name == "occupancy" || field_name == "density", "--field must be occupancy or density");
  require(format == "obj" || format == "ply", "--format must be obj or ply");
  require(count >= 1, "--count must be >= 1");
  const LevelField which = field_name == "density" ? LevelField::density : LevelField::occupancy;
  const int res = resolution.value_or(cfg.mesh_resolution);
  require(res >= 2, "--resolution must be >= 2");
  const double lv = level.value_or(which == LevelField::density ? 10.0 : cfg.mesh_level);
  if (which == LevelField::occupancy) require(lv > 0.0 && lv < 1.0, "occupancy level must lie in (0, 1)");
  else require(lv > 0.0, "density level must be positive");

  const ConditionalField<float> net(cfg.field);
  const auto theta = load_generator(net, default_checkpoint(cfg, ckpt));
  const auto dir = prepare_out(cfg);
  Rng rng(cfg.seed);
  std::ofstream table(dir / "meshes.csv");
  table << "index,file,watertight,euler,vertices,triangles,min_x,min_y,min_z,max_x,max_y,max_z\n";
  for (int i = 0; i < count; ++i) {
    const auto codes = sample_latents(rng, cfg.field.d_s, cfg.field.d_a);
    const auto mesh = extract_field_mesh(net, theta, codes, res, lv, which, cfg.scene_radius);
    const std::string name = indexed("mesh", i, format == "ply" ? ".ply" : ".obj");
    export_mesh(mesh, dir / name);
    const auto rep = mesh_diagnostics(mesh);
    table << i << ',' << name << ',' << (rep.watertight ? 1 : 0) << ',' << rep.euler_characteristic << ','
          << mesh.vertices.size() << ',' << rep.triangles;
    write_bbox(table, rep.bbox);
    table << '\n';
    out << name << ": " << rep.triangles << " triangles, " << (rep.watertight ? "watertight" : "open") << '\n';
  }
  return 0;
}

inline int run_eval_fd(const RunConfig& cfg, const std::string& ckpt, std::optional<int> n_samples, std::ostream& out) {
  const int n = n_samples.value_or(cfg.eval_samples);
  require(n >= 2, "--n-samples must be >= 2");
  const ConditionalField<float> net(cfg.field);
  const auto theta = load_generator(net, default_checkpoint(cfg, ckpt));
  const Dataset data = load_dataset(cfg.data_dir);
  const auto dir = prepare_out(cfg);
  const auto tc = cfg.train();
  Rng rng(cfg.seed);
  std::vector<Patch> real, fake;
  for (int i = 0; i < n; ++i) real.push_back(sample_real_patch(data, rng, tc.sampler.patch));
  for (int i = 0; i < n; ++i) {
    const auto s = draw_generator_sample(net, theta, tc.sampler, tc.iterations, rng);
    fake.push_back(render_generator_sample(net, theta, s, tc.sampler.patch.size, tc.render).patch);
  }
  const auto embed = downsample_embedder(cfg.embed_grid);
  const double fd = frechet_distance(feature_stats(embed_patches(real, embed)), feature_stats(embed_patches(fake, embed)));
  const std::string embedder = "gray" + std::to_string(cfg.embed_grid) + "x" + std::to_string(cfg.embed_grid);
  std::ofstream csv(dir / "fd.csv");
  csv << "metric,value,n_real,n_fake,embedder\n";
  char value[32];
  std::snprintf(value, sizeof value, "%.9g", fd);
  csv << "FD (proxy features)," << value << ',' << n << ',' << n << ',' << embedder << '\n';
  out << "FD (proxy features) = " << value << "  [" << n << " real, " << n << " fake, " << embedder
      << " embedder; not comparable to Inception FID]\n";
  return 0;
}

inline int run_grad_check(const RunConfig& cfg, std::ostream& out) {
  GradCheckSettings s;
  s.seed = cfg.seed;
  const auto results = run_grad_checks(s);
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(28) << r.name;
    if (!r.error.empty())
      out << "error: " << r.error;
    else
      out << "max rel err " << std::scientific << std::setprecision(3) << r.report.max_rel_error << std::defaultfloat
          << " over " << r.report.probes << " coords";
    out << "  (" << std::fixed << std::setprecision(2) << r.seconds << " s)" << std::defaultfloat << '\n';
  }
  return all ? 0 : 1;
}

}  // namespace detail

/// Entry point of the `3dgen` tool. Returns the process exit status.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> known{"gen-data",     "train",   "render-turntable", "interpolate",
                                              "extract-mesh", "eval-fd", "grad-check"};
  if (argc < 2) {
    err << kUsage;
    return 2;
  }
  const std::string first = argv[1];
  if (first == "-h" || first == "--help") {
    out << kUsage;
    return 0;
  }
  if (std::find(known.begin(), known.end(), first) == known.end()) {
    err << "unknown subcommand '" << first << "'\n" << kUsage;
    return 2;
  }

  CLI::App app{"3dgen"};
  app.require_subcommand(1);
  detail::CommonArgs common;

  auto* gen = app.add_subcommand("gen-data", "render the toy dataset");
  detail::add_common(gen, common);

  auto* tr = app.add_subcommand("train", "adversarial training");
  detail::add_common(tr, common);
  std::optional<long> iters;
  tr->add_option("--iters", iters, "iterations; overrides train.iterations");

  std::string ckpt;
  auto* tt = app.add_subcommand("render-turntable", "orbit one latent draw");
  detail::add_common(tt, common);
  tt->add_option("--checkpoint", ckpt, "generator checkpoint (default <out>/generator.ckpt)");
  int views = 8;
  tt->add_option("--views", views, "number of poses");

  auto* ip = app.add_subcommand("interpolate", "latent interpolation");
  detail::add_common(ip, common);
  ip->add_option("--checkpoint", ckpt, "generator checkpoint (default <out>/generator.ckpt)");
  int steps = 5;
  ip->add_option("--steps", steps, "interpolation steps (>= 2)");
  std::string freeze = "none";
  ip->add_option("--freeze", freeze, "code held fixed: shape, appearance or none");
  bool no_mesh = false;
  ip->add_flag("--no-mesh", no_mesh, "skip mesh extraction per step");

  auto* em = app.add_subcommand("extract-mesh", "marching cubes on latent draws");
  detail::add_common(em, common);
  em->add_option("--checkpoint", ckpt, "generator checkpoint (default <out>/generator.ckpt)");
  std::optional<int> resolution;
  em->add_option("--resolution", resolution, "grid points per axis (default mesh.resolution)");
  std::optional<double> level;
  em->add_option("--level", level, "iso level (default mesh.level, or 10 with --field density)");
  std::string field_name = "occupancy";
  em->add_option("--field", field_name, "occupancy or density (sigma level sets)");
  int count = 1;
  em->add_option("--count", count, "number of latent draws");
  std::string format = "obj";
  em->add_option("--format", format, "obj or ply");

  auto* fd = app.add_subcommand("eval-fd", "Frechet distance on proxy features");
  detail::add_common(fd, common);
  fd->add_option("--checkpoint", ckpt, "generator checkpoint (default <out>/generator.ckpt)");
  std::optional<int> n_samples;
  fd->add_option("--n-samples", n_samples, "patches per side (default eval.n_samples)");

  auto* gc = app.add_subcommand("grad-check", "finite-difference checks");
  detail::add_common(gc, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    const RunConfig cfg = detail::load_config(common);
    if (gen->parsed()) return detail::run_gen_data(cfg, out);
    if (tr->parsed()) return detail::run_train(cfg, iters, out);
    if (tt->parsed()) return detail::run_turntable(cfg, ckpt, views, out);
    if (ip->parsed()) return detail::run_interpolate(cfg, ckpt, steps, freeze, !no_mesh, out);
    if (em->parsed()) return detail::run_extract_mesh(cfg, ckpt, resolution, level, field_name, count, format, out);
    if (fd->parsed()) return detail::run_eval_fd(cfg, ckpt, n_samples, out);
    if (gc->parsed()) return detail::run_grad_check(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << kUsage;
  return 2;
}

}  // namespace gen3d
