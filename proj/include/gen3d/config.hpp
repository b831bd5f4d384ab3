#pragma once

// Run configuration: one flat `key = value` file covering every subsystem.
//
//   # comment
//   field.width = 128
//   camera.fov_deg = 30
//   render.background = 1, 1, 1
//
// Unknown keys, repeated keys and malformed values are errors. Absent keys
// keep their defaults. echo_config writes every key, so
// parse(echo(c)) == c.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gen3d/adversarial.hpp"
#include "gen3d/camera.hpp"
#include "gen3d/data.hpp"
#include "gen3d/discriminator.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/field.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/surface.hpp"

namespace gen3d {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "out";

  // Toy dataset
  std::string families = "sphere,ellipsoid";
  int data_count = 1000;
  double data_size_min = 0.35;
  double data_size_max = 0.6;

  FieldConfig field;

  double camera_radius = 3.0;
  double elevation_min_deg = 0.0;
  double elevation_max_deg = 30.0;
  double fov_deg = 30.0;
  int image_width = 64;
  int image_height = 64;
  double scene_radius = 1.0;

  int patch_size = 32;
  double patch_scale_min = -1.0;  // negative: K / image width
  double patch_scale_max = 1.0;

  int samples_per_ray = 64;
  std::vector<double> background{1.0, 1.0, 1.0};
  std::string render_mode = "occupancy";

  int coarse_n = 64;
  int secant_iters = 8;
  double surface_tolerance = 1e-4;
  double eps_scale = 0.01;
  int smooth_max_points = 1024;

  // Negative values: derived from the scene and the iteration count.
  double delta_max = -1.0;
  double delta_min = -1.0;
  double decay_rate = -1.0;
  long schedule_start = 0;

  std::vector<int> disc_channels;  // empty: 64, 128, ... capped at 512
  double disc_leaky_slope = 0.2;
  double disc_smoothness = 10.0;

  double lambda_r1 = 10.0;
  double gamma = 0.01;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  int batch = 8;
  long iterations = 2000;
  long checkpoint_every = 500;
  bool nonsat_flip = false;
  std::string optimizer = "sgd";
  double momentum = 0.0;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;

  int mesh_resolution = 128;
  double mesh_level = 0.5;
  int eval_samples = 500;
  int embed_grid = 8;

  bool operator==(const RunConfig&) const = default;

  CameraConfig camera() const {
    CameraConfig c;
    c.radius = camera_radius;
    c.elevation_min = elevation_min_deg * std::numbers::pi / 180.0;
    c.elevation_max = elevation_max_deg * std::numbers::pi / 180.0;
    c.fov = fov_deg * std::numbers::pi / 180.0;
    c.width = image_width;
    c.height = image_height;
    return c;
  }

  SceneBounds scene() const { return {scene_radius}; }

  PatchConfig patch() const {
    return {patch_size, patch_scale_min > 0.0 ? patch_scale_min : static_cast<double>(patch_size) / image_width,
            patch_scale_max};
  }

  RenderOptions render() const {
    RenderOptions r;
    r.background = Eigen::Vector3d(background[0], background[1], background[2]);
    r.mode = render_mode == "density" ? AlphaMode::density : AlphaMode::occupancy;
    return r;
  }

  SurfaceSearch search() const {
    SurfaceSearch s;
    s.coarse_n = coarse_n;
    s.secant_iters = secant_iters;
    s.tolerance = surface_tolerance;
    return s;
  }

  /// Full ray extent through the scene ball down to 5% of it, reaching the
  /// floor at 80% of the planned iterations.
  IntervalSchedule schedule() const {
    IntervalSchedule s;
    const double extent = 2.0 * scene_radius;
    s.delta_max = delta_max > 0.0 ? delta_max : extent;
    s.delta_min = delta_min > 0.0 ? delta_min : 0.05 * extent;
    const double span = 0.8 * static_cast<double>(std::max(1L, iterations));
    s.decay_rate = decay_rate > 0.0 ? decay_rate : std::log(s.delta_max / s.delta_min) / span;
    if (!(s.decay_rate > 0.0)) s.decay_rate = 1.0 / span;
    s.start_iteration = schedule_start;
    return s;
  }

  DiscriminatorConfig discriminator() const {
    DiscriminatorConfig d;
    d.patch_size = patch_size;
    d.channels = disc_channels.empty() ? default_channels(patch_size) : disc_channels;
    d.leaky_slope = disc_leaky_slope;
    d.smoothness = disc_smoothness;
    return d;
  }

  OptimizerConfig optimizer_config() const {
    OptimizerConfig o;
    o.kind = optimizer == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
    o.momentum = momentum;
    o.beta1 = adam_beta1;
    o.beta2 = adam_beta2;
    return o;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.field = field;
    t.disc = discriminator();
    t.sampler.camera = camera();
    t.sampler.patch = patch();
    t.sampler.scene = scene();
    t.sampler.search = search();
    t.sampler.schedule = schedule();
    t.sampler.samples_per_ray = samples_per_ray;
    t.sampler.eps_scale = eps_scale;
    t.sampler.smooth_max_points = static_cast<std::size_t>(smooth_max_points);
    t.render = render();
    t.optimizer = optimizer_config();
    t.lambda_r1 = lambda_r1;
    t.gamma = gamma;
    t.lr_g = lr_g;
    t.lr_d = lr_d;
    t.batch = batch;
    t.iterations = iterations;
    t.checkpoint_every = checkpoint_every;
    t.nonsat_flip = nonsat_flip;
    t.seed = seed;
    return t;
  }

  ToyDatasetConfig toy() const {
    ToyDatasetConfig t;
    t.families = parse_families(families);
    t.count = data_count;
    t.camera = camera();
    t.size_min = data_size_min;
    t.size_max = data_size_max;
    t.seed = seed;
    return t;
  }

  void validate() const {
    require(background.size() == 3, "render.background needs three values");
    require(render_mode == "occupancy" || render_mode == "density", "render.mode must be occupancy or density");
    require(optimizer == "sgd" || optimizer == "adam", "train.optimizer must be sgd or adam");
    require(image_width >= 1 && image_height >= 1, "camera image size must be positive");
    require(fov_deg > 0.0 && fov_deg < 180.0, "camera.fov_deg must lie in (0, 180)");
    require(scene_radius > 0.0 && camera_radius > scene_radius, "the camera must lie outside the scene ball");
    require(patch_size <= std::min(image_width, image_height), "patch.size must not exceed the image size");
    require(coarse_n >= 2 && secant_iters >= 0, "surface search needs coarse_n >= 2 and secant_iters >= 0");
    require(smooth_max_points >= 0, "surface.max_points must be >= 0");
    require(mesh_resolution >= 2, "mesh.resolution must be >= 2");
    require(eval_samples >= 2 && embed_grid >= 1, "eval.n_samples >= 2 and eval.embed_grid >= 1 required");
    toy().validate(patch_size);
    train().validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// One config key bound to a RunConfig member.
struct ConfigKey {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::invalid_argument on bad text
  std::function<std::string(const RunConfig&)> get;
};

inline long long parse_integer(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
  return v;
}

inline double parse_real(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("not a finite number");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("not a boolean (true/false)");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
ConfigKey int_key(std::string key, T RunConfig::*m) {
  return {std::move(key), [m](RunConfig& c, const std::string& s) { c.*m = static_cast<T>(parse_integer(s)); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

template <class S>
ConfigKey int_key(std::string key, S RunConfig::*sub, int S::*m) {
  return {std::move(key), [sub, m](RunConfig& c, const std::string& s) { c.*sub.*m = static_cast<int>(parse_integer(s)); },
          [sub, m](const RunConfig& c) { return std::to_string(c.*sub.*m); }};
}

inline ConfigKey real_key(std::string key, double RunConfig::*m) {
  return {std::move(key), [m](RunConfig& c, const std::string& s) { c.*m = parse_real(s); },
          [m](const RunConfig& c) { return format_double(c.*m); }};
}

template <class S>
ConfigKey real_key(std::string key, S RunConfig::*sub, double S::*m) {
  return {std::move(key), [sub, m](RunConfig& c, const std::string& s) { c.*sub.*m = parse_real(s); },
          [sub, m](const RunConfig& c) { return format_double(c.*sub.*m); }};
}

inline ConfigKey bool_key(std::string key, bool RunConfig::*m) {
  return {std::move(key), [m](RunConfig& c, const std::string& s) { c.*m = parse_bool(s); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline ConfigKey string_key(std::string key, std::string RunConfig::*m) {
  return {std::move(key), [m](RunConfig& c, const std::string& s) { c.*m = s; },
          [m](const RunConfig& c) { return c.*m; }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"seed", [](RunConfig& c, const std::string& s) {
                   const long long v = parse_integer(s);
                   if (v < 0) throw std::invalid_argument("seed must be >= 0");
                   c.seed = static_cast<std::uint64_t>(v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    k.push_back(string_key("data.dir", &RunConfig::data_dir));
    k.push_back(string_key("output.dir", &RunConfig::out_dir));
    k.push_back(string_key("data.families", &RunConfig::families));
    k.push_back(int_key("data.count", &RunConfig::data_count));
    k.push_back(real_key("data.size_min", &RunConfig::data_size_min));
    k.push_back(real_key("data.size_max", &RunConfig::data_size_max));

    k.push_back(int_key("field.d_s", &RunConfig::field, &FieldConfig::d_s));
    k.push_back(int_key("field.d_a", &RunConfig::field, &FieldConfig::d_a));
    k.push_back(int_key("field.width", &RunConfig::field, &FieldConfig::width));
    k.push_back(int_key("field.depth", &RunConfig::field, &FieldConfig::depth));
    k.push_back(int_key("field.color_width", &RunConfig::field, &FieldConfig::color_width));
    k.push_back(int_key("field.freq_x", &RunConfig::field, &FieldConfig::freq_x));
    k.push_back(int_key("field.freq_d", &RunConfig::field, &FieldConfig::freq_d));
    k.push_back(real_key("field.init_radius", &RunConfig::field, &FieldConfig::init_sphere_radius));
    k.push_back(real_key("field.init_sharpness", &RunConfig::field, &FieldConfig::init_sharpness));
    k.push_back(real_key("field.softplus_beta", &RunConfig::field, &FieldConfig::softplus_beta));

    k.push_back(real_key("camera.radius", &RunConfig::camera_radius));
    k.push_back(real_key("camera.elevation_min_deg", &RunConfig::elevation_min_deg));
    k.push_back(real_key("camera.elevation_max_deg", &RunConfig::elevation_max_deg));
    k.push_back(real_key("camera.fov_deg", &RunConfig::fov_deg));
    k.push_back(int_key("camera.width", &RunConfig::image_width));
    k.push_back(int_key("camera.height", &RunConfig::image_height));
    k.push_back(real_key("scene.radius", &RunConfig::scene_radius));

    k.push_back(int_key("patch.size", &RunConfig::patch_size));
    k.push_back(real_key("patch.scale_min", &RunConfig::patch_scale_min));
    k.push_back(real_key("patch.scale_max", &RunConfig::patch_scale_max));

    k.push_back(int_key("render.samples", &RunConfig::samples_per_ray));
    k.push_back({"render.background",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<double> v;
                   for (const auto& t : split_list(s)) v.push_back(parse_real(t));
                   if (v.size() != 3) throw std::invalid_argument("expected three comma-separated numbers");
                   c.background = v;
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.background.size(); ++i)
                     out += (i ? ", " : "") + format_double(c.background[i]);
                   return out;
                 }});
    k.push_back(string_key("render.mode", &RunConfig::render_mode));

    k.push_back(int_key("surface.coarse_n", &RunConfig::coarse_n));
    k.push_back(int_key("surface.secant_iters", &RunConfig::secant_iters));
    k.push_back(real_key("surface.tolerance", &RunConfig::surface_tolerance));
    k.push_back(real_key("surface.eps_scale", &RunConfig::eps_scale));
    k.push_back(int_key("surface.max_points", &RunConfig::smooth_max_points));

    k.push_back(real_key("schedule.delta_max", &RunConfig::delta_max));
    k.push_back(real_key("schedule.delta_min", &RunConfig::delta_min));
    k.push_back(real_key("schedule.decay_rate", &RunConfig::decay_rate));
    k.push_back(int_key("schedule.start_iteration", &RunConfig::schedule_start));

    k.push_back({"disc.channels",
                 [](RunConfig& c, const std::string& s) {
                   std::vector<int> v;
                   for (const auto& t : split_list(s)) v.push_back(static_cast<int>(parse_integer(t)));
                   c.disc_channels = v;
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.disc_channels.size(); ++i)
                     out += (i ? ", " : "") + std::to_string(c.disc_channels[i]);
                   return out;
                 }});
    k.push_back(real_key("disc.leaky_slope", &RunConfig::disc_leaky_slope));
    k.push_back(real_key("disc.smoothness", &RunConfig::disc_smoothness));

    k.push_back(real_key("train.lambda", &RunConfig::lambda_r1));
    k.push_back(real_key("train.gamma", &RunConfig::gamma));
    k.push_back(real_key("train.lr_g", &RunConfig::lr_g));
    k.push_back(real_key("train.lr_d", &RunConfig::lr_d));
    k.push_back(int_key("train.batch", &RunConfig::batch));
    k.push_back(int_key("train.iterations", &RunConfig::iterations));
    k.push_back(int_key("train.checkpoint_every", &RunConfig::checkpoint_every));
    k.push_back(bool_key("train.nonsat_flip", &RunConfig::nonsat_flip));
    k.push_back(string_key("train.optimizer", &RunConfig::optimizer));
    k.push_back(real_key("train.momentum", &RunConfig::momentum));
    k.push_back(real_key("train.adam_beta1", &RunConfig::adam_beta1));
    k.push_back(real_key("train.adam_beta2", &RunConfig::adam_beta2));

    k.push_back(int_key("mesh.resolution", &RunConfig::mesh_resolution));
    k.push_back(real_key("mesh.level", &RunConfig::mesh_level));
    k.push_back(int_key("eval.n_samples", &RunConfig::eval_samples));
    k.push_back(int_key("eval.embed_grid", &RunConfig::embed_grid));
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Parses config text. Errors carry the key and the 1-based line number.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("", lineno, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& keys = detail::config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.key == key; });
    if (it == keys.end()) throw ParseError(key, lineno, "unknown key");
    if (!seen.insert(key).second) throw ParseError(key, lineno, "key given twice");
    try {
      it->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(key, lineno, std::string("invalid value '") + value + "': " + e.what());
    } catch (const std::out_of_range&) {
      throw ParseError(key, lineno, "value '" + value + "' out of range");
    }
  }
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Every key with its effective value, in a form parse_config_text accepts.
inline std::string echo_config(const RunConfig& cfg) {
  std::string out = "# effective configuration\n";
  for (const auto& k : detail::config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
  return out;
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> names;
  for (const auto& k : detail::config_keys()) names.push_back(k.key);
  return names;
}

}  // namespace gen3d
