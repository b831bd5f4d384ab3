#pragma once

// Datasets: a manifest of PNG images (optionally with camera poses) and a
// procedural generator of toy datasets rendered by an analytic ray caster.
//
// Directory layout:  manifest.txt  00000.png  00001.png  ...
//
// manifest.txt is JSON:
//   { "name": ..., "count": N,
//     "intrinsics": { "focal": f, "principal": [cx, cy], "width": W, "height": H },
//     "entries": [ { "image": "00000.png", "pose": [12 reals, 3x4 row-major] }, ... ] }
// "pose" is optional and maps camera coordinates (x right, y down, z
// forward) to world coordinates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "json.hpp"

#include "gen3d/camera.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/image.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

struct Intrinsics {
  double focal = 0.0;
  Eigen::Vector2d principal = Eigen::Vector2d::Zero();
  int width = 0;
  int height = 0;
};

struct ManifestEntry {
  std::string image;
  std::optional<Eigen::Matrix<double, 3, 4>> pose;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string name;
  Intrinsics intrinsics;
  std::vector<ManifestEntry> entries;

  std::size_t count() const { return entries.size(); }
};

inline constexpr const char* kManifestName = "manifest.txt";

inline void write_manifest(const DatasetManifest& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["count"] = m.entries.size();
  j["intrinsics"] = {{"focal", m.intrinsics.focal},
                     {"principal", {m.intrinsics.principal.x(), m.intrinsics.principal.y()}},
                     {"width", m.intrinsics.width},
                     {"height", m.intrinsics.height}};
  auto& entries = j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json je;
    je["image"] = e.image;
    if (e.pose) {
      std::vector<double> flat;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) flat.push_back((*e.pose)(r, c));
      je["pose"] = flat;
    }
    entries.push_back(je);
  }
  std::ofstream out(m.root / kManifestName);
  if (!out) throw IoError("cannot write manifest in " + m.root.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing manifest in " + m.root.string());
}

/// Parses and validates a manifest: non-empty, every image present and of
/// the declared size.
inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open manifest: " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.name = j.value("name", std::string());
    const auto& intr = j.at("intrinsics");
    m.intrinsics.focal = intr.at("focal").get<double>();
    m.intrinsics.principal = {intr.at("principal").at(0).get<double>(), intr.at("principal").at(1).get<double>()};
    m.intrinsics.width = intr.at("width").get<int>();
    m.intrinsics.height = intr.at("height").get<int>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.image = je.at("image").get<std::string>();
      if (je.contains("pose")) {
        const auto flat = je.at("pose").get<std::vector<double>>();
        if (flat.size() != 12) throw LoadError("entry '" + e.image + "': pose must have 12 values");
        Eigen::Matrix<double, 3, 4> p;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 4; ++c) p(r, c) = flat[static_cast<std::size_t>(r * 4 + c)];
        e.pose = p;
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + file.string() + ": " + e.what());
  }
  if (m.entries.empty()) throw LoadError("manifest lists no images: " + file.string());
  if (m.intrinsics.width < 1 || m.intrinsics.height < 1) throw LoadError("manifest: image size must be positive");
  for (const auto& e : m.entries) {
    const auto p = m.root / e.image;
    if (!std::filesystem::exists(p)) throw LoadError("entry '" + e.image + "': missing file " + p.string());
    Image hdr;
    try {
      hdr = read_png_header(p);
    } catch (const IoError& err) {
      throw LoadError("entry '" + e.image + "': " + err.what());
    }
    if (hdr.width != m.intrinsics.width || hdr.height != m.intrinsics.height)
      throw LoadError("entry '" + e.image + "': image is " + std::to_string(hdr.width) + "x" +
                      std::to_string(hdr.height) + ", expected " + std::to_string(m.intrinsics.width) + "x" +
                      std::to_string(m.intrinsics.height));
  }
  return m;
}

/// A validated manifest with images decoded on first use.
class Dataset {
 public:
  explicit Dataset(DatasetManifest m) : manifest_(std::move(m)), cache_(manifest_.entries.size()) {
    if (manifest_.entries.empty()) throw LoadError("dataset is empty");
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return manifest_.entries.size(); }
  int width() const noexcept { return manifest_.intrinsics.width; }
  int height() const noexcept { return manifest_.intrinsics.height; }

  const Image& image(std::size_t i) const {
    require(i < size(), "dataset: image index out of range");
    if (!cache_[i]) {
      Image img = read_png(manifest_.root / manifest_.entries[i].image);
      if (img.width != width() || img.height != height())
        throw LoadError("entry '" + manifest_.entries[i].image + "': size changed since validation");
      cache_[i] = std::move(img);
    }
    return *cache_[i];
  }

 private:
  DatasetManifest manifest_;
  mutable std::vector<std::optional<Image>> cache_;
};

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  return Dataset(read_manifest(manifest_path));
}

/// Uniform image, then a random patch of it.
inline Patch sample_real_patch(const Dataset& data, Rng& rng, const PatchConfig& cfg) {
  const std::size_t i = rng.index(data.size());
  const PatchSpec spec = sample_patch_spec(rng, cfg, data.width(), data.height());
  return extract_patch(data.image(i), spec, cfg.size);
}

// ---------------------------------------------------------------------------
// Toy objects and their analytic renderer

enum class ToyShape { sphere, ellipsoid, box };

inline const char* to_string(ToyShape s) {
  switch (s) {
    case ToyShape::sphere: return "sphere";
    case ToyShape::ellipsoid: return "ellipsoid";
    case ToyShape::box: return "box";
  }
  return "?";
}

/// Parses "sphere", "ellipsoid", "box", "mixed" or a comma list of those.
inline std::vector<ToyShape> parse_families(const std::string& text) {
  std::vector<ToyShape> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    std::string tok = text.substr(pos, end - pos);
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok == "sphere")
      out.push_back(ToyShape::sphere);
    else if (tok == "ellipsoid")
      out.push_back(ToyShape::ellipsoid);
    else if (tok == "box")
      out.push_back(ToyShape::box);
    else if (tok == "mixed")
      out.insert(out.end(), {ToyShape::sphere, ToyShape::ellipsoid, ToyShape::box});
    else
      throw ContractError("unknown object family '" + tok + "'");
    pos = end + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// A solid centered at the origin: half-axes in its local frame, rotated by
/// `rotation` (world-from-local).
struct ToyObject {
  ToyShape shape = ToyShape::sphere;
  Eigen::Vector3d half_axes = Eigen::Vector3d::Constant(0.5);
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d color{0.8, 0.3, 0.2};
};

struct ToyHit {
  double t = 0.0;
  Eigen::Vector3d normal;
};

/// First intersection of o + t d (t > 0) with the object.
inline std::optional<ToyHit> intersect(const ToyObject& obj, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Eigen::Vector3d ol = obj.rotation.transpose() * o;
  const Eigen::Vector3d dl = obj.rotation.transpose() * d;
  if (obj.shape == ToyShape::box) {
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double h = obj.half_axes[a];
      if (dl[a] == 0.0) {
        if (std::abs(ol[a]) > h) return std::nullopt;
        continue;
      }
      double ta = (-h - ol[a]) / dl[a], tb = (h - ol[a]) / dl[a];
      double s = -1.0;
      if (ta > tb) {
        std::swap(ta, tb);
        s = 1.0;
      }
      if (ta > t0) {
        t0 = ta;
        axis = a;
        sign = s;
      }
      t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t0 <= 0.0 || axis < 0) return std::nullopt;
    Eigen::Vector3d nl = Eigen::Vector3d::Zero();
    nl[axis] = sign;
    return ToyHit{t0, obj.rotation * nl};
  }
  // Sphere and ellipsoid: unit sphere in scaled local coordinates.
  const Eigen::Vector3d os = ol.cwiseQuotient(obj.half_axes), ds = dl.cwiseQuotient(obj.half_axes);
  const double a = ds.squaredNorm(), b = os.dot(ds), c = os.squaredNorm() - 1.0;
  const double disc = b * b - a * c;
  if (disc < 0.0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / a;
  if (t <= 0.0) return std::nullopt;
  const Eigen::Vector3d pl = ol + t * dl;
  const Eigen::Vector3d nl = pl.cwiseQuotient(obj.half_axes.cwiseProduct(obj.half_axes)).normalized();
  return ToyHit{t, obj.rotation * nl};
}

struct ToyShading {
  Eigen::Vector3d light_dir = Eigen::Vector3d(0.4, 0.3, 1.0).normalized();  // towards the light
  double ambient = 0.35;
  double diffuse = 0.65;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  int supersample = 4;  // per axis
};

/// Analytic render of one object: per-subpixel ray casting, Lambert shading,
/// box-filtered. Pixels no subsample hits are exactly the background.
inline Image render_toy_image(const ToyObject& obj, const CameraPose& pose, const ToyShading& shading = {}) {
  require(shading.supersample >= 1, "render_toy_image: supersample must be >= 1");
  Image img(pose.width, pose.height);
  const int ss = shading.supersample;
  for (int y = 0; y < pose.height; ++y)
    for (int x = 0; x < pose.width; ++x) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
          const Eigen::Vector3d cam((px - pose.principal.x()) / pose.focal, (py - pose.principal.y()) / pose.focal, 1.0);
          const Eigen::Vector3d d = (pose.rotation * cam).normalized();
          if (const auto h = intersect(obj, pose.position, d)) {
            const double lambert = std::max(0.0, h->normal.dot(shading.light_dir));
            acc += obj.color * (shading.ambient + shading.diffuse * lambert);
            ++hits;
          }
        }
      const Eigen::Vector3d px =
          hits == 0 ? shading.background
                    : Eigen::Vector3d((acc + (ss * ss - hits) * shading.background) / static_cast<double>(ss * ss));
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(std::clamp(px[c], 0.0, 1.0));
    }
  return img;
}

struct ToyDatasetConfig {
  std::vector<ToyShape> families{ToyShape::sphere, ToyShape::ellipsoid};
  int count = 1000;
  CameraConfig camera;  // image size and p_cam
  std::vector<Eigen::Vector3d> palette{{0.85, 0.25, 0.2}, {0.2, 0.55, 0.85}, {0.25, 0.7, 0.3},
                                       {0.9, 0.7, 0.15}, {0.6, 0.3, 0.75}, {0.3, 0.3, 0.3}};
  double size_min = 0.35;  // half-axis range
  double size_max = 0.6;
  std::uint64_t seed = 0;
  ToyShading shading;

  void validate(int patch_size = 1) const {
    require(count >= 1, "toy dataset: count must be >= 1");
    require(!families.empty(), "toy dataset: at least one object family required");
    require(!palette.empty(), "toy dataset: palette must not be empty");
    require(camera.width >= patch_size && camera.height >= patch_size, "toy dataset: image size must be >= K");
    require(size_min > 0.0 && size_min <= size_max && size_max < 1.0, "toy dataset: half-axes must lie in (0, 1)");
  }
};

inline ToyObject sample_toy_object(Rng& rng, const ToyDatasetConfig& cfg) {
  ToyObject obj;
  obj.shape = cfg.families[rng.index(cfg.families.size())];
  const double r = rng.uniform(cfg.size_min, cfg.size_max);
  if (obj.shape == ToyShape::sphere) {
    obj.half_axes.setConstant(r);
  } else {
    for (int a = 0; a < 3; ++a) obj.half_axes[a] = rng.uniform(cfg.size_min, cfg.size_max);
    // Box corners must stay inside the unit scene ball.
    if (obj.shape == ToyShape::box) obj.half_axes *= 0.5 / cfg.size_max;
    const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
    obj.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  }
  obj.color = cfg.palette[rng.index(cfg.palette.size())];
  return obj;
}

/// Renders cfg.count images into out_dir and writes the manifest.
inline DatasetManifest generate_toy_dataset(const ToyDatasetConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
  Rng rng(cfg.seed);
  DatasetManifest m;
  m.root = out_dir;
  m.name = "toy";
  for (std::size_t i = 0; i < cfg.families.size(); ++i) m.name += (i == 0 ? "-" : "+") + std::string(to_string(cfg.families[i]));
  m.intrinsics = {cfg.camera.focal(), {0.5 * cfg.camera.width, 0.5 * cfg.camera.height}, cfg.camera.width,
                  cfg.camera.height};
  for (int i = 0; i < cfg.count; ++i) {
    const ToyObject obj = sample_toy_object(rng, cfg);
    const CameraPose pose = sample_camera(rng, cfg.camera);
    char name[32];
    std::snprintf(name, sizeof name, "%05d.png", i);
    write_png(out_dir / name, render_toy_image(obj, pose, cfg.shading));
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = pose.rotation;
    p.col(3) = pose.position;
    m.entries.push_back({name, p});
  }
  write_manifest(m);
  return m;
}

}  // namespace gen3d
