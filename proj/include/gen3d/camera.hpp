#pragma once

// Pinhole cameras on a sphere around the origin and ray casting.
//
// Camera frame: x right, y down, z forward. Pixel (i, j) has its center at
// continuous coordinate (i + 0.5, j + 0.5).

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gen3d/errors.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

/// Objects live inside the ball of this radius around the origin; meshes are
/// extracted on the enclosing cube.
struct SceneBounds {
  double radius = 1.0;

  bool operator==(const SceneBounds&) const = default;
};

struct CameraConfig {
  double radius = 3.0;
  double elevation_min = 0.0;                       // radians
  double elevation_max = std::numbers::pi / 6.0;    // radians
  double fov = std::numbers::pi / 6.0;              // horizontal, radians
  int width = 64;
  int height = 64;

  double focal() const { return 0.5 * width / std::tan(0.5 * fov); }

  bool operator==(const CameraConfig&) const = default;
};

struct CameraPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world-from-camera
  double focal = 1.0;
  Eigen::Vector2d principal = Eigen::Vector2d::Zero();
  int width = 0;
  int height = 0;

  Eigen::Vector3d forward() const { return rotation.col(2); }
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Eigen::Vector3d at(double t) const { return origin + t * dir; }
};

/// Pose at `position` looking at the origin with world-z up.
inline CameraPose look_at_origin(const Eigen::Vector3d& position, const CameraConfig& cfg) {
  const Eigen::Vector3d forward = (-position).normalized();
  const Eigen::Vector3d world_up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d right = forward.cross(world_up);
  require(right.norm() > 1e-9, "camera forward axis is parallel to the up vector");
  CameraPose pose;
  pose.position = position;
  pose.rotation.col(0) = right.normalized();
  pose.rotation.col(2) = forward;
  pose.rotation.col(1) = forward.cross(pose.rotation.col(0));  // down
  pose.focal = cfg.focal();
  pose.principal = Eigen::Vector2d(0.5 * cfg.width, 0.5 * cfg.height);
  pose.width = cfg.width;
  pose.height = cfg.height;
  return pose;
}

/// Camera at (azimuth, elevation) on the sphere of radius cfg.radius.
inline CameraPose camera_at(double azimuth, double elevation, const CameraConfig& cfg) {
  const Eigen::Vector3d pos(cfg.radius * std::cos(elevation) * std::cos(azimuth),
                            cfg.radius * std::cos(elevation) * std::sin(azimuth),
                            cfg.radius * std::sin(elevation));
  return look_at_origin(pos, cfg);
}

/// Azimuth uniform on [0, 2pi), elevation uniform on [min, max].
inline CameraPose sample_camera(Rng& rng, const CameraConfig& cfg) {
  require(cfg.elevation_min <= cfg.elevation_max, "sample_camera: empty elevation range");
  require(cfg.elevation_min > -0.5 * std::numbers::pi && cfg.elevation_max < 0.5 * std::numbers::pi,
          "sample_camera: elevation must lie strictly between the poles");
  require(cfg.radius > 0.0, "sample_camera: radius must be positive");
  const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double u = rng.uniform();
  const double elevation = cfg.elevation_min + u * (cfg.elevation_max - cfg.elevation_min);
  return camera_at(azimuth, elevation, cfg);
}

/// Near/far distances of the scene ball seen from `origin`.
inline std::pair<double, double> scene_interval(const Eigen::Vector3d& origin, const SceneBounds& scene) {
  const double dist = origin.norm();
  return {std::max(0.0, dist - scene.radius), dist + scene.radius};
}

/// One unit-direction ray per continuous pixel coordinate.
inline std::vector<Ray> generate_rays(const CameraPose& pose, const std::vector<Eigen::Vector2d>& pixels,
                                      const SceneBounds& scene) {
  const auto [t_near, t_far] = scene_interval(pose.position, scene);
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& px : pixels) {
    require(px.x() >= 0.0 && px.x() <= pose.width && px.y() >= 0.0 && px.y() <= pose.height,
            "generate_rays: pixel coordinate outside the image");
    const Eigen::Vector3d cam((px.x() - pose.principal.x()) / pose.focal,
                              (px.y() - pose.principal.y()) / pose.focal, 1.0);
    rays.push_back({pose.position, (pose.rotation * cam).normalized(), t_near, t_far});
  }
  return rays;
}

}  // namespace gen3d
