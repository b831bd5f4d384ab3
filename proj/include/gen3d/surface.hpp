#pragma once

// Implicit-surface machinery on the 0.5-level set of occupancy: first-hit
// search along rays, the narrowing sample interval, normals and the
// smoothness regularizer.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "gen3d/camera.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/field.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

inline constexpr double kSurfaceLevel = 0.5;

struct SurfaceSearch {
  int coarse_n = 64;
  int secant_iters = 8;
  /// Refinement continues past secant_iters until |occupancy - 0.5| < tolerance.
  double tolerance = 1e-4;
  int max_iters = 60;

  bool operator==(const SurfaceSearch&) const = default;
};

struct IntervalSchedule {
  double delta_max = 2.0;
  double delta_min = 0.1;
  double decay_rate = 1e-3;  // per iteration
  long start_iteration = 0;

  void validate() const {
    require(delta_max >= delta_min && delta_min > 0.0, "schedule: need delta_max >= delta_min > 0");
    require(decay_rate > 0.0, "schedule: decay rate must be positive");
  }

  bool operator==(const IntervalSchedule&) const = default;
};

/// max(delta_min, delta_max * exp(-beta * max(0, iteration - start))).
inline double interval_width(const IntervalSchedule& s, long iteration) {
  require(iteration >= 0, "interval_width: iteration must be non-negative");
  const double elapsed = static_cast<double>(std::max(0L, iteration - s.start_iteration));
  return std::max(s.delta_min, s.delta_max * std::exp(-s.decay_rate * elapsed));
}

/// First crossing of occupancy 0.5 from below along each ray, refined by
/// bracketed secant steps (Illinois variant). Empty where no coarse bracket
/// exists. All rays are searched together so the field sees one batch per
/// refinement step.
template <class Field>
std::vector<std::optional<double>> find_surface_intersections(const Field& field, const std::vector<Ray>& rays,
                                                              const SurfaceSearch& search) {
  require(search.coarse_n >= 2, "find_surface_intersection: coarse_n must be >= 2");
  const int n = search.coarse_n;
  const std::size_t m = rays.size();
  std::vector<std::optional<double>> out(m);
  if (m == 0) return out;
  Eigen::Matrix3Xd xs(3, static_cast<Eigen::Index>(m) * n);
  auto t_at = [&](std::size_t r, int i) { return rays[r].t_near + (rays[r].t_far - rays[r].t_near) * i / (n - 1); };
  for (std::size_t r = 0; r < m; ++r)
    for (int i = 0; i < n; ++i) xs.col(static_cast<Eigen::Index>(r) * n + i) = rays[r].at(t_at(r, i));
  const Eigen::VectorXd occ = field.occupancy(xs);

  struct Bracket {
    std::size_t ray;
    double t_a, f_a, t_b, f_b, t;
    int side = 0;
  };
  std::vector<Bracket> active;
  for (std::size_t r = 0; r < m; ++r)
    for (int i = 0; i + 1 < n; ++i) {
      const double a = occ[static_cast<Eigen::Index>(r) * n + i], b = occ[static_cast<Eigen::Index>(r) * n + i + 1];
      if (a < kSurfaceLevel && b >= kSurfaceLevel) {
        if (b == kSurfaceLevel)
          out[r] = t_at(r, i + 1);
        else
          active.push_back({r, t_at(r, i), a - kSurfaceLevel, t_at(r, i + 1), b - kSurfaceLevel, t_at(r, i)});
        break;
      }
    }

  for (int it = 0; it < search.max_iters && !active.empty(); ++it) {
    Eigen::Matrix3Xd p(3, static_cast<Eigen::Index>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j) {
      auto& b = active[j];
      b.t = b.t_a - b.f_a * (b.t_b - b.t_a) / (b.f_b - b.f_a);
      p.col(static_cast<Eigen::Index>(j)) = rays[b.ray].at(b.t);
    }
    const Eigen::VectorXd f_all = field.occupancy(p);
    std::vector<Bracket> next;
    for (std::size_t j = 0; j < active.size(); ++j) {
      auto b = active[j];
      const double f = f_all[static_cast<Eigen::Index>(j)] - kSurfaceLevel;
      const bool done = f == 0.0 || (it + 1 >= search.secant_iters && std::abs(f) < search.tolerance) ||
                        it + 1 == search.max_iters;
      if (done) {
        out[b.ray] = b.t;
        continue;
      }
      if (f < 0.0) {
        b.t_a = b.t;
        b.f_a = f;
        if (b.side == -1) b.f_b *= 0.5;
        b.side = -1;
      } else {
        b.t_b = b.t;
        b.f_b = f;
        if (b.side == 1) b.f_a *= 0.5;
        b.side = 1;
      }
      next.push_back(b);
    }
    active = std::move(next);
  }
  for (const auto& b : active) out[b.ray] = b.t;
  return out;
}

template <class Field>
std::optional<double> find_surface_intersection(const Field& field, const Ray& ray, const SurfaceSearch& search) {
  return find_surface_intersections(field, std::vector<Ray>{ray}, search).front();
}

/// Stratified samples in [t_s - delta/2, t_s + delta/2] clipped to the ray,
/// or over the whole ray when there is no surface hit.
inline std::vector<double> place_samples(const Ray& ray, std::optional<double> t_s, double delta, int n, Rng* rng) {
  require(n >= 2, "place_samples: need at least two samples");
  if (!t_s) return stratified_samples(ray, n, rng);
  double lo = std::max(ray.t_near, *t_s - 0.5 * delta);
  double hi = std::min(ray.t_far, *t_s + 0.5 * delta);
  if (hi - lo <= 1e-12) return stratified_samples(ray, n, rng);
  return stratified_samples(lo, hi, n, rng);
}

/// Normalized occupancy gradient. It points toward increasing occupancy,
/// i.e. into the object.
template <class Field>
Eigen::Vector3d surface_normal(const Field& field, const Eigen::Vector3d& x) {
  Eigen::Matrix3Xd p(3, 1);
  p.col(0) = x;
  const Eigen::Vector3d g = field.occupancy_gradient(p).col(0);
  const double norm = g.norm();
  if (!(norm >= 1e-12)) throw EvaluationError("surface_normal: degenerate occupancy gradient");
  return g / norm;
}

struct SurfacePoint {
  Eigen::Vector3d position;
  Eigen::Vector3d normal;
  std::size_t ray_id = 0;
};

/// Surface points hit by the given rays (at most max_points, in ray order).
template <class Field>
std::vector<SurfacePoint> surface_points(const Field& field, const std::vector<Ray>& rays, const SurfaceSearch& search,
                                         std::size_t max_points, std::size_t* degenerate = nullptr) {
  std::vector<SurfacePoint> pts;
  const auto hits = find_surface_intersections(field, rays, search);
  for (std::size_t r = 0; r < rays.size() && pts.size() < max_points; ++r) {
    const auto& t = hits[r];
    if (!t) continue;
    const Eigen::Vector3d x = rays[r].at(*t);
    try {
      pts.push_back({x, surface_normal(field, x), r});
    } catch (const EvaluationError&) {
      if (degenerate != nullptr) ++*degenerate;
    }
  }
  return pts;
}

/// Perturbations of norm eps_scale, uniform in direction.
inline std::vector<Eigen::Vector3d> sample_perturbations(Rng& rng, std::size_t n, double eps_scale) {
  require(eps_scale >= 0.0, "smoothness: eps_scale must be non-negative");
  std::vector<Eigen::Vector3d> eps(n);
  for (auto& e : eps) e = eps_scale * rng.unit_vector();
  return eps;
}

struct SmoothnessResult {
  double loss = 0.0;
  std::size_t points = 0;
  std::size_t skipped = 0;
};

/// sum_x |n(x) - n(x + eps_x)| over the given surface positions. Points with
/// a degenerate gradient at either end are skipped and counted.
template <class Field>
SmoothnessResult smoothness_at_points(const Field& field, const std::vector<Eigen::Vector3d>& points,
                                      const std::vector<Eigen::Vector3d>& eps) {
  require(points.size() == eps.size(), "smoothness: one perturbation per point required");
  SmoothnessResult res;
  if (points.empty()) return res;
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::Matrix3Xd xs(3, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xs.col(i) = points[static_cast<std::size_t>(i)];
    xs.col(n + i) = points[static_cast<std::size_t>(i)] + eps[static_cast<std::size_t>(i)];
  }
  const Eigen::Matrix3Xd g = field.occupancy_gradient(xs);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = g.col(i).norm(), b = g.col(n + i).norm();
    if (!(a >= 1e-12) || !(b >= 1e-12)) {
      ++res.skipped;
      continue;
    }
    res.loss += (g.col(i) / a - g.col(n + i) / b).norm();
    ++res.points;
  }
  return res;
}

/// Casts the patch rays of `pose`, finds their surface hits and evaluates the
/// smoothness sum with random perturbations of norm eps_scale.
template <class Field>
SmoothnessResult smoothness_loss(const Field& field, const CameraPose& pose, const PatchSpec& spec, int k,
                                 const SceneBounds& scene, const SurfaceSearch& search, double eps_scale, Rng& rng,
                                 std::size_t max_points) {
  require(eps_scale >= 0.0, "smoothness: eps_scale must be non-negative");
  const auto rays = generate_rays(pose, patch_pixel_coords(spec, k, pose.width, pose.height), scene);
  const auto hits = find_surface_intersections(field, rays, search);
  std::vector<Eigen::Vector3d> pts;
  for (std::size_t r = 0; r < rays.size() && pts.size() < max_points; ++r)
    if (hits[r]) pts.push_back(rays[r].at(*hits[r]));
  const auto eps = sample_perturbations(rng, pts.size(), eps_scale);
  return smoothness_at_points(field, pts, eps);
}

/// Smoothness value and its parameter gradient for the neural field. Surface
/// positions are constants; only the normal evaluations are differentiated.
template <class Real>
SmoothnessResult smoothness_with_gradient(const ConditionalField<Real>& net, const ParameterStore<Real>& params,
                                          const Eigen::VectorXd& z_s, const std::vector<Eigen::Vector3d>& points,
                                          const std::vector<Eigen::Vector3d>& eps, double weight,
                                          ParameterStore<Real>& grad) {
  require(points.size() == eps.size(), "smoothness: one perturbation per point required");
  SmoothnessResult res;
  if (points.empty()) return res;
  const auto n = static_cast<Eigen::Index>(points.size());
  nn::Matrix<Real> xs(3, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xs.col(i) = points[static_cast<std::size_t>(i)].template cast<Real>();
    xs.col(n + i) = (points[static_cast<std::size_t>(i)] + eps[static_cast<std::size_t>(i)]).template cast<Real>();
  }
  nn::Matrix<Real> logit;
  const nn::Matrix<Real> g = net.logit_gradient(params, xs, z_s, &logit);
  if (!g.allFinite()) throw EvaluationError("smoothness: non-finite field gradient");

  // Cotangent on each logit gradient: d|n_a - n_b| / dg = (I - n n^T)/|g| * (+-)(n_a - n_b)/|n_a - n_b|.
  nn::Matrix<Real> u = nn::Matrix<Real>::Zero(3, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d ga = g.col(i).template cast<double>();
    const Eigen::Vector3d gb = g.col(n + i).template cast<double>();
    // Degeneracy is judged on the occupancy gradient sigmoid' * grad(logit).
    const double sa = nn::sigmoid(static_cast<double>(logit(0, i)));
    const double sb = nn::sigmoid(static_cast<double>(logit(0, n + i)));
    if (!(sa * (1 - sa) * ga.norm() >= 1e-12) || !(sb * (1 - sb) * gb.norm() >= 1e-12) || ga.norm() == 0.0 ||
        gb.norm() == 0.0) {
      ++res.skipped;
      continue;
    }
    const Eigen::Vector3d na = ga.normalized(), nb = gb.normalized();
    const Eigen::Vector3d diff = na - nb;
    const double len = diff.norm();
    res.loss += len;
    ++res.points;
    if (len == 0.0) continue;
    const Eigen::Vector3d dn = diff / len;
    const Eigen::Vector3d ua = (dn - na * na.dot(dn)) / ga.norm();
    const Eigen::Vector3d ub = -(dn - nb * nb.dot(dn)) / gb.norm();
    u.col(i) = (weight * ua).template cast<Real>();
    u.col(n + i) = (weight * ub).template cast<Real>();
  }
  net.logit_gradient_vjp(params, xs, u, z_s, grad);
  return res;
}

}  // namespace gen3d
