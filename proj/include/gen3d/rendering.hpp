#pragma once

// Patch sampling, the patching operator and differentiable volume rendering.
//
// A ray with samples i = 1..N is composited front to back:
//   C = sum_i T_i a_i c_i + T_{N+1} * background,   T_{i+1} = T_i (1 - a_i).
// In occupancy mode a_i is the field's occupancy at x_i; in density mode
// a_i = 1 - exp(-sigma_i delta_i).

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "gen3d/camera.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/field.hpp"
#include "gen3d/image.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

// ---------------------------------------------------------------------------
// Patches

/// Patch placement: `center` in normalized image coordinates, `scale` is the
/// fraction of the image side the patch spans.
struct PatchSpec {
  Eigen::Vector2d center{0.5, 0.5};
  double scale = 1.0;
};

struct PatchConfig {
  int size = 32;            // K
  double scale_min = 0.5;   // defaults to K / W when built from a run config
  double scale_max = 1.0;

  bool operator==(const PatchConfig&) const = default;
};

/// A K x K RGB patch, row-major, channels interleaved.
struct Patch {
  int size = 0;
  std::vector<double> pixels;

  Patch() = default;
  explicit Patch(int k, double fill = 0.0) : size(k), pixels(static_cast<std::size_t>(k) * k * 3, fill) {}

  double& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
  double at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }

  bool operator==(const Patch&) const = default;
};

/// Continuous pixel coordinates of the K x K grid (row-major, y outer).
inline std::vector<Eigen::Vector2d> patch_pixel_coords(const PatchSpec& spec, int k, int width, int height) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(k) * k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i)
      out.emplace_back(spec.center.x() * width + spec.scale * width * ((i + 0.5) / k - 0.5),
                       spec.center.y() * height + spec.scale * height * ((j + 0.5) / k - 0.5));
  return out;
}

namespace detail {

/// Feasible center interval (pixels) along one axis for the patch footprint
/// of side scale * n to stay within [0, n]. For K <= n every grid point then
/// lies inside the pixel-center hull.
inline std::pair<double, double> center_range(double scale, int n) {
  const double half = 0.5 * scale * n;
  return {half, n - half};
}

}  // namespace detail

inline bool patch_in_bounds(const PatchSpec& spec, int k, int width, int height) {
  const double eps = 1e-9;
  const auto [x_lo, x_hi] = detail::center_range(spec.scale, width);
  const auto [y_lo, y_hi] = detail::center_range(spec.scale, height);
  const double cx = spec.center.x() * width, cy = spec.center.y() * height;
  return spec.scale > 0.0 && k <= width && k <= height && cx >= x_lo - eps && cx <= x_hi + eps &&
         cy >= y_lo - eps && cy <= y_hi + eps;
}

/// Scale uniform in [scale_min, scale_max]; center uniform over the
/// positions that keep the footprint inside the image.
inline PatchSpec sample_patch_spec(Rng& rng, const PatchConfig& cfg, int width, int height) {
  require(cfg.size >= 1 && cfg.size <= std::min(width, height), "sample_patch_spec: K must not exceed the image size");
  require(cfg.scale_min > 0.0 && cfg.scale_min <= cfg.scale_max, "sample_patch_spec: invalid scale range");
  const auto feasible = [&](double s) {
    const auto [x_lo, x_hi] = detail::center_range(s, width);
    const auto [y_lo, y_hi] = detail::center_range(s, height);
    return x_lo <= x_hi + 1e-12 && y_lo <= y_hi + 1e-12;
  };
  require(feasible(cfg.scale_max), "sample_patch_spec: no valid center exists for the maximum scale");
  PatchSpec spec;
  spec.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  if (cfg.scale_min == cfg.scale_max) spec.scale = cfg.scale_min;
  const auto [x_lo, x_hi] = detail::center_range(spec.scale, width);
  const auto [y_lo, y_hi] = detail::center_range(spec.scale, height);
  const double ux = rng.uniform(), uy = rng.uniform();
  spec.center = {(x_lo + ux * std::max(0.0, x_hi - x_lo)) / width, (y_lo + uy * std::max(0.0, y_hi - y_lo)) / height};
  return spec;
}

/// Bilinear sample at a continuous pixel coordinate inside the pixel-center hull.
inline double bilinear(const Image& img, double x, double y, int c) {
  auto split = [](double v, int n, int& i0, double& w) {
    double f = v - 0.5;
    const double r = std::round(f);
    if (std::abs(f - r) < 1e-9) f = r;  // exact pixel centers reproduce pixels exactly
    i0 = std::clamp(static_cast<int>(std::floor(f)), 0, n - 1);
    w = std::clamp(f - i0, 0.0, 1.0);
  };
  int x0 = 0, y0 = 0;
  double wx = 0.0, wy = 0.0;
  split(x, img.width, x0, wx);
  split(y, img.height, y0, wy);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double top = wx == 0.0 ? img.at(x0, y0, c) : (1.0 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
  const double bot = wx == 0.0 ? img.at(x0, y1, c) : (1.0 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
  return wy == 0.0 ? top : (1.0 - wy) * top + wy * bot;
}

/// The patching operator: bilinear resampling of the image on the patch grid.
inline Patch extract_patch(const Image& image, const PatchSpec& spec, int k) {
  require(k >= 1, "extract_patch: K must be >= 1");
  require(patch_in_bounds(spec, k, image.width, image.height), "extract_patch: patch grid leaves the image");
  Patch patch(k);
  const auto coords = patch_pixel_coords(spec, k, image.width, image.height);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < 3; ++c) {
        const auto& p = coords[static_cast<std::size_t>(j) * k + i];
        patch.at(i, j, c) = bilinear(image, p.x(), p.y(), c);
      }
  return patch;
}

// ---------------------------------------------------------------------------
// Sampling along rays

/// One draw per equal sub-interval of [lo, hi); midpoints when rng is null.
inline std::vector<double> stratified_samples(double lo, double hi, int n, Rng* rng) {
  require(n >= 2, "stratified_samples: need at least two samples");
  require(hi > lo, "stratified_samples: empty interval");
  std::vector<double> ts(static_cast<std::size_t>(n));
  const double step = (hi - lo) / n;
  for (int i = 0; i < n; ++i) {
    const double u = rng != nullptr ? rng->uniform() : 0.5;
    ts[static_cast<std::size_t>(i)] = lo + (i + u) * step;
  }
  return ts;
}

inline std::vector<double> stratified_samples(const Ray& ray, int n, Rng* rng) {
  return stratified_samples(ray.t_near, ray.t_far, n, rng);
}

// ---------------------------------------------------------------------------
// Compositing

enum class AlphaMode { occupancy, density };

struct RenderOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  AlphaMode mode = AlphaMode::occupancy;
};

/// Everything computed along one ray.
struct RaySampleBatch {
  std::vector<double> ts;
  Eigen::Matrix3Xd positions;
  std::vector<double> deltas;          // t_{i+1} - t_i; last one t_far - t_N
  std::vector<double> alphas;
  std::vector<double> transmittances;  // T_1 .. T_N
  double residual = 1.0;               // T_{N+1}
  Eigen::Matrix3Xd colors;
};

/// Front-to-back compositing of given alphas and colors.
inline Eigen::Vector3d composite(const std::vector<double>& alphas, const Eigen::Matrix3Xd& colors,
                                 const Eigen::Vector3d& background, std::vector<double>* transmittances = nullptr,
                                 double* residual = nullptr) {
  require(colors.cols() == static_cast<Eigen::Index>(alphas.size()), "composite: alpha/color count mismatch");
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  double t = 1.0;
  if (transmittances != nullptr) transmittances->resize(alphas.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (transmittances != nullptr) (*transmittances)[i] = t;
    out += t * alphas[i] * colors.col(static_cast<Eigen::Index>(i));
    t *= 1.0 - alphas[i];
  }
  if (residual != nullptr) *residual = t;
  return out + t * background;
}

/// Gradients of <d_color, C> with respect to alphas and colors.
///
/// With R_{N+1} = background and R_i = a_i c_i + (1 - a_i) R_{i+1} (so C = R_1):
///   dC/dc_i = T_i a_i,  dC/da_i = T_i (c_i - R_{i+1}).
inline void composite_backward(const std::vector<double>& alphas, const Eigen::Matrix3Xd& colors,
                               const Eigen::Vector3d& background, const std::vector<double>& transmittances,
                               const Eigen::Vector3d& d_color, std::vector<double>& d_alpha,
                               Eigen::Matrix3Xd& d_colors) {
  const std::size_t n = alphas.size();
  d_alpha.assign(n, 0.0);
  d_colors.resize(3, static_cast<Eigen::Index>(n));
  Eigen::Vector3d rest = background;
  for (std::size_t k = n; k-- > 0;) {
    const auto i = static_cast<Eigen::Index>(k);
    d_alpha[k] = transmittances[k] * d_color.dot(colors.col(i) - rest);
    d_colors.col(i) = transmittances[k] * alphas[k] * d_color;
    rest = alphas[k] * colors.col(i) + (1.0 - alphas[k]) * rest;
  }
}

inline std::vector<double> sample_deltas(const std::vector<double>& ts, double t_far) {
  std::vector<double> d(ts.size());
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) d[i] = ts[i + 1] - ts[i];
  if (!ts.empty()) d.back() = std::max(0.0, t_far - ts.back());
  return d;
}

inline double alpha_from(double value, double delta, AlphaMode mode) {
  if (mode == AlphaMode::occupancy) return value;
  return delta > 0.0 ? sigma_to_alpha(value, delta) : 0.0;
}

struct RayRender {
  Eigen::Vector3d color;
  RaySampleBatch samples;
};

namespace detail {

inline void check_ts(const Ray& ray, const std::vector<double>& ts) {
  require(!ts.empty(), "render: no samples on ray");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    require(ts[i] >= ray.t_near - 1e-9 && ts[i] <= ray.t_far + 1e-9, "render: sample outside ray bounds");
    require(i == 0 || ts[i] > ts[i - 1], "render: samples must be strictly increasing");
  }
}

}  // namespace detail

/// Renders several rays through any field with a batched `evaluate`.
template <class Field>
std::vector<RayRender> render_rays(const Field& field, const std::vector<Ray>& rays,
                                   const std::vector<std::vector<double>>& ts, const RenderOptions& opt) {
  require(rays.size() == ts.size(), "render_rays: one sample list per ray required");
  std::size_t total = 0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    detail::check_ts(rays[r], ts[r]);
    total += ts[r].size();
  }
  Eigen::Matrix3Xd xs(3, static_cast<Eigen::Index>(total)), ds(3, static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (std::size_t r = 0; r < rays.size(); ++r)
    for (double t : ts[r]) {
      xs.col(col) = rays[r].at(t);
      ds.col(col) = rays[r].dir;
      ++col;
    }
  const FieldEval eval = field.evaluate(xs, ds);
  if (!eval.value.allFinite() || !eval.color.allFinite()) throw EvaluationError("render: non-finite field output");

  std::vector<RayRender> out(rays.size());
  col = 0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    auto& s = out[r].samples;
    const auto n = static_cast<Eigen::Index>(ts[r].size());
    s.ts = ts[r];
    s.positions = xs.middleCols(col, n);
    s.colors = eval.color.middleCols(col, n);
    s.deltas = sample_deltas(ts[r], rays[r].t_far);
    s.alphas.resize(ts[r].size());
    for (Eigen::Index i = 0; i < n; ++i)
      s.alphas[static_cast<std::size_t>(i)] = alpha_from(eval.value[col + i], s.deltas[static_cast<std::size_t>(i)], opt.mode);
    out[r].color = composite(s.alphas, s.colors, opt.background, &s.transmittances, &s.residual);
    col += n;
  }
  return out;
}

template <class Field>
RayRender render_ray(const Field& field, const Ray& ray, const std::vector<double>& ts, const RenderOptions& opt) {
  return render_rays(field, std::vector<Ray>{ray}, std::vector<std::vector<double>>{ts}, opt).front();
}

/// Renders the K x K rays of a patch with stratified samples over the full
/// ray interval.
template <class Field>
Patch render_patch(const Field& field, const CameraPose& pose, const PatchSpec& spec, int k, int n_samples, Rng& rng,
                   const RenderOptions& opt, const SceneBounds& scene) {
  const auto rays = generate_rays(pose, patch_pixel_coords(spec, k, pose.width, pose.height), scene);
  std::vector<std::vector<double>> ts;
  ts.reserve(rays.size());
  for (const auto& r : rays) ts.push_back(stratified_samples(r, n_samples, &rng));
  const auto renders = render_rays(field, rays, ts, opt);
  Patch patch(k);
  for (std::size_t r = 0; r < renders.size(); ++r)
    for (int c = 0; c < 3; ++c) patch.pixels[r * 3 + c] = renders[r].color[c];
  return patch;
}

// ---------------------------------------------------------------------------
// Differentiable rendering through the neural field

/// Forward state of a rendered patch, kept for the backward pass. Every ray
/// carries the same number of samples.
template <class Real>
struct PatchRender {
  std::vector<Ray> rays;
  std::vector<std::vector<double>> ts;
  int samples_per_ray = 0;
  typename ConditionalField<Real>::Cache cache;
  std::vector<RaySampleBatch> batches;
  Patch patch;
};

template <class Real>
PatchRender<Real> render_patch_forward(const ConditionalField<Real>& net, const ParameterStore<Real>& params,
                                       const LatentCodes& codes, std::vector<Ray> rays,
                                       std::vector<std::vector<double>> ts, int k, const RenderOptions& opt) {
  require(rays.size() == static_cast<std::size_t>(k) * k && ts.size() == rays.size(),
          "render_patch_forward: need K*K rays with samples");
  PatchRender<Real> out;
  out.samples_per_ray = static_cast<int>(ts.front().size());
  const Eigen::Index n = out.samples_per_ray;
  const auto total = static_cast<Eigen::Index>(rays.size()) * n;
  nn::Matrix<Real> xs(3, total), ds(3, total);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    detail::check_ts(rays[r], ts[r]);
    require(static_cast<Eigen::Index>(ts[r].size()) == n, "render_patch_forward: ragged sample counts");
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(r) * n + i;
      xs.col(c) = rays[r].at(ts[r][static_cast<std::size_t>(i)]).template cast<Real>();
      ds.col(c) = rays[r].dir.template cast<Real>();
    }
  }
  net.forward(params, xs, ds, codes, out.cache);
  if (!out.cache.logit.allFinite() || !out.cache.rgb.allFinite())
    throw EvaluationError("render: non-finite field output");

  out.patch = Patch(k);
  out.batches.resize(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    auto& s = out.batches[r];
    s.ts = ts[r];
    s.deltas = sample_deltas(ts[r], rays[r].t_far);
    s.alphas.resize(static_cast<std::size_t>(n));
    s.colors.resize(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(r) * n + i;
      const double logit = static_cast<double>(out.cache.logit(0, c));
      const double value = opt.mode == AlphaMode::occupancy ? static_cast<double>(out.cache.occupancy(0, c))
                                                            : nn::log1pexp(logit);
      s.alphas[static_cast<std::size_t>(i)] = alpha_from(value, s.deltas[static_cast<std::size_t>(i)], opt.mode);
      s.colors.col(i) = out.cache.rgb.col(c).template cast<double>();
    }
    const Eigen::Vector3d color = composite(s.alphas, s.colors, opt.background, &s.transmittances, &s.residual);
    for (int ch = 0; ch < 3; ++ch) out.patch.pixels[r * 3 + ch] = color[ch];
  }
  out.rays = std::move(rays);
  out.ts = std::move(ts);
  return out;
}

/// Accumulates the parameter gradient of <d_pixels, patch> into `grad`.
template <class Real>
void render_patch_backward(const ConditionalField<Real>& net, const ParameterStore<Real>& params,
                           const PatchRender<Real>& fwd, const std::vector<double>& d_pixels, const RenderOptions& opt,
                           ParameterStore<Real>& grad, FieldInputGrads* inputs = nullptr) {
  require(d_pixels.size() == fwd.patch.pixels.size(), "render_patch_backward: gradient size mismatch");
  const Eigen::Index n = fwd.samples_per_ray;
  const auto total = static_cast<Eigen::Index>(fwd.rays.size()) * n;
  nn::Matrix<Real> d_logit(1, total), d_rgb(3, total);
  std::vector<double> d_alpha;
  Eigen::Matrix3Xd d_colors;
  for (std::size_t r = 0; r < fwd.rays.size(); ++r) {
    const auto& s = fwd.batches[r];
    const Eigen::Vector3d dc(d_pixels[r * 3], d_pixels[r * 3 + 1], d_pixels[r * 3 + 2]);
    composite_backward(s.alphas, s.colors, opt.background, s.transmittances, dc, d_alpha, d_colors);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(r) * n + i;
      const double logit = static_cast<double>(fwd.cache.logit(0, c));
      const double occ = nn::sigmoid(logit);
      double dl = 0.0;
      if (opt.mode == AlphaMode::occupancy) {
        dl = d_alpha[static_cast<std::size_t>(i)] * occ * (1.0 - occ);
      } else {
        const double delta = s.deltas[static_cast<std::size_t>(i)];
        const double sigma = nn::log1pexp(logit);
        dl = delta > 0.0 ? d_alpha[static_cast<std::size_t>(i)] * delta * std::exp(-sigma * delta) * occ : 0.0;
      }
      d_logit(0, c) = static_cast<Real>(dl);
      d_rgb.col(c) = d_colors.col(i).template cast<Real>();
    }
  }
  net.backward(params, fwd.cache, d_logit, &d_rgb, grad, inputs);
}

}  // namespace gen3d
