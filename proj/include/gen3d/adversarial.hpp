#pragma once

// Adversarial objective and alternating training.
//
//   L_adv(theta, phi) = E f(-D(real)) + E f(D(G(z, xi, nu))),  f(x) = -log(1 + exp(-x))
//   phi   <- ascent on  L_adv - lambda * R1
//   theta <- descent on E f(D(G)) + gamma * L_smooth
//
// D is driven towards negative logits on real patches and positive logits on
// generated ones.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "gen3d/camera.hpp"
#include "gen3d/diffcore.hpp"
#include "gen3d/discriminator.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/field.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"
#include "gen3d/surface.hpp"

namespace gen3d {

/// -log(1 + exp(-x)), stable for any finite x.
inline double f_nonsat(double x) { return -nn::log1pexp(-x); }

/// f'(x) = sigmoid(-x).
inline double f_nonsat_d1(double x) { return nn::sigmoid(-x); }

struct AdversarialLosses {
  double l_adv = 0.0;   // E f(-D(real)) + E f(D(fake))
  double g_loss = 0.0;  // generator objective (theta-dependent part)
};

namespace detail {

inline double mean_of(const std::vector<double>& v, double (*fn)(double)) {
  double s = 0.0;
  for (double x : v) s += fn(x);
  return s / static_cast<double>(v.size());
}

inline double f_of_neg(double x) { return f_nonsat(-x); }

}  // namespace detail

/// Batch-mean losses from discriminator logits. With `nonsat_flip` the
/// generator maximizes E f(-D(fake)) instead of minimizing E f(D(fake)).
inline AdversarialLosses adversarial_losses(const std::vector<double>& real_logits,
                                            const std::vector<double>& fake_logits, bool nonsat_flip = false) {
  require(!real_logits.empty() && !fake_logits.empty(), "adversarial_losses: empty batch");
  AdversarialLosses out;
  const double fake_term = detail::mean_of(fake_logits, f_nonsat);
  out.l_adv = detail::mean_of(real_logits, detail::f_of_neg) + fake_term;
  out.g_loss = nonsat_flip ? -detail::mean_of(fake_logits, detail::f_of_neg) : fake_term;
  return out;
}

/// d g_loss / d fake_logit_b.
inline double generator_logit_gradient(double fake_logit, std::size_t batch, bool nonsat_flip) {
  const double g = nonsat_flip ? nn::sigmoid(fake_logit) : f_nonsat_d1(fake_logit);
  return g / static_cast<double>(batch);
}

/// Mean squared input-gradient norm of D on real patches, with its gradient
/// with respect to phi.
template <class Disc>
GradientRecord<typename Disc::Store::value_type> r1_penalty(const Disc& disc, const typename Disc::Store& phi,
                                                            const std::vector<Patch>& real) {
  require(!real.empty(), "r1_penalty: empty batch");
  GradientRecord<typename Disc::Store::value_type> rec(phi);
  rec.loss_value = disc.r1(phi, real, 1.0, &rec.grads);
  return rec;
}

struct DiscriminatorStats {
  double l_adv = 0.0;
  double r1 = 0.0;
  double objective = 0.0;  // l_adv - lambda * r1
  double mean_real_logit = 0.0;
  double mean_fake_logit = 0.0;
};

/// Gradient of L_adv - lambda * R1 with respect to phi. Fake patches are
/// plain pixel values, so nothing flows back to the generator.
template <class Disc>
GradientRecord<typename Disc::Store::value_type> discriminator_objective(const Disc& disc,
                                                                         const typename Disc::Store& phi,
                                                                         const std::vector<Patch>& real,
                                                                         const std::vector<Patch>& fake, double lambda,
                                                                         DiscriminatorStats* stats = nullptr) {
  require(!real.empty() && !fake.empty(), "discriminator_objective: empty batch");
  require(lambda >= 0.0, "discriminator_objective: lambda must be >= 0");
  GradientRecord<typename Disc::Store::value_type> rec(phi);
  const auto lr = disc.logits(phi, real);
  const auto lf = disc.logits(phi, fake);
  const auto losses = adversarial_losses(lr, lf);

  std::vector<double> d_real(lr.size()), d_fake(lf.size());
  for (std::size_t b = 0; b < lr.size(); ++b) d_real[b] = -f_nonsat_d1(-lr[b]) / static_cast<double>(lr.size());
  for (std::size_t b = 0; b < lf.size(); ++b) d_fake[b] = f_nonsat_d1(lf[b]) / static_cast<double>(lf.size());
  disc.backward(phi, real, d_real, &rec.grads, nullptr);
  disc.backward(phi, fake, d_fake, &rec.grads, nullptr);
  double r1 = 0.0;
  if (lambda > 0.0)
    r1 = disc.r1(phi, real, -lambda, &rec.grads);
  else
    r1 = disc.r1(phi, real, 0.0, nullptr);
  rec.loss_value = losses.l_adv - lambda * r1;
  if (stats != nullptr) {
    stats->l_adv = losses.l_adv;
    stats->r1 = r1;
    stats->objective = rec.loss_value;
    stats->mean_real_logit = std::accumulate(lr.begin(), lr.end(), 0.0) / static_cast<double>(lr.size());
    stats->mean_fake_logit = std::accumulate(lf.begin(), lf.end(), 0.0) / static_cast<double>(lf.size());
  }
  return rec;
}

/// One plain gradient-ascent step on L_adv - lambda * R1.
template <class Disc>
typename Disc::Store discriminator_step(const Disc& disc, const typename Disc::Store& phi,
                                        const std::vector<Patch>& real, const std::vector<Patch>& fake, double lambda,
                                        double lr_d, DiscriminatorStats* stats = nullptr) {
  auto rec = discriminator_objective(disc, phi, real, fake, lambda, stats);
  rec.check_finite("discriminator step");
  return sgd_update(phi, rec, lr_d, Direction::ascent);
}

// ---------------------------------------------------------------------------
// Generator side

/// Everything random about one generated patch, drawn up front so the
/// generator loss is a deterministic function of theta.
struct GeneratorSample {
  LatentCodes codes;
  CameraPose pose;
  PatchSpec spec;
  std::vector<Ray> rays;
  std::vector<std::vector<double>> ts;
  std::vector<Eigen::Vector3d> surface;  // smoothness anchors (held constant)
  std::vector<Eigen::Vector3d> eps;
  std::size_t hits = 0;
};

struct SamplerConfig {
  CameraConfig camera;
  PatchConfig patch;
  SceneBounds scene;
  SurfaceSearch search;
  IntervalSchedule schedule;
  int samples_per_ray = 64;
  double eps_scale = 0.01;
  std::size_t smooth_max_points = 1024;
};

/// Draws latents, camera, patch, per-ray samples inside the current interval
/// around the first surface hit, and smoothness perturbations.
template <class Real>
GeneratorSample draw_generator_sample(const ConditionalField<Real>& net, const ParameterStore<Real>& theta,
                                      const SamplerConfig& cfg, long iteration, Rng& rng) {
  GeneratorSample s;
  const auto& fc = net.config();
  s.codes = sample_latents(rng, fc.d_s, fc.d_a);
  s.pose = sample_camera(rng, cfg.camera);
  s.spec = sample_patch_spec(rng, cfg.patch, cfg.camera.width, cfg.camera.height);
  s.rays = generate_rays(s.pose, patch_pixel_coords(s.spec, cfg.patch.size, cfg.camera.width, cfg.camera.height),
                         cfg.scene);
  const NeuralField<Real> field(net, theta, s.codes);
  const auto hits = find_surface_intersections(field, s.rays, cfg.search);
  const double delta = interval_width(cfg.schedule, iteration);
  s.ts.reserve(s.rays.size());
  for (std::size_t r = 0; r < s.rays.size(); ++r) {
    s.ts.push_back(place_samples(s.rays[r], hits[r], delta, cfg.samples_per_ray, &rng));
    if (!hits[r]) continue;
    ++s.hits;
    if (s.surface.size() < cfg.smooth_max_points) s.surface.push_back(s.rays[r].at(*hits[r]));
  }
  s.eps = sample_perturbations(rng, s.surface.size(), cfg.eps_scale);
  return s;
}

template <class Real>
PatchRender<Real> render_generator_sample(const ConditionalField<Real>& net, const ParameterStore<Real>& theta,
                                          const GeneratorSample& s, int k, const RenderOptions& opt) {
  return render_patch_forward(net, theta, s.codes, s.rays, s.ts, k, opt);
}

struct GeneratorStats {
  double adv = 0.0;     // generator adversarial loss
  double smooth = 0.0;  // batch mean of per-sample smoothness sums
  double total = 0.0;   // adv + gamma * smooth
  double mean_fake_logit = 0.0;
  std::size_t smooth_points = 0;
  std::size_t smooth_skipped = 0;
};

/// Value and theta-gradient of E f(D(G)) + gamma * L_smooth on frozen
/// samples. `renders` may carry forward passes already made at this theta.
template <class Real, class Disc>
GradientRecord<Real> generator_objective(const ConditionalField<Real>& net, const ParameterStore<Real>& theta,
                                         const Disc& disc, const typename Disc::Store& phi,
                                         const std::vector<GeneratorSample>& samples, double gamma,
                                         const RenderOptions& opt, bool nonsat_flip,
                                         std::vector<PatchRender<std::type_identity_t<Real>>>* renders = nullptr,
                                         GeneratorStats* stats = nullptr) {
  require(!samples.empty(), "generator_objective: empty batch");
  require(gamma >= 0.0, "generator_objective: gamma must be >= 0");
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(samples.front().rays.size()))));
  std::vector<PatchRender<Real>> local;
  if (renders == nullptr || renders->size() != samples.size()) {
    local.reserve(samples.size());
    for (const auto& s : samples) local.push_back(render_generator_sample(net, theta, s, k, opt));
    renders = &local;
  }
  std::vector<Patch> fake;
  fake.reserve(samples.size());
  for (const auto& r : *renders) fake.push_back(r.patch);

  GradientRecord<Real> rec(theta);
  const auto logits = disc.logits(phi, fake);
  const auto losses = adversarial_losses(logits, logits, nonsat_flip);
  std::vector<double> d_logits(logits.size());
  for (std::size_t b = 0; b < logits.size(); ++b)
    d_logits[b] = generator_logit_gradient(logits[b], logits.size(), nonsat_flip);
  std::vector<std::vector<double>> d_pixels;
  disc.backward(phi, fake, d_logits, nullptr, &d_pixels);
  for (std::size_t b = 0; b < samples.size(); ++b)
    render_patch_backward(net, theta, (*renders)[b], d_pixels[b], opt, rec.grads);

  double smooth = 0.0;
  std::size_t points = 0, skipped = 0;
  const double weight = gamma / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto res = smoothness_with_gradient(net, theta, s.codes.z_s, s.surface, s.eps, weight, rec.grads);
    smooth += res.loss;
    points += res.points;
    skipped += res.skipped;
  }
  smooth /= static_cast<double>(samples.size());
  rec.loss_value = losses.g_loss + gamma * smooth;
  if (stats != nullptr) {
    stats->adv = losses.g_loss;
    stats->smooth = smooth;
    stats->total = rec.loss_value;
    stats->mean_fake_logit = std::accumulate(logits.begin(), logits.end(), 0.0) / static_cast<double>(logits.size());
    stats->smooth_points = points;
    stats->smooth_skipped = skipped;
  }
  return rec;
}

/// One plain gradient-descent step on the generator objective.
template <class Real, class Disc>
ParameterStore<Real> generator_step(const ConditionalField<Real>& net, const ParameterStore<Real>& theta,
                                    const Disc& disc, const typename Disc::Store& phi,
                                    const std::vector<GeneratorSample>& samples, double gamma, double lr_g,
                                    const RenderOptions& opt, bool nonsat_flip = false,
                                    GeneratorStats* stats = nullptr) {
  auto rec = generator_objective(net, theta, disc, phi, samples, gamma, opt, nonsat_flip, nullptr, stats);
  rec.check_finite("generator step");
  return sgd_update(theta, rec, lr_g, Direction::descent);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  FieldConfig field;
  DiscriminatorConfig disc;
  SamplerConfig sampler;
  RenderOptions render;
  OptimizerConfig optimizer;
  double lambda_r1 = 10.0;
  double gamma = 0.01;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  int batch = 8;
  long iterations = 2000;
  long checkpoint_every = 500;
  bool nonsat_flip = false;
  std::uint64_t seed = 0;

  void validate() const {
    field.validate();
    disc.validate();
    sampler.schedule.validate();
    require(disc.patch_size == sampler.patch.size, "train: discriminator input must match the patch size");
    require(lambda_r1 >= 0.0 && gamma >= 0.0, "train: lambda and gamma must be >= 0");
    require(std::isfinite(lr_g) && std::isfinite(lr_d) && lr_g >= 0.0 && lr_d >= 0.0,
            "train: learning rates must be finite and >= 0");
    require(batch >= 1, "train: batch must be >= 1");
    require(iterations >= 0 && checkpoint_every >= 1, "train: iterations >= 0 and checkpoint_every >= 1 required");
    require(sampler.samples_per_ray >= 2, "train: need at least two samples per ray");
    require(sampler.eps_scale >= 0.0, "train: eps_scale must be >= 0");
  }
};

/// A source of real training patches.
struct RealPatchSource {
  std::size_t count = 0;
  std::function<Patch(Rng&)> sample;
};

struct MetricsRow {
  long iter = 0;
  double loss_d = 0.0;  // L_adv seen by the discriminator step
  double loss_g = 0.0;  // generator adversarial loss
  double r1 = 0.0;
  double smooth = 0.0;
  double delta = 0.0;
};

inline constexpr const char* kMetricsHeader = "iter,loss_d,loss_g,r1,smooth,delta";

inline std::string format_metrics_row(const MetricsRow& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g", m.iter, m.loss_d, m.loss_g, m.r1, m.smooth, m.delta);
  return buf;
}

struct TrainResult {
  ParameterStore<float> theta;
  ParameterStore<float> phi;
  std::vector<MetricsRow> metrics;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, const char* what, long iter) {
  char name[64];
  std::snprintf(name, sizeof name, "%s_%06ld.ckpt", what, iter);
  return dir / "checkpoints" / name;
}

namespace detail {

[[noreturn]] inline void abort_training(const std::filesystem::path& out_dir, long iter, const std::string& what,
                                        const MetricsRow& row) {
  std::ofstream dump(out_dir / "diagnostics.txt");
  dump << "iteration " << iter << "\nerror " << what << "\n" << kMetricsHeader << "\n" << format_metrics_row(row) << "\n";
  throw EvaluationError("training aborted at iteration " + std::to_string(iter) + ": " + what);
}

inline void save_pair(const std::filesystem::path& out_dir, long iter, const ParameterStore<float>& theta,
                      const ParameterStore<float>& phi) {
  write_checkpoint(checkpoint_path(out_dir, "generator", iter), theta);
  write_checkpoint(checkpoint_path(out_dir, "discriminator", iter), phi);
}

}  // namespace detail

/// Alternating single D and G steps. Writes metrics.csv, periodic checkpoints
/// under checkpoints/, and generator.ckpt / discriminator.ckpt at the end.
/// Deterministic for a fixed seed.
inline TrainResult train(const TrainConfig& cfg, const RealPatchSource& data, const std::filesystem::path& out_dir,
                         std::ostream* log = nullptr) {
  cfg.validate();
  require(data.count >= 1 && data.sample, "train: dataset is empty");
  std::filesystem::create_directories(out_dir / "checkpoints");

  Rng master(cfg.seed);
  const ConditionalField<float> net(cfg.field);
  const ConvDiscriminator<float> disc(cfg.disc);
  TrainResult res;
  res.theta = net.geometric_sphere_init(master.next_u64());
  res.phi = disc.init(master.next_u64());
  Optimizer<float> opt_g(cfg.optimizer, cfg.lr_g, Direction::descent);
  Optimizer<float> opt_d(cfg.optimizer, cfg.lr_d, Direction::ascent);

  std::ofstream metrics(out_dir / "metrics.csv");
  if (!metrics) throw IoError("cannot write metrics log in " + out_dir.string());
  metrics << kMetricsHeader << '\n';
  detail::save_pair(out_dir, 0, res.theta, res.phi);

  for (long it = 0; it < cfg.iterations; ++it) {
    Rng rng(master.next_u64());
    MetricsRow row;
    row.iter = it;
    row.delta = interval_width(cfg.sampler.schedule, it);

    std::vector<GeneratorSample> samples;
    std::vector<PatchRender<float>> renders;
    std::vector<Patch> fake, real;
    for (int b = 0; b < cfg.batch; ++b) {
      samples.push_back(draw_generator_sample(net, res.theta, cfg.sampler, it, rng));
      renders.push_back(render_generator_sample(net, res.theta, samples.back(), cfg.sampler.patch.size, cfg.render));
      fake.push_back(renders.back().patch);
    }
    for (int b = 0; b < cfg.batch; ++b) real.push_back(data.sample(rng));

    // Discriminator: ascent on L_adv - lambda R1 with the fakes detached.
    DiscriminatorStats ds;
    try {
      auto rec = discriminator_objective(disc, res.phi, real, fake, cfg.lambda_r1, &ds);
      row.loss_d = ds.l_adv;
      row.r1 = ds.r1;
      rec.check_finite("discriminator step");
      res.phi = opt_d.step(res.phi, rec);
    } catch (const EvaluationError& e) {
      detail::abort_training(out_dir, it, e.what(), row);
    }

    // Generator: descent on E f(D(G)) + gamma L_smooth. Theta has not moved,
    // so the forward renders above are still valid.
    GeneratorStats gs;
    try {
      auto rec = generator_objective(net, res.theta, disc, res.phi, samples, cfg.gamma, cfg.render, cfg.nonsat_flip,
                                     &renders, &gs);
      row.loss_g = gs.adv;
      row.smooth = gs.smooth;
      rec.check_finite("generator step");
      res.theta = opt_g.step(res.theta, rec);
    } catch (const EvaluationError& e) {
      detail::abort_training(out_dir, it, e.what(), row);
    }
    if (!res.theta.all_finite() || !res.phi.all_finite())
      detail::abort_training(out_dir, it, "non-finite parameters after update", row);

    metrics << format_metrics_row(row) << '\n';
    res.metrics.push_back(row);
    if (log != nullptr && (it % 50 == 0 || it + 1 == cfg.iterations))
      *log << "iter " << it << "  loss_d " << row.loss_d << "  loss_g " << row.loss_g << "  r1 " << row.r1
           << "  smooth " << row.smooth << "  delta " << row.delta << '\n';
    if ((it + 1) % cfg.checkpoint_every == 0) detail::save_pair(out_dir, it + 1, res.theta, res.phi);
  }
  metrics.flush();
  write_checkpoint(out_dir / "generator.ckpt", res.theta);
  write_checkpoint(out_dir / "discriminator.ckpt", res.phi);
  return res;
}

}  // namespace gen3d
