#pragma once

// Registered finite-difference checks for every differentiated loss term,
// run in double precision on small networks.

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gen3d/adversarial.hpp"
#include "gen3d/camera.hpp"
#include "gen3d/diffcore.hpp"
#include "gen3d/discriminator.hpp"
#include "gen3d/field.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"
#include "gen3d/surface.hpp"

namespace gen3d {

struct GradCheckSettings {
  std::size_t coordinates = 64;
  double step = 1e-4;
  double threshold = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  FdReport report;
  double seconds = 0.0;
  bool passed = false;
  std::string error;  // set when the check itself failed to run
};

namespace detail {

/// Small problem shared by all checks: field, discriminator and one batch of
/// frozen generator samples.
struct GradCheckFixture {
  FieldConfig field_cfg;
  DiscriminatorConfig disc_cfg;
  SamplerConfig sampler;
  RenderOptions render;
  ConditionalField<double> net;
  ConvDiscriminator<double> disc;
  ParameterStore<double> theta;
  ParameterStore<double> phi;
  std::vector<GeneratorSample> samples;
  std::vector<Patch> real;

  static FieldConfig small_field() {
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

  static DiscriminatorConfig small_disc() {
    DiscriminatorConfig c;
    c.patch_size = 4;
    c.channels = {4, 6};
    return c;
  }

  explicit GradCheckFixture(std::uint64_t seed)
      : field_cfg(small_field()), disc_cfg(small_disc()), net(field_cfg), disc(disc_cfg) {
    Rng rng(seed);
    theta = net.geometric_sphere_init(rng.next_u64());
    phi = disc.init(rng.next_u64());
    // Away from the initial point so no term is trivially zero.
    for (auto& v : theta.values()) v += 0.05 * rng.normal();
    for (auto& v : phi.values()) v += 0.1 * rng.normal();

    sampler.camera.width = 16;
    sampler.camera.height = 16;
    sampler.patch = {disc_cfg.patch_size, 0.5, 1.0};
    sampler.samples_per_ray = 6;
    sampler.schedule = {1.0, 0.2, 1e-3, 0};
    sampler.eps_scale = 0.05;
    sampler.smooth_max_points = 16;
    for (int b = 0; b < 2; ++b) samples.push_back(draw_generator_sample(net, theta, sampler, 0, rng));
    for (int b = 0; b < 3; ++b) {
      Patch p(disc_cfg.patch_size);
      for (auto& v : p.pixels) v = rng.uniform();
      real.push_back(std::move(p));
    }
  }
};

inline DiffObjective rendering_objective(const GradCheckFixture& fx, AlphaMode mode, std::uint64_t seed) {
  RenderOptions opt = fx.render;
  opt.mode = mode;
  const auto& s = fx.samples.front();
  Rng rng(seed);
  std::vector<double> w(static_cast<std::size_t>(fx.disc_cfg.patch_size) * fx.disc_cfg.patch_size * 3);
  for (auto& v : w) v = rng.normal();
  auto render = [&fx, &s, opt](const ParameterStore<double>& th) {
    return render_patch_forward(fx.net, th, s.codes, s.rays, s.ts, fx.disc_cfg.patch_size, opt);
  };
  return {[render, w](const ParameterStore<double>& th) {
            const auto r = render(th);
            double acc = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * r.patch.pixels[i];
            return acc;
          },
          [render, w, &fx, opt](const ParameterStore<double>& th) {
            const auto r = render(th);
            GradientRecord<double> rec(th);
            render_patch_backward(fx.net, th, r, w, opt, rec.grads);
            return rec;
          }};
}

inline DiffObjective generator_adv_objective(const GradCheckFixture& fx, double gamma, bool flip) {
  auto g = [&fx, gamma, flip](const ParameterStore<double>& th) {
    return generator_objective(fx.net, th, fx.disc, fx.phi, fx.samples, gamma, fx.render, flip);
  };
  return {[g](const ParameterStore<double>& th) { return g(th).loss_value; }, g};
}

inline DiffObjective discriminator_adv_objective(const GradCheckFixture& fx, double lambda) {
  std::vector<Patch> fake;
  for (const auto& s : fx.samples)
    fake.push_back(render_generator_sample(fx.net, fx.theta, s, fx.disc_cfg.patch_size, fx.render).patch);
  auto g = [&fx, fake, lambda](const ParameterStore<double>& ph) {
    return discriminator_objective(fx.disc, ph, fx.real, fake, lambda);
  };
  return {[g](const ParameterStore<double>& ph) { return g(ph).loss_value; }, g};
}

inline DiffObjective r1_objective(const GradCheckFixture& fx) {
  return {[&fx](const ParameterStore<double>& ph) { return fx.disc.r1(ph, fx.real, 0.0, nullptr); },
          [&fx](const ParameterStore<double>& ph) { return r1_penalty(fx.disc, ph, fx.real); }};
}

/// Value from normalized occupancy gradients of the field view; gradient from
/// the batched logit-gradient VJP.
inline DiffObjective smoothness_objective(const GradCheckFixture& fx) {
  const auto& s = fx.samples.front();
  return {[&fx, &s](const ParameterStore<double>& th) {
            const NeuralField<double> field(fx.net, th, s.codes);
            return smoothness_at_points(field, s.surface, s.eps).loss;
          },
          [&fx, &s](const ParameterStore<double>& th) {
            GradientRecord<double> rec(th);
            rec.loss_value = smoothness_with_gradient(fx.net, th, s.codes.z_s, s.surface, s.eps, 1.0, rec.grads).loss;
            return rec;
          }};
}

}  // namespace detail

using GradCheckCase = std::pair<std::string, std::function<DiffObjective(const detail::GradCheckFixture&)>>;

/// Names and builders of every registered check.
inline std::vector<GradCheckCase> registered_grad_checks() {
  using F = const detail::GradCheckFixture&;
  return {
      {"render.occupancy", [](F fx) { return detail::rendering_objective(fx, AlphaMode::occupancy, 11); }},
      {"render.density", [](F fx) { return detail::rendering_objective(fx, AlphaMode::density, 12); }},
      {"generator.adversarial", [](F fx) { return detail::generator_adv_objective(fx, 0.0, false); }},
      {"generator.adversarial_flip", [](F fx) { return detail::generator_adv_objective(fx, 0.0, true); }},
      {"generator.total", [](F fx) { return detail::generator_adv_objective(fx, 0.5, false); }},
      {"discriminator.adversarial", [](F fx) { return detail::discriminator_adv_objective(fx, 0.0); }},
      {"discriminator.total", [](F fx) { return detail::discriminator_adv_objective(fx, 10.0); }},
      {"discriminator.r1", [](F fx) { return detail::r1_objective(fx); }},
      {"smoothness", [](F fx) { return detail::smoothness_objective(fx); }},
  };
}

/// Checks on the discriminator perturb phi; all others perturb theta.
inline std::vector<GradCheckResult> run_grad_checks(const GradCheckSettings& s = {}) {
  const detail::GradCheckFixture fx(s.seed);
  std::vector<GradCheckResult> out;
  std::uint64_t probe_seed = s.seed * 1000 + 1;
  for (const auto& [name, build] : registered_grad_checks()) {
    GradCheckResult r;
    r.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto obj = build(fx);
      const bool on_phi = name.rfind("discriminator.", 0) == 0;
      r.report = finite_difference_check(obj, on_phi ? fx.phi : fx.theta, s.step, s.coordinates, probe_seed++);
      r.passed = r.report.max_rel_error < s.threshold && r.report.probes >= std::min(s.coordinates, (on_phi ? fx.phi : fx.theta).total_len());
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gen3d
