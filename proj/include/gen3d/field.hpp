#pragma once

// Conditional occupancy/radiance field.
//
//   trunk : [enc(x), z_s] -> softplus MLP -> h            (occupancy branch)
//   occ   : h -> logit,  occupancy = sigmoid(logit)
//   color : [h, enc(d), z_a] -> softplus layer -> sigmoid -> rgb
//
// Occupancy is computed from the trunk alone, so it cannot depend on the
// view direction or the appearance code.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gen3d/diffcore.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/nn.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

struct FieldConfig {
  int d_s = 64;
  int d_a = 64;
  int width = 128;
  int depth = 4;
  int color_width = 64;
  int freq_x = 8;
  int freq_d = 4;
  double init_sphere_radius = 0.5;
  /// Slope of the initial logit across the sphere surface, per scene unit.
  double init_sharpness = 10.0;
  double softplus_beta = 100.0;

  void validate() const {
    require(d_s >= 1 && d_a >= 1, "field: latent dims must be >= 1");
    require(width >= 1 && depth >= 1 && color_width >= 1, "field: layer sizes must be >= 1");
    require(freq_x >= 0 && freq_d >= 0, "field: frequency counts must be >= 0");
    require(init_sphere_radius > 0.0, "field: init_sphere_radius must be > 0");
    require(init_sharpness > 0.0 && softplus_beta > 0.0, "field: sharpness and beta must be > 0");
  }

  bool operator==(const FieldConfig&) const = default;
};

/// Shape and appearance codes.
struct LatentCodes {
  Eigen::VectorXd z_s;
  Eigen::VectorXd z_a;
};

struct FieldInput {
  Eigen::Vector3d x;
  Eigen::Vector3d d;
};

struct FieldSample {
  Eigen::Vector3d color;
  double occupancy = 0.0;
};

/// Per-point field values for a batch: `value` is occupancy (or density in
/// density mode), `color` is 3 x P.
struct FieldEval {
  Eigen::VectorXd value;
  Eigen::Matrix3Xd color;
};

/// alpha = 1 - exp(-sigma * delta).
inline double sigma_to_alpha(double sigma, double delta) {
  require(sigma >= 0.0, "sigma_to_alpha: sigma must be non-negative");
  require(delta > 0.0, "sigma_to_alpha: delta must be positive");
  return -std::expm1(-sigma * delta);
}

/// i.i.d. standard normal codes.
inline LatentCodes sample_latents(Rng& rng, int d_s, int d_a) {
  require(d_s >= 1 && d_a >= 1, "sample_latents: dims must be >= 1");
  LatentCodes c{Eigen::VectorXd(d_s), Eigen::VectorXd(d_a)};
  for (int i = 0; i < d_s; ++i) c.z_s[i] = rng.normal();
  for (int i = 0; i < d_a; ++i) c.z_a[i] = rng.normal();
  return c;
}

namespace detail {

/// [x, sin(2^k pi x), cos(2^k pi x)]_k, coordinates innermost.
template <class Real>
nn::Matrix<Real> encode(const nn::Matrix<Real>& x, int freqs) {
  nn::Matrix<Real> out(3 + 6 * freqs, x.cols());
  out.topRows(3) = x;
  for (int k = 0; k < freqs; ++k) {
    const Real w = static_cast<Real>(std::ldexp(std::numbers::pi, k));
    out.middleRows(3 + 6 * k, 3) = (w * x.array()).sin().matrix();
    out.middleRows(6 + 6 * k, 3) = (w * x.array()).cos().matrix();
  }
  return out;
}

/// Tangent of encode(x) along u.
template <class Real>
nn::Matrix<Real> encode_tangent(const nn::Matrix<Real>& x, const nn::Matrix<Real>& u, int freqs) {
  nn::Matrix<Real> out(3 + 6 * freqs, x.cols());
  out.topRows(3) = u;
  for (int k = 0; k < freqs; ++k) {
    const Real w = static_cast<Real>(std::ldexp(std::numbers::pi, k));
    out.middleRows(3 + 6 * k, 3) = (w * (w * x.array()).cos() * u.array()).matrix();
    out.middleRows(6 + 6 * k, 3) = (-w * (w * x.array()).sin() * u.array()).matrix();
  }
  return out;
}

/// Pulls a gradient on encode(x) back onto x.
template <class Real>
nn::Matrix<Real> encode_backward(const nn::Matrix<Real>& x, const nn::Matrix<Real>& d_enc, int freqs) {
  nn::Matrix<Real> dx = d_enc.topRows(3);
  for (int k = 0; k < freqs; ++k) {
    const Real w = static_cast<Real>(std::ldexp(std::numbers::pi, k));
    dx.array() += w * (w * x.array()).cos() * d_enc.middleRows(3 + 6 * k, 3).array();
    dx.array() -= w * (w * x.array()).sin() * d_enc.middleRows(6 + 6 * k, 3).array();
  }
  return dx;
}

template <class Real>
nn::Matrix<Real> broadcast(const Eigen::VectorXd& v, Eigen::Index cols) {
  return v.cast<Real>().replicate(1, cols);
}

/// Quasi-uniform unit directions (Fibonacci lattice).
inline Eigen::Vector3d fibonacci_direction(int i, int n) {
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double z = 1.0 - (2.0 * i + 1.0) / n;
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(golden * i), r * std::sin(golden * i), z};
}

}  // namespace detail

/// Gradients of a batch loss with respect to the field inputs.
struct FieldInputGrads {
  Eigen::Matrix3Xd dx;
  Eigen::VectorXd dz_s;
  Eigen::VectorXd dz_a;
};

template <class Real>
class ConditionalField {
 public:
  using Store = ParameterStore<Real>;
  using Mat = nn::Matrix<Real>;

  /// Activations of one batched forward pass, kept for backward.
  struct Cache {
    Mat x;                       // 3 x P
    Mat h0;                      // trunk input
    std::vector<Mat> z;          // trunk pre-activations
    std::vector<Mat> h;          // trunk activations
    Mat logit;                   // 1 x P
    Mat occupancy;               // 1 x P
    Mat c0, zc, hc, rgb;         // color head
    bool has_color = false;
  };

  explicit ConditionalField(FieldConfig cfg) : cfg_(cfg), act_{cfg.softplus_beta} {
    cfg_.validate();
    const int in0 = enc_x_dim() + cfg_.d_s;
    for (int l = 0; l < cfg_.depth; ++l)
      trunk_.emplace_back("trunk." + std::to_string(l), l == 0 ? in0 : cfg_.width, cfg_.width);
    occ_ = nn::Dense<Real>("occupancy", cfg_.width, 1);
    color0_ = nn::Dense<Real>("color.0", cfg_.width + enc_d_dim() + cfg_.d_a, cfg_.color_width);
    color1_ = nn::Dense<Real>("color.1", cfg_.color_width, 3);
  }

  const FieldConfig& config() const noexcept { return cfg_; }
  int enc_x_dim() const noexcept { return 3 + 6 * cfg_.freq_x; }
  int enc_d_dim() const noexcept { return 3 + 6 * cfg_.freq_d; }

  /// Store with this network's layout and all values zero.
  Store make_store() const {
    Store s;
    for (const auto& l : trunk_) l.declare(s);
    occ_.declare(s);
    color0_.declare(s);
    color1_.declare(s);
    return s;
  }

  void check_codes(const LatentCodes& codes) const {
    require(codes.z_s.size() == cfg_.d_s && codes.z_a.size() == cfg_.d_a,
            "latent code dimensions do not match the field config");
    require(codes.z_s.allFinite() && codes.z_a.allFinite(), "latent codes must be finite");
  }

  // -------------------------------------------------------------------------
  // Forward / backward over a batch of points sharing one set of codes.

  void forward(const Store& p, const Mat& x, const Mat& d, const LatentCodes& codes, Cache& c,
               bool with_color = true) const {
    check_codes(codes);
    forward_trunk(p, x, codes.z_s, c);
    c.has_color = with_color;
    if (!with_color) return;
    const Eigen::Index n = x.cols();
    c.c0.resize(color0_.in(), n);
    c.c0.topRows(cfg_.width) = c.h.back();
    c.c0.middleRows(cfg_.width, enc_d_dim()) = detail::encode<Real>(d, cfg_.freq_d);
    c.c0.bottomRows(cfg_.d_a) = detail::broadcast<Real>(codes.z_a, n);
    c.zc = color0_.forward(p, c.c0);
    c.hc = nn::activate<Real>(act_, c.zc);
    c.rgb = color1_.forward(p, c.hc).unaryExpr([](Real v) { return nn::sigmoid(v); });
  }

  /// Accumulates into `grad` the parameter gradient of
  /// sum_p d_logit[p] * logit[p] + <d_rgb[:,p], rgb[:,p]>.
  void backward(const Store& p, const Cache& c, const Mat& d_logit, const Mat* d_rgb, Store& grad,
                FieldInputGrads* inputs = nullptr) const {
    Mat dh = occ_.backprop(p, d_logit);
    occ_.accumulate(grad, d_logit, c.h.back());
    Mat dc0;
    if (d_rgb != nullptr) {
      require(c.has_color, "field backward: color gradient requested without color forward");
      const Mat dz1 = (d_rgb->array() * c.rgb.array() * (Real(1) - c.rgb.array())).matrix();
      color1_.accumulate(grad, dz1, c.hc);
      const Mat dzc = (color1_.backprop(p, dz1).array() * nn::activate_d1<Real>(act_, c.zc).array()).matrix();
      color0_.accumulate(grad, dzc, c.c0);
      dc0 = color0_.backprop(p, dzc);
      dh += dc0.topRows(cfg_.width);
    }
    const Mat dh0 = backward_trunk(p, c, std::move(dh), grad);
    if (inputs != nullptr) {
      inputs->dx = detail::encode_backward<Real>(c.x, dh0.topRows(enc_x_dim()), cfg_.freq_x).template cast<double>();
      inputs->dz_s = dh0.bottomRows(cfg_.d_s).rowwise().sum().template cast<double>();
      inputs->dz_a = d_rgb != nullptr ? Eigen::VectorXd(dc0.bottomRows(cfg_.d_a).rowwise().sum().template cast<double>())
                                      : Eigen::VectorXd::Zero(cfg_.d_a);
    }
  }

  // -------------------------------------------------------------------------
  // Occupancy-only queries.

  /// Occupancy logits (1 x P).
  Mat logits(const Store& p, const Mat& x, const Eigen::VectorXd& z_s) const {
    Cache c;
    forward_trunk(p, x, z_s, c);
    return c.logit;
  }

  /// Gradient of the occupancy logit with respect to x (3 x P).
  Mat logit_gradient(const Store& p, const Mat& x, const Eigen::VectorXd& z_s, Mat* logit_out = nullptr) const {
    Cache c;
    forward_trunk(p, x, z_s, c);
    Mat dh = occ_.backprop(p, Mat::Ones(1, x.cols()));
    const Mat dh0 = backprop_trunk_inputs(p, c, std::move(dh));
    if (logit_out != nullptr) *logit_out = c.logit;
    return detail::encode_backward<Real>(c.x, dh0.topRows(enc_x_dim()), cfg_.freq_x);
  }

  /// Accumulates sum_p u_p . d(grad_x logit(x_p))/d(theta) into `grad`:
  /// the vector-Jacobian product of the map theta -> grad_x logit.
  void logit_gradient_vjp(const Store& p, const Mat& x, const Mat& u, const Eigen::VectorXd& z_s,
                          Store& grad) const {
    const Eigen::Index n = x.cols();
    Mat h = input_matrix(x, z_s);
    Mat h_dot = Mat::Zero(h.rows(), n);
    h_dot.topRows(enc_x_dim()) = detail::encode_tangent<Real>(x, u, cfg_.freq_x);

    std::vector<Mat> hs{h}, hs_dot{h_dot}, zs, zs_dot;
    for (const auto& layer : trunk_) {
      zs.push_back(layer.forward(p, hs.back()));
      zs_dot.push_back(layer.forward_tangent(p, hs_dot.back()));
      hs.push_back(nn::activate<Real>(act_, zs.back()));
      hs_dot.push_back((nn::activate_d1<Real>(act_, zs.back()).array() * zs_dot.back().array()).matrix());
    }
    // Output cotangent is 1 per point and has no tangent.
    const Mat ones = Mat::Ones(1, n);
    occ_.accumulate_tangent(grad, ones, Mat::Zero(1, n), hs.back(), hs_dot.back());
    Mat dh = occ_.backprop(p, ones);
    Mat dh_dot = Mat::Zero(cfg_.width, n);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      const Mat a1 = nn::activate_d1<Real>(act_, zs[l]);
      const Mat a2 = nn::activate_d2<Real>(act_, zs[l]);
      const Mat dz = (a1.array() * dh.array()).matrix();
      const Mat dz_dot = (a2.array() * zs_dot[l].array() * dh.array() + a1.array() * dh_dot.array()).matrix();
      trunk_[l].accumulate_tangent(grad, dz, dz_dot, hs[l], hs_dot[l]);
      if (l > 0) {
        dh = trunk_[l].backprop(p, dz);
        dh_dot = trunk_[l].backprop(p, dz_dot);
      }
    }
  }

  // -------------------------------------------------------------------------
  // Initialization

  /// Parameters whose 0.5-level set is (approximately) a sphere of
  /// init_sphere_radius for every shape code.
  ///
  /// First-layer units see only the raw position, along quasi-uniform
  /// directions u_j: h_j ~ relu(u_j . x). Deeper trunk layers start near the
  /// identity, so sum_j h_j ~ (W/4)|x|. The occupancy head maps that to
  /// sharpness * (r - |x|); its bias is then calibrated on the sphere.
  /// Encoding and shape-code columns start at zero.
  Store geometric_sphere_init(std::uint64_t rng_seed) const {
    Rng rng(rng_seed);
    Store s = make_store();
    const int w = cfg_.width;

    const Eigen::Quaterniond q(Eigen::Vector4d(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized());
    const Eigen::Matrix3d rot = q.toRotationMatrix();
    auto w0 = trunk_[0].weight(s);
    for (int j = 0; j < w; ++j) {
      const Eigen::Vector3d dir = rot * detail::fibonacci_direction(j, w);
      for (int c = 0; c < 3; ++c) w0(j, c) = static_cast<Real>(dir[c]);
    }
    const double noise = 0.01 / std::sqrt(static_cast<double>(w));
    for (int l = 1; l < cfg_.depth; ++l) {
      auto wl = trunk_[l].weight(s);
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) wl(i, j) = static_cast<Real>((i == j ? 1.0 : 0.0) + noise * rng.normal());
    }
    occ_.weight(s).setConstant(static_cast<Real>(-cfg_.init_sharpness * 4.0 / w));
    occ_.bias(s)[0] = static_cast<Real>(cfg_.init_sharpness * cfg_.init_sphere_radius);

    fan_in_init(color0_, s, rng);
    fan_in_init(color1_, s, rng);

    // Shift the logit so that it vanishes on average over the target sphere.
    const int probes = 512;
    Mat pts(3, probes);
    for (int i = 0; i < probes; ++i)
      pts.col(i) = (cfg_.init_sphere_radius * detail::fibonacci_direction(i, probes)).cast<Real>();
    const Mat l = logits(s, pts, Eigen::VectorXd::Zero(cfg_.d_s));
    occ_.bias(s)[0] -= l.mean();
    return s;
  }

 private:
  Mat input_matrix(const Mat& x, const Eigen::VectorXd& z_s) const {
    require(z_s.size() == cfg_.d_s, "shape code dimension does not match the field config");
    Mat h(enc_x_dim() + cfg_.d_s, x.cols());
    h.topRows(enc_x_dim()) = detail::encode<Real>(x, cfg_.freq_x);
    h.bottomRows(cfg_.d_s) = detail::broadcast<Real>(z_s, x.cols());
    return h;
  }

  void forward_trunk(const Store& p, const Mat& x, const Eigen::VectorXd& z_s, Cache& c) const {
    c.x = x;
    c.h0 = input_matrix(x, z_s);
    c.z.clear();
    c.h.clear();
    const Mat* in = &c.h0;
    for (const auto& layer : trunk_) {
      c.z.push_back(layer.forward(p, *in));
      c.h.push_back(nn::activate<Real>(act_, c.z.back()));
      in = &c.h.back();
    }
    c.logit = occ_.forward(p, c.h.back());
    c.occupancy = c.logit.unaryExpr([](Real v) { return nn::sigmoid(v); });
  }

  Mat backward_trunk(const Store& p, const Cache& c, Mat dh, Store& grad) const {
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      const Mat dz = (nn::activate_d1<Real>(act_, c.z[l]).array() * dh.array()).matrix();
      trunk_[l].accumulate(grad, dz, l == 0 ? c.h0 : c.h[l - 1]);
      dh = trunk_[l].backprop(p, dz);
    }
    return dh;
  }

  Mat backprop_trunk_inputs(const Store& p, const Cache& c, Mat dh) const {
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      const Mat dz = (nn::activate_d1<Real>(act_, c.z[l]).array() * dh.array()).matrix();
      dh = trunk_[l].backprop(p, dz);
    }
    return dh;
  }

  static void fan_in_init(const nn::Dense<Real>& layer, Store& s, Rng& rng) {
    auto w = layer.weight(s);
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = static_cast<Real>(scale * rng.normal());
  }

  FieldConfig cfg_;
  nn::Softplus act_;
  std::vector<nn::Dense<Real>> trunk_;
  nn::Dense<Real> occ_;
  nn::Dense<Real> color0_;
  nn::Dense<Real> color1_;
};

/// Parameters for `cfg` whose initial surfaces are spheres (see
/// ConditionalField::geometric_sphere_init). Always float: training precision.
inline ParameterStore<float> geometric_sphere_init(const FieldConfig& cfg, std::uint64_t rng_seed) {
  return ConditionalField<float>(cfg).geometric_sphere_init(rng_seed);
}

/// Single-point evaluation.
template <class Real>
FieldSample evaluate_field(const ConditionalField<Real>& field, const ParameterStore<Real>& params,
                           const FieldInput& input, const LatentCodes& codes) {
  require(std::abs(input.d.norm() - 1.0) <= 1e-6, "evaluate_field: view direction must be unit length");
  require(input.x.allFinite(), "evaluate_field: position must be finite");
  typename ConditionalField<Real>::Cache c;
  field.forward(params, input.x.cast<Real>(), input.d.cast<Real>(), codes, c);
  FieldSample out;
  out.occupancy = static_cast<double>(c.occupancy(0, 0));
  out.color = c.rgb.col(0).template cast<double>();
  if (!std::isfinite(out.occupancy) || !out.color.allFinite() || !c.logit.allFinite())
    throw EvaluationError("evaluate_field: non-finite activation");
  return out;
}

enum class FieldOutput { occupancy, density };

/// A network, its parameters and one latent pair bound into a field that the
/// rendering, surface and meshing algorithms can query. In density mode the
/// scalar output is softplus(logit) >= 0 and is composited through
/// sigma_to_alpha.
template <class Real>
class NeuralField {
 public:
  NeuralField(const ConditionalField<Real>& net, const ParameterStore<Real>& params, LatentCodes codes,
              FieldOutput output = FieldOutput::occupancy)
      : net_(&net), params_(&params), codes_(std::move(codes)), output_(output) {
    net.check_codes(codes_);
  }

  const ConditionalField<Real>& network() const noexcept { return *net_; }
  const ParameterStore<Real>& params() const noexcept { return *params_; }
  const LatentCodes& codes() const noexcept { return codes_; }
  FieldOutput output() const noexcept { return output_; }

  Eigen::VectorXd occupancy(const Eigen::Matrix3Xd& xs) const {
    const auto l = net_->logits(*params_, xs.cast<Real>(), codes_.z_s);
    Eigen::VectorXd out(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out[i] = nn::sigmoid(static_cast<double>(l(0, i)));
    check(out);
    return out;
  }

  /// softplus(logit), the non-negative density used in density mode.
  Eigen::VectorXd density(const Eigen::Matrix3Xd& xs) const {
    const auto l = net_->logits(*params_, xs.cast<Real>(), codes_.z_s);
    Eigen::VectorXd out(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out[i] = nn::log1pexp(static_cast<double>(l(0, i)));
    check(out);
    return out;
  }

  /// Gradient of occupancy with respect to position (3 x P).
  Eigen::Matrix3Xd occupancy_gradient(const Eigen::Matrix3Xd& xs) const {
    nn::Matrix<Real> l;
    const auto g = net_->logit_gradient(*params_, xs.cast<Real>(), codes_.z_s, &l);
    Eigen::Matrix3Xd out(3, xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const double a = nn::sigmoid(static_cast<double>(l(0, i)));
      out.col(i) = a * (1.0 - a) * g.col(i).template cast<double>();
    }
    if (!out.allFinite()) throw EvaluationError("field gradient is non-finite");
    return out;
  }

  FieldEval evaluate(const Eigen::Matrix3Xd& xs, const Eigen::Matrix3Xd& ds) const {
    typename ConditionalField<Real>::Cache c;
    net_->forward(*params_, xs.cast<Real>(), ds.cast<Real>(), codes_, c);
    FieldEval e;
    e.value.resize(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i)
      e.value[i] = output_ == FieldOutput::occupancy ? static_cast<double>(c.occupancy(0, i))
                                                     : nn::log1pexp(static_cast<double>(c.logit(0, i)));
    e.color = c.rgb.template cast<double>();
    check(e.value);
    if (!e.color.allFinite()) throw EvaluationError("field color is non-finite");
    return e;
  }

 private:
  static void check(const Eigen::VectorXd& v) {
    if (!v.allFinite()) throw EvaluationError("field output is non-finite");
  }

  const ConditionalField<Real>* net_;
  const ParameterStore<Real>* params_;
  LatentCodes codes_;
  FieldOutput output_;
};

}  // namespace gen3d
