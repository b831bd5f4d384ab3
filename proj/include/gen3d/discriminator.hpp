#pragma once

// Patch discriminators.
//
// ConvDiscriminator: pixels are mapped to [-1, 1], then log2(K) stages of
// 4x4 stride-2 convolutions (padding 1) with smooth leaky activations halve
// the spatial extent down to 1x1, and a final linear map produces one logit.
//
// Every discriminator exposes
//   logits(phi, patches)
//   backward(phi, patches, d_logits, grad*, d_inputs*)
//   r1(phi, patches, weight, grad*)      mean squared input-gradient norm
// where r1 accumulates weight * dR1/dphi into grad.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gen3d/diffcore.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/nn.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"

namespace gen3d {

struct DiscriminatorConfig {
  int patch_size = 32;
  std::vector<int> channels{64, 128, 256, 512, 512};
  double leaky_slope = 0.2;
  /// Sharpness of the rounded leaky kink.
  double smoothness = 10.0;

  void validate() const {
    require(patch_size >= 2, "discriminator: patch size must be >= 2");
    require(!channels.empty(), "discriminator: at least one stage required");
    require((patch_size >> channels.size()) == 1 && (patch_size & (patch_size - 1)) == 0,
            "discriminator: stages must reduce the patch size to 1x1 (K = 2^stages)");
    for (int c : channels) require(c >= 1, "discriminator: channel widths must be >= 1");
    require(leaky_slope >= 0.0 && leaky_slope < 1.0, "discriminator: leaky slope must lie in [0, 1)");
    require(smoothness > 0.0, "discriminator: smoothness must be positive");
  }

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// One stage per halving of a K = 2^n patch; widths base * 2^i capped at `cap`.
inline std::vector<int> default_channels(int patch_size, int base = 64, int cap = 512) {
  require(patch_size >= 2 && (patch_size & (patch_size - 1)) == 0, "patch size must be a power of two");
  std::vector<int> ch;
  for (int k = patch_size, c = base; k > 1; k /= 2, c = std::min(cap, 2 * c)) ch.push_back(c);
  return ch;
}

namespace detail {

/// Stacks the patches as a 3 x (B*K*K) matrix, column b*K*K + y*K + x.
template <class Real>
nn::Matrix<Real> patches_to_matrix(const std::vector<Patch>& patches, int k, double scale, double shift) {
  require(!patches.empty(), "discriminator: empty batch");
  const Eigen::Index px = static_cast<Eigen::Index>(k) * k;
  nn::Matrix<Real> m(3, px * static_cast<Eigen::Index>(patches.size()));
  for (std::size_t b = 0; b < patches.size(); ++b) {
    require(patches[b].size == k && patches[b].pixels.size() == static_cast<std::size_t>(px) * 3,
            "discriminator: patch shape does not match K");
    for (Eigen::Index i = 0; i < px; ++i)
      for (int c = 0; c < 3; ++c)
        m(c, static_cast<Eigen::Index>(b) * px + i) =
            static_cast<Real>(scale * patches[b].pixels[static_cast<std::size_t>(i) * 3 + c] + shift);
  }
  return m;
}

template <class Real>
std::vector<std::vector<double>> matrix_to_pixels(const nn::Matrix<Real>& m, std::size_t batch, int k, double scale) {
  const Eigen::Index px = static_cast<Eigen::Index>(k) * k;
  std::vector<std::vector<double>> out(batch, std::vector<double>(static_cast<std::size_t>(px) * 3));
  for (std::size_t b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < px; ++i)
      for (int c = 0; c < 3; ++c)
        out[b][static_cast<std::size_t>(i) * 3 + c] = scale * static_cast<double>(m(c, static_cast<Eigen::Index>(b) * px + i));
  return out;
}

/// 4x4, stride 2, padding 1 patches of a C x (B*H*H) map: (C*16) x (B*(H/2)^2).
template <class Real>
nn::Matrix<Real> im2col(const nn::Matrix<Real>& in, Eigen::Index batch, int h) {
  const int ho = h / 2;
  const Eigen::Index c_in = in.rows();
  nn::Matrix<Real> col = nn::Matrix<Real>::Zero(c_in * 16, batch * ho * ho);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < ho; ++ox) {
        const Eigen::Index oc = b * ho * ho + oy * ho + ox;
        for (int ky = 0; ky < 4; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 4; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= h) continue;
            const Eigen::Index ic = b * h * h + iy * h + ix;
            for (Eigen::Index c = 0; c < c_in; ++c) col(c * 16 + ky * 4 + kx, oc) = in(c, ic);
          }
        }
      }
  return col;
}

/// Adjoint of im2col.
template <class Real>
nn::Matrix<Real> col2im(const nn::Matrix<Real>& col, Eigen::Index c_in, Eigen::Index batch, int h) {
  const int ho = h / 2;
  nn::Matrix<Real> out = nn::Matrix<Real>::Zero(c_in, batch * h * h);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < ho; ++ox) {
        const Eigen::Index oc = b * ho * ho + oy * ho + ox;
        for (int ky = 0; ky < 4; ++ky) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 4; ++kx) {
            const int ix = 2 * ox - 1 + kx;
            if (ix < 0 || ix >= h) continue;
            const Eigen::Index ic = b * h * h + iy * h + ix;
            for (Eigen::Index c = 0; c < c_in; ++c) out(c, ic) += col(c * 16 + ky * 4 + kx, oc);
          }
        }
      }
  return out;
}

}  // namespace detail

template <class Real>
class ConvDiscriminator {
 public:
  using Store = ParameterStore<Real>;
  using Mat = nn::Matrix<Real>;

  explicit ConvDiscriminator(DiscriminatorConfig cfg) : cfg_(std::move(cfg)), act_{cfg_.leaky_slope, cfg_.smoothness} {
    cfg_.validate();
    int c_in = 3;
    for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
      stages_.emplace_back("disc.conv" + std::to_string(s), c_in * 16, cfg_.channels[s]);
      c_in = cfg_.channels[s];
    }
    out_ = nn::Dense<Real>("disc.out", c_in, 1);
  }

  const DiscriminatorConfig& config() const noexcept { return cfg_; }

  Store make_store() const {
    Store s;
    for (const auto& l : stages_) l.declare(s);
    out_.declare(s);
    return s;
  }

  /// Fan-in scaled normal weights, zero biases, zero output layer.
  Store init(std::uint64_t rng_seed) const {
    Rng rng(rng_seed);
    Store s = make_store();
    const double gain = std::sqrt(2.0 / (1.0 + cfg_.leaky_slope * cfg_.leaky_slope));
    for (const auto& l : stages_) {
      auto w = l.weight(s);
      const double scale = gain / std::sqrt(static_cast<double>(l.in()));
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = static_cast<Real>(scale * rng.normal());
    }
    return s;
  }

  std::vector<double> logits(const Store& p, const std::vector<Patch>& patches) const {
    Trace t;
    forward(p, input(patches), static_cast<Eigen::Index>(patches.size()), t);
    return to_vector(t.logits);
  }

  /// Accumulates the gradient of sum_b d_logits[b] * logit_b into `grad`
  /// and/or returns it with respect to the pixels in `d_inputs`.
  void backward(const Store& p, const std::vector<Patch>& patches, const std::vector<double>& d_logits, Store* grad,
                std::vector<std::vector<double>>* d_inputs) const {
    require(d_logits.size() == patches.size(), "discriminator backward: one cotangent per patch");
    Trace t;
    const auto batch = static_cast<Eigen::Index>(patches.size());
    forward(p, input(patches), batch, t);
    const Mat dx = reverse(p, t, row(d_logits), grad);
    if (d_inputs != nullptr) *d_inputs = detail::matrix_to_pixels<Real>(dx, patches.size(), cfg_.patch_size, 2.0);
  }

  /// Mean over the batch of |dD/dpixels|^2. The parameter gradient is exact:
  /// d<g, g>/dphi = 2 d/de [dD(x + e g)/dphi] at e = 0, evaluated by pushing
  /// the tangent g through the forward and reverse passes.
  double r1(const Store& p, const std::vector<Patch>& patches, double weight, Store* grad) const {
    const auto batch = static_cast<Eigen::Index>(patches.size());
    Trace t;
    const Mat x = input(patches);
    forward(p, x, batch, t);
    const Mat dx = reverse(p, t, Mat::Ones(1, batch), nullptr);
    // Pixel-space gradient is 2 dx; its squared norm per patch:
    const double value = 4.0 * static_cast<double>(dx.squaredNorm()) / static_cast<double>(batch);
    if (grad != nullptr && weight != 0.0) {
      // Tangent in the mapped input space: d(2x - 1) = 2 * (2 dx).
      const Mat x_dot = Real(4) * dx;
      tangent_reverse(p, t, x_dot, Mat::Constant(1, batch, static_cast<Real>(2.0 * weight / batch)), *grad);
    }
    return value;
  }

 private:
  struct Trace {
    Eigen::Index batch = 0;
    std::vector<Mat> cols;  // im2col input of each stage
    std::vector<Mat> z;     // pre-activations
    std::vector<Mat> h;     // activations
    Mat logits;
  };

  Mat input(const std::vector<Patch>& patches) const {
    return detail::patches_to_matrix<Real>(patches, cfg_.patch_size, 2.0, -1.0);
  }

  static Mat row(const std::vector<double>& v) {
    Mat m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = static_cast<Real>(v[i]);
    return m;
  }

  static std::vector<double> to_vector(const Mat& m) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.cols(); ++i) v[static_cast<std::size_t>(i)] = static_cast<double>(m(0, i));
    return v;
  }

  void forward(const Store& p, const Mat& x, Eigen::Index batch, Trace& t) const {
    t.batch = batch;
    t.cols.clear();
    t.z.clear();
    t.h.clear();
    const Mat* in = &x;
    int h = cfg_.patch_size;
    for (const auto& l : stages_) {
      t.cols.push_back(detail::im2col<Real>(*in, batch, h));
      t.z.push_back(l.forward(p, t.cols.back()));
      t.h.push_back(nn::activate<Real>(act_, t.z.back()));
      in = &t.h.back();
      h /= 2;
    }
    t.logits = out_.forward(p, t.h.back());
  }

  /// Returns the gradient with respect to the mapped input.
  Mat reverse(const Store& p, const Trace& t, const Mat& d_logits, Store* grad) const {
    if (grad != nullptr) out_.accumulate(*grad, d_logits, t.h.back());
    Mat dh = out_.backprop(p, d_logits);
    int h = 1;
    for (std::size_t s = stages_.size(); s-- > 0;) {
      h *= 2;
      const Mat dz = (nn::activate_d1<Real>(act_, t.z[s]).array() * dh.array()).matrix();
      if (grad != nullptr) stages_[s].accumulate(*grad, dz, t.cols[s]);
      const Eigen::Index c_in = s == 0 ? 3 : cfg_.channels[s - 1];
      dh = detail::col2im<Real>(stages_[s].backprop(p, dz), c_in, t.batch, h);
    }
    return dh;
  }

  /// Directional derivative, along the input tangent x_dot, of the parameter
  /// gradient of sum_b d_logits[b] * logit_b.
  void tangent_reverse(const Store& p, const Trace& t, const Mat& x_dot, const Mat& d_logits, Store& grad) const {
    std::vector<Mat> cols_dot, z_dot, h_dot;
    const Mat* in_dot = &x_dot;
    int h = cfg_.patch_size;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      cols_dot.push_back(detail::im2col<Real>(*in_dot, t.batch, h));
      z_dot.push_back(stages_[s].forward_tangent(p, cols_dot.back()));
      h_dot.push_back((nn::activate_d1<Real>(act_, t.z[s]).array() * z_dot.back().array()).matrix());
      in_dot = &h_dot.back();
      h /= 2;
    }
    out_.accumulate_tangent(grad, d_logits, Mat::Zero(1, t.batch), t.h.back(), h_dot.back());
    Mat dh = out_.backprop(p, d_logits);
    Mat dh_dot = Mat::Zero(dh.rows(), dh.cols());
    h = 1;
    for (std::size_t s = stages_.size(); s-- > 0;) {
      h *= 2;
      const Mat a1 = nn::activate_d1<Real>(act_, t.z[s]);
      const Mat a2 = nn::activate_d2<Real>(act_, t.z[s]);
      const Mat dz = (a1.array() * dh.array()).matrix();
      const Mat dz_dot = (a2.array() * z_dot[s].array() * dh.array() + a1.array() * dh_dot.array()).matrix();
      stages_[s].accumulate_tangent(grad, dz, dz_dot, t.cols[s], cols_dot[s]);
      if (s == 0) break;
      const Eigen::Index c_in = cfg_.channels[s - 1];
      dh = detail::col2im<Real>(stages_[s].backprop(p, dz), c_in, t.batch, h);
      dh_dot = detail::col2im<Real>(stages_[s].backprop(p, dz_dot), c_in, t.batch, h);
    }
  }

  DiscriminatorConfig cfg_;
  nn::SmoothLeakyRelu act_;
  std::vector<nn::Dense<Real>> stages_;
  nn::Dense<Real> out_;
};

/// logit = <w, pixels> + b. Small and exactly analyzable; used as an oracle.
template <class Real>
class LinearDiscriminator {
 public:
  using Store = ParameterStore<Real>;
  using Mat = nn::Matrix<Real>;

  explicit LinearDiscriminator(int patch_size) : k_(patch_size), map_("linear", 3 * patch_size * patch_size, 1) {
    require(patch_size >= 1, "linear discriminator: patch size must be >= 1");
  }

  int patch_size() const noexcept { return k_; }

  Store make_store() const {
    Store s;
    map_.declare(s);
    return s;
  }

  Store init(std::uint64_t rng_seed) const {
    Rng rng(rng_seed);
    Store s = make_store();
    const double scale = 1.0 / std::sqrt(static_cast<double>(map_.in()));
    for (auto& v : s.segment(map_.weight_name())) v = static_cast<Real>(scale * rng.normal());
    return s;
  }

  Eigen::Map<const typename nn::Dense<Real>::RowMajor> weight(const Store& s) const { return map_.weight(s); }
  Eigen::Map<typename nn::Dense<Real>::RowMajor> weight(Store& s) const { return map_.weight(s); }

  std::vector<double> logits(const Store& p, const std::vector<Patch>& patches) const {
    const Mat z = map_.forward(p, flat(patches));
    std::vector<double> v(patches.size());
    for (std::size_t b = 0; b < v.size(); ++b) v[b] = static_cast<double>(z(0, static_cast<Eigen::Index>(b)));
    return v;
  }

  void backward(const Store& p, const std::vector<Patch>& patches, const std::vector<double>& d_logits, Store* grad,
                std::vector<std::vector<double>>* d_inputs) const {
    require(d_logits.size() == patches.size(), "discriminator backward: one cotangent per patch");
    Mat dl(1, static_cast<Eigen::Index>(d_logits.size()));
    for (std::size_t b = 0; b < d_logits.size(); ++b) dl(0, static_cast<Eigen::Index>(b)) = static_cast<Real>(d_logits[b]);
    if (grad != nullptr) map_.accumulate(*grad, dl, flat(patches));
    if (d_inputs != nullptr) {
      const Mat dx = map_.backprop(p, dl);
      d_inputs->assign(patches.size(), std::vector<double>(static_cast<std::size_t>(map_.in())));
      for (std::size_t b = 0; b < patches.size(); ++b)
        for (int i = 0; i < map_.in(); ++i) (*d_inputs)[b][static_cast<std::size_t>(i)] = static_cast<double>(dx(i, static_cast<Eigen::Index>(b)));
    }
  }

  /// |w|^2 for every patch; d/dw = 2w.
  double r1(const Store& p, const std::vector<Patch>& patches, double weight, Store* grad) const {
    require(!patches.empty(), "r1: empty batch");
    const auto w = map_.weight(p);
    if (grad != nullptr) map_.weight(*grad) += static_cast<Real>(2.0 * weight) * w;
    return static_cast<double>(w.squaredNorm());
  }

 private:
  Mat flat(const std::vector<Patch>& patches) const {
    require(!patches.empty(), "discriminator: empty batch");
    Mat m(map_.in(), static_cast<Eigen::Index>(patches.size()));
    for (std::size_t b = 0; b < patches.size(); ++b) {
      require(patches[b].size == k_ && static_cast<int>(patches[b].pixels.size()) == map_.in(),
              "discriminator: patch shape does not match K");
      for (int i = 0; i < map_.in(); ++i) m(i, static_cast<Eigen::Index>(b)) = static_cast<Real>(patches[b].pixels[static_cast<std::size_t>(i)]);
    }
    return m;
  }

  int k_;
  nn::Dense<Real> map_;
};

}  // namespace gen3d
