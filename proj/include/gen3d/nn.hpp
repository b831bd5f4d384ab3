#pragma once

// Dense layers and smooth activations with hand-written reverse mode.
//
// Every layer supports two backward flavours:
//  * plain reverse mode: parameter gradients of sum_p w_p * out_p;
//  * forward-over-reverse: the directional derivative of those parameter
//    gradients when the network input moves along a tangent. This gives
//    exact gradients of losses that depend on input gradients (surface
//    normals, the R1 penalty) without a general autodiff engine.

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "gen3d/diffcore.hpp"

namespace gen3d::nn {

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

template <class Real>
inline Real sigmoid(Real z) {
  if (z >= Real(0)) return Real(1) / (Real(1) + std::exp(-z));
  const Real e = std::exp(z);
  return e / (Real(1) + e);
}

/// log(1 + exp(z)) without overflow.
template <class Real>
inline Real log1pexp(Real z) {
  return z > Real(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// softplus_beta(z) = log(1 + exp(beta z)) / beta. Tends to relu as beta grows.
struct Softplus {
  double beta = 100.0;

  template <class Real>
  Real value(Real z) const {
    const Real b = static_cast<Real>(beta);
    return log1pexp(b * z) / b;
  }
  template <class Real>
  Real d1(Real z) const {
    return sigmoid(static_cast<Real>(beta) * z);
  }
  template <class Real>
  Real d2(Real z) const {
    const Real s = sigmoid(static_cast<Real>(beta) * z);
    return static_cast<Real>(beta) * s * (Real(1) - s);
  }

  // Elementwise over matrices, vectorized.
  template <class Real>
  Matrix<Real> values(const Matrix<Real>& z) const {
    const Real b = static_cast<Real>(beta);
    const auto t = (b * z.array()).eval();
    return ((t.max(Real(0)) + (-t.abs()).exp().log1p()) / b).matrix();
  }
  template <class Real>
  Matrix<Real> d1s(const Matrix<Real>& z) const {
    return (static_cast<Real>(beta) * z.array()).logistic().matrix();
  }
  template <class Real>
  Matrix<Real> d2s(const Matrix<Real>& z) const {
    const auto s = (static_cast<Real>(beta) * z.array()).logistic().eval();
    return (static_cast<Real>(beta) * s * (Real(1) - s)).matrix();
  }
};

/// slope*z + (1 - slope)*softplus_beta(z): a leaky relu with a rounded kink,
/// so input gradients are continuous in the parameters.
struct SmoothLeakyRelu {
  double slope = 0.2;
  double beta = 10.0;

  template <class Real>
  Real value(Real z) const {
    return static_cast<Real>(slope) * z + static_cast<Real>(1.0 - slope) * Softplus{beta}.value(z);
  }
  template <class Real>
  Real d1(Real z) const {
    return static_cast<Real>(slope) + static_cast<Real>(1.0 - slope) * Softplus{beta}.d1(z);
  }
  template <class Real>
  Real d2(Real z) const {
    return static_cast<Real>(1.0 - slope) * Softplus{beta}.d2(z);
  }

  template <class Real>
  Matrix<Real> values(const Matrix<Real>& z) const {
    return static_cast<Real>(slope) * z + static_cast<Real>(1.0 - slope) * Softplus{beta}.values(z);
  }
  template <class Real>
  Matrix<Real> d1s(const Matrix<Real>& z) const {
    return (static_cast<Real>(slope) + static_cast<Real>(1.0 - slope) * Softplus{beta}.d1s(z).array()).matrix();
  }
  template <class Real>
  Matrix<Real> d2s(const Matrix<Real>& z) const {
    return static_cast<Real>(1.0 - slope) * Softplus{beta}.d2s(z);
  }
};

template <class Real, class Act>
Matrix<Real> activate(const Act& act, const Matrix<Real>& z) {
  return act.values(z);
}
template <class Real, class Act>
Matrix<Real> activate_d1(const Act& act, const Matrix<Real>& z) {
  return act.d1s(z);
}
template <class Real, class Act>
Matrix<Real> activate_d2(const Act& act, const Matrix<Real>& z) {
  return act.d2s(z);
}

/// An affine map bound by name to two segments of a ParameterStore:
/// `<name>.weight` (out x in, row-major) and `<name>.bias` (out).
template <class Real>
class Dense {
 public:
  using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Dense() = default;
  Dense(std::string name, int in, int out) : name_(std::move(name)), in_(in), out_(out) {}

  int in() const noexcept { return in_; }
  int out() const noexcept { return out_; }
  std::string weight_name() const { return name_ + ".weight"; }
  std::string bias_name() const { return name_ + ".bias"; }

  void declare(ParameterStore<Real>& store) const {
    store.add_segment(weight_name(), static_cast<std::size_t>(in_) * out_);
    store.add_segment(bias_name(), static_cast<std::size_t>(out_));
  }

  Eigen::Map<const RowMajor> weight(const ParameterStore<Real>& s) const {
    return Eigen::Map<const RowMajor>(s.segment(weight_name()).data(), out_, in_);
  }
  Eigen::Map<RowMajor> weight(ParameterStore<Real>& s) const {
    return Eigen::Map<RowMajor>(s.segment(weight_name()).data(), out_, in_);
  }
  Eigen::Map<const Vector<Real>> bias(const ParameterStore<Real>& s) const {
    return Eigen::Map<const Vector<Real>>(s.segment(bias_name()).data(), out_);
  }
  Eigen::Map<Vector<Real>> bias(ParameterStore<Real>& s) const {
    return Eigen::Map<Vector<Real>>(s.segment(bias_name()).data(), out_);
  }

  /// Z = W H + b (columns are samples).
  Matrix<Real> forward(const ParameterStore<Real>& s, const Matrix<Real>& h) const {
    Matrix<Real> z(out_, h.cols());
    z.noalias() = weight(s) * h;
    z.colwise() += bias(s);
    return z;
  }

  /// Tangent of Z for an input tangent (parameters held fixed).
  Matrix<Real> forward_tangent(const ParameterStore<Real>& s, const Matrix<Real>& h_dot) const {
    Matrix<Real> z(out_, h_dot.cols());
    z.noalias() = weight(s) * h_dot;
    return z;
  }

  /// dW += dZ H^T, db += rowsum(dZ).
  void accumulate(ParameterStore<Real>& grad, const Matrix<Real>& dz, const Matrix<Real>& h) const {
    weight(grad).noalias() += dz * h.transpose();
    bias(grad) += dz.rowwise().sum();
  }

  /// Tangent of the parameter gradient: dW_dot += dZ_dot H^T + dZ H_dot^T.
  void accumulate_tangent(ParameterStore<Real>& grad, const Matrix<Real>& dz, const Matrix<Real>& dz_dot,
                          const Matrix<Real>& h, const Matrix<Real>& h_dot) const {
    auto w = weight(grad);
    w.noalias() += dz_dot * h.transpose();
    w.noalias() += dz * h_dot.transpose();
    bias(grad) += dz_dot.rowwise().sum();
  }

  /// dH = W^T dZ.
  Matrix<Real> backprop(const ParameterStore<Real>& s, const Matrix<Real>& dz) const {
    Matrix<Real> dh(in_, dz.cols());
    dh.noalias() = weight(s).transpose() * dz;
    return dh;
  }

 private:
  std::string name_;
  int in_ = 0;
  int out_ = 0;
};

}  // namespace gen3d::nn
