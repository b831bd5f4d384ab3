#pragma once

// Closed-form occupancy fields. They expose the same batched queries as
// NeuralField, which makes them usable as oracles for rendering, surface
// search and meshing.

#include <cmath>

#include <Eigen/Core>

#include "gen3d/field.hpp"
#include "gen3d/nn.hpp"

namespace gen3d {

/// occupancy = sigmoid(profile(x)) for a signed inside-distance profile.
template <class Profile>
class SigmoidProfileField {
 public:
  explicit SigmoidProfileField(Profile profile, Eigen::Vector3d color = {0.8, 0.3, 0.2})
      : profile_(std::move(profile)), color_(color) {}

  const Profile& profile() const noexcept { return profile_; }

  Eigen::VectorXd occupancy(const Eigen::Matrix3Xd& xs) const {
    Eigen::VectorXd out(xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) out[i] = nn::sigmoid(profile_.value(xs.col(i)));
    return out;
  }

  Eigen::Matrix3Xd occupancy_gradient(const Eigen::Matrix3Xd& xs) const {
    Eigen::Matrix3Xd out(3, xs.cols());
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
      const double a = nn::sigmoid(profile_.value(xs.col(i)));
      out.col(i) = a * (1.0 - a) * profile_.gradient(xs.col(i));
    }
    return out;
  }

  FieldEval evaluate(const Eigen::Matrix3Xd& xs, const Eigen::Matrix3Xd& /*ds*/) const {
    FieldEval e;
    e.value = occupancy(xs);
    e.color = color_.replicate(1, xs.cols());
    return e;
  }

 private:
  Profile profile_;
  Eigen::Vector3d color_;
};

/// sharpness * (radius - |x - center|)
struct SphereProfile {
  double radius = 0.5;
  double sharpness = 10.0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  double value(const Eigen::Vector3d& x) const { return sharpness * (radius - (x - center).norm()); }
  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const {
    const Eigen::Vector3d r = x - center;
    const double n = r.norm();
    return n > 0.0 ? Eigen::Vector3d(-sharpness * r / n) : Eigen::Vector3d::Zero();
  }
};

/// Torus around the z axis: sharpness * (tube - dist(x, circle of major radius)).
struct TorusProfile {
  double major = 0.5;
  double tube = 0.2;
  double sharpness = 10.0;

  double value(const Eigen::Vector3d& x) const {
    const double q = std::hypot(x.x(), x.y()) - major;
    return sharpness * (tube - std::hypot(q, x.z()));
  }
  Eigen::Vector3d gradient(const Eigen::Vector3d& x) const {
    const double rxy = std::hypot(x.x(), x.y());
    const double q = rxy - major;
    const double d = std::hypot(q, x.z());
    if (d == 0.0 || rxy == 0.0) return Eigen::Vector3d::Zero();
    const Eigen::Vector3d dd(q / d * x.x() / rxy, q / d * x.y() / rxy, x.z() / d);
    return -sharpness * dd;
  }
};

/// slope * (axis . x - offset): a half-space with constant normals.
struct PlaneProfile {
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  double offset = 0.0;
  double slope = 1.0;

  double value(const Eigen::Vector3d& x) const { return slope * (axis.dot(x) - offset); }
  Eigen::Vector3d gradient(const Eigen::Vector3d&) const { return slope * axis; }
};

using SphereField = SigmoidProfileField<SphereProfile>;
using TorusField = SigmoidProfileField<TorusProfile>;
using PlaneField = SigmoidProfileField<PlaneProfile>;

/// The same occupancy and color everywhere.
class ConstantField {
 public:
  explicit ConstantField(double occupancy, Eigen::Vector3d color = {0.5, 0.5, 0.5})
      : occupancy_(occupancy), color_(color) {}

  Eigen::VectorXd occupancy(const Eigen::Matrix3Xd& xs) const {
    return Eigen::VectorXd::Constant(xs.cols(), occupancy_);
  }
  Eigen::Matrix3Xd occupancy_gradient(const Eigen::Matrix3Xd& xs) const {
    return Eigen::Matrix3Xd::Zero(3, xs.cols());
  }
  FieldEval evaluate(const Eigen::Matrix3Xd& xs, const Eigen::Matrix3Xd&) const {
    return {occupancy(xs), color_.replicate(1, xs.cols())};
  }

 private:
  double occupancy_;
  Eigen::Vector3d color_;
};

inline SphereField make_sphere_field(double radius, double sharpness, Eigen::Vector3d color = {0.8, 0.3, 0.2}) {
  return SphereField(SphereProfile{radius, sharpness, Eigen::Vector3d::Zero()}, color);
}

}  // namespace gen3d
