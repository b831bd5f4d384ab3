#pragma once

// Frechet distance between feature statistics of patch sets, patch
// embedders and latent interpolation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "gen3d/errors.hpp"
#include "gen3d/field.hpp"
#include "gen3d/rendering.hpp"

namespace gen3d {

using Embedder = std::function<Eigen::VectorXd(const Patch&)>;

/// Area-averaged grayscale thumbnail of side `grid`, flattened row-major.
/// Gray is the mean of the three channels.
inline Embedder downsample_embedder(int grid = 8) {
  require(grid >= 1, "downsample_embedder: grid must be >= 1");
  return [grid](const Patch& p) {
    require(p.size >= 1, "embedder: empty patch");
    const int k = p.size;
    // Overlap of source pixel [i, i+1) with target cell [j, j+1) * k / grid.
    auto weights = [&](int i, int j) {
      const double lo = std::max<double>(i, static_cast<double>(j) * k / grid);
      const double hi = std::min<double>(i + 1, static_cast<double>(j + 1) * k / grid);
      return std::max(0.0, hi - lo);
    };
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid) * grid);
    const double cell_area = static_cast<double>(k) * k / (static_cast<double>(grid) * grid);
    for (int gy = 0; gy < grid; ++gy)
      for (int gx = 0; gx < grid; ++gx) {
        double acc = 0.0;
        for (int y = 0; y < k; ++y) {
          const double wy = weights(y, gy);
          if (wy == 0.0) continue;
          for (int x = 0; x < k; ++x) {
            const double wx = weights(x, gx);
            if (wx == 0.0) continue;
            acc += wx * wy * (p.at(x, y, 0) + p.at(x, y, 1) + p.at(x, y, 2)) / 3.0;
          }
        }
        out[gy * grid + gx] = acc / cell_area;
      }
    return out;
  };
}

inline std::vector<Eigen::VectorXd> embed_patches(const std::vector<Patch>& patches, const Embedder& embedder) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(patches.size());
  for (const auto& p : patches) {
    require(p.size == patches.front().size, "embed_patches: patches must share one size");
    out.push_back(embedder(p));
  }
  return out;
}

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  std::size_t count = 0;

  void validate() const {
    require(count >= 2, "feature stats: need at least two samples");
    require(covariance.rows() == mean.size() && covariance.cols() == mean.size(), "feature stats: shape mismatch");
    require((covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, covariance.cwiseAbs().maxCoeff()),
            "feature stats: covariance must be symmetric");
  }
};

/// Sample mean and unbiased covariance.
inline FeatureStats feature_stats(const std::vector<Eigen::VectorXd>& features) {
  require(features.size() >= 2, "feature_stats: need at least two samples");
  const Eigen::Index d = features.front().size();
  FeatureStats s;
  s.count = features.size();
  s.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : features) {
    require(f.size() == d, "feature_stats: features must share one dimension");
    s.mean += f;
  }
  s.mean /= static_cast<double>(s.count);
  s.covariance = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : features) {
    const Eigen::VectorXd c = f - s.mean;
    s.covariance.noalias() += c * c.transpose();
  }
  s.covariance /= static_cast<double>(s.count - 1);
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

namespace detail {

/// Eigenvalues of a symmetric matrix that should be PSD; slightly negative
/// ones (within tol relative to the largest magnitude) become 0.
inline Eigen::VectorXd psd_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8 * scale) throw EvaluationError(std::string(what) + " is indefinite beyond tolerance");
    out[i] = std::max(0.0, ev[i]);
  }
  return out;
}

}  // namespace detail

/// |mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a C_b)^(1/2)).
/// tr (C_a C_b)^(1/2) is computed as the sum of square roots of the
/// eigenvalues of the symmetric matrix C_a^(1/2) C_b C_a^(1/2).
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  require(a.mean.size() == b.mean.size(), "frechet_distance: dimension mismatch");
  require(a.covariance.rows() == a.mean.size() && b.covariance.rows() == b.mean.size() &&
              a.covariance.cols() == a.mean.size() && b.covariance.cols() == b.mean.size(),
          "frechet_distance: covariance shape mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a.covariance + a.covariance.transpose()));
  const Eigen::VectorXd la = detail::psd_eigenvalues(ea.eigenvalues(), "first covariance");
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  detail::psd_eigenvalues(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(b.covariance, Eigen::EigenvaluesOnly).eigenvalues(),
                          "second covariance");
  Eigen::MatrixXd m = sqrt_a * b.covariance * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lm = detail::psd_eigenvalues(em.eigenvalues(), "covariance product");
  const double tr_sqrt = lm.cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

enum class Freeze { none, shape, appearance };

inline Freeze parse_freeze(const std::string& s) {
  if (s == "none") return Freeze::none;
  if (s == "shape") return Freeze::shape;
  if (s == "appearance") return Freeze::appearance;
  throw ContractError("--freeze must be shape, appearance or none (got '" + s + "')");
}

/// z(t_i) = (1 - t_i) a + t_i b with t_i = i / (steps - 1), per code. A
/// frozen code keeps a's value throughout.
inline std::vector<LatentCodes> interpolate_codes(const LatentCodes& a, const LatentCodes& b, int steps,
                                                  Freeze freeze = Freeze::none) {
  require(steps >= 2, "interpolate_codes: steps must be >= 2");
  require(a.z_s.size() == b.z_s.size() && a.z_a.size() == b.z_a.size(), "interpolate_codes: dimension mismatch");
  std::vector<LatentCodes> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    LatentCodes c;
    c.z_s = freeze == Freeze::shape ? a.z_s : Eigen::VectorXd((1.0 - t) * a.z_s + t * b.z_s);
    c.z_a = freeze == Freeze::appearance ? a.z_a : Eigen::VectorXd((1.0 - t) * a.z_a + t * b.z_a);
    if (i == steps - 1) {
      if (freeze != Freeze::shape) c.z_s = b.z_s;
      if (freeze != Freeze::appearance) c.z_a = b.z_a;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace gen3d
