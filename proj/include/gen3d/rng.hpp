#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace gen3d {

/// Seeded random source shared by every sampling operation. Copyable so a
/// caller can snapshot a stream and replay it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// Uniform direction on the unit sphere.
  Eigen::Vector3d unit_vector() {
    Eigen::Vector3d v;
    do {
      v = Eigen::Vector3d(normal(), normal(), normal());
    } while (v.squaredNorm() < 1e-24);
    return v.normalized();
  }

  /// Independent child stream; used to give each subsystem its own sequence.
  Rng fork() { return Rng(engine_()); }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gen3d
